#include "evolve/kernels.hpp"

// NEON lane for aarch64. float64x2_t carries two doubles per vector.

#if defined(__aarch64__) || defined(_M_ARM64)
#define EVOLVE_HAVE_NEON_BUILD 1
#else
#define EVOLVE_HAVE_NEON_BUILD 0
#endif

#if EVOLVE_HAVE_NEON_BUILD

#include <arm_neon.h>

#include <algorithm>
#include <cmath>

namespace evolve::kernels {

namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  }
  double total = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

double sum_neon(const double* a, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double total = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) total += a[i];
  return total;
}

double max_neon(const double* a, std::size_t n) {
  std::size_t i = 0;
  double m = a[0];
  if (n >= 2) {
    float64x2_t vm = vld1q_f64(a);
    for (i = 2; i + 2 <= n; i += 2) vm = vmaxq_f64(vm, vld1q_f64(a + i));
    m = std::max(vgetq_lane_f64(vm, 0), vgetq_lane_f64(vm, 1));
  }
  for (; i < n; ++i) {
    if (a[i] > m) m = a[i];
  }
  return m;
}

// No vfmaq: mul+add matches the scalar lane bit for bit.
void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vy = vld1q_f64(y + i);
    vy = vaddq_f64(vy, vmulq_f64(va, vld1q_f64(x + i)));
    vst1q_f64(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_neon(double alpha, double* x, std::size_t n) {
  float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(x + i, vmulq_f64(va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void sgd_update_neon(double lr, const double* g, double* theta,
                     std::size_t n) {
  float64x2_t vlr = vdupq_n_f64(lr);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vt = vld1q_f64(theta + i);
    vt = vsubq_f64(vt, vmulq_f64(vlr, vld1q_f64(g + i)));
    vst1q_f64(theta + i, vt);
  }
  for (; i < n; ++i) theta[i] -= lr * g[i];
}

void adam_update_neon(double lr_t, double beta1, double beta2, double eps,
                      const double* g, double* m, double* v, double* theta,
                      std::size_t n) {
  const float64x2_t vb1 = vdupq_n_f64(beta1);
  const float64x2_t vb2 = vdupq_n_f64(beta2);
  const float64x2_t vo1 = vdupq_n_f64(1.0 - beta1);
  const float64x2_t vo2 = vdupq_n_f64(1.0 - beta2);
  const float64x2_t vlr = vdupq_n_f64(lr_t);
  const float64x2_t veps = vdupq_n_f64(eps);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vg = vld1q_f64(g + i);
    float64x2_t vm = vld1q_f64(m + i);
    float64x2_t vv = vld1q_f64(v + i);
    vm = vaddq_f64(vmulq_f64(vb1, vm), vmulq_f64(vo1, vg));
    vv = vaddq_f64(vmulq_f64(vb2, vv), vmulq_f64(vo2, vmulq_f64(vg, vg)));
    float64x2_t denom = vaddq_f64(vsqrtq_f64(vv), veps);
    float64x2_t step = vdivq_f64(vmulq_f64(vlr, vm), denom);
    float64x2_t vt = vsubq_f64(vld1q_f64(theta + i), step);
    vst1q_f64(m + i, vm);
    vst1q_f64(v + i, vv);
    vst1q_f64(theta + i, vt);
  }
  const double om1 = 1.0 - beta1;
  const double om2 = 1.0 - beta2;
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + om1 * g[i];
    v[i] = beta2 * v[i] + om2 * (g[i] * g[i]);
    theta[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
  }
}

constexpr KernelTable kNeonTable = {
    dot_neon,    sum_neon,        max_neon,         axpy_neon,
    scale_neon,  sgd_update_neon, adam_update_neon, "neon",
};

}  // namespace

// NEON is architecturally guaranteed on aarch64.
const KernelTable* neon_table() { return &kNeonTable; }

}  // namespace evolve::kernels

#else

namespace evolve::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace evolve::kernels

#endif
