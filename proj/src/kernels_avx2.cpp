#include "evolve/kernels.hpp"

// AVX2 lane. This translation unit is compiled with -mavx2 and only ever
// entered through the dispatch table after a runtime CPU check.

#if defined(__x86_64__) || defined(_M_X64)
#define EVOLVE_HAVE_AVX2_BUILD 1
#else
#define EVOLVE_HAVE_AVX2_BUILD 0
#endif

#if EVOLVE_HAVE_AVX2_BUILD

#include <immintrin.h>

#include <cmath>

namespace evolve::kernels {

namespace {

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d va = _mm256_loadu_pd(a + i);
    __m256d vb = _mm256_loadu_pd(b + i);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
  }
  double total = hsum(acc);
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  }
  double total = hsum(acc);
  for (; i < n; ++i) total += a[i];
  return total;
}

double max_avx2(const double* a, std::size_t n) {
  std::size_t i = 0;
  double m = a[0];
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(a);
    for (i = 4; i + 4 <= n; i += 4) {
      vm = _mm256_max_pd(vm, _mm256_loadu_pd(a + i));
    }
    __m128d lo = _mm256_castpd256_pd128(vm);
    __m128d hi = _mm256_extractf128_pd(vm, 1);
    lo = _mm_max_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    m = _mm_cvtsd_f64(_mm_max_sd(lo, shuf));
  }
  for (; i < n; ++i) {
    if (a[i] > m) m = a[i];
  }
  return m;
}

// mul+add rather than fmadd: keeps results bit-identical to the scalar
// lane, which rounds the product before the addition.
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    __m256d vx = _mm256_loadu_pd(x + i);
    vy = _mm256_add_pd(vy, _mm256_mul_pd(va, vx));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(double alpha, double* x, std::size_t n) {
  __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void sgd_update_avx2(double lr, const double* g, double* theta,
                     std::size_t n) {
  __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vt = _mm256_loadu_pd(theta + i);
    __m256d vg = _mm256_loadu_pd(g + i);
    vt = _mm256_sub_pd(vt, _mm256_mul_pd(vlr, vg));
    _mm256_storeu_pd(theta + i, vt);
  }
  for (; i < n; ++i) theta[i] -= lr * g[i];
}

void adam_update_avx2(double lr_t, double beta1, double beta2, double eps,
                      const double* g, double* m, double* v, double* theta,
                      std::size_t n) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d vo1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d vo2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d vlr = _mm256_set1_pd(lr_t);
  const __m256d veps = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vg = _mm256_loadu_pd(g + i);
    __m256d vm = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    vm = _mm256_add_pd(_mm256_mul_pd(vb1, vm), _mm256_mul_pd(vo1, vg));
    __m256d g2 = _mm256_mul_pd(vg, vg);
    vv = _mm256_add_pd(_mm256_mul_pd(vb2, vv), _mm256_mul_pd(vo2, g2));
    __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vv), veps);
    __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, vm), denom);
    __m256d vt = _mm256_sub_pd(_mm256_loadu_pd(theta + i), step);
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    _mm256_storeu_pd(theta + i, vt);
  }
  const double om1 = 1.0 - beta1;
  const double om2 = 1.0 - beta2;
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + om1 * g[i];
    v[i] = beta2 * v[i] + om2 * (g[i] * g[i]);
    theta[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
  }
}

constexpr KernelTable kAvx2Table = {
    dot_avx2,    sum_avx2,        max_avx2,         axpy_avx2,
    scale_avx2,  sgd_update_avx2, adam_update_avx2, "avx2",
};

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable* table =
      __builtin_cpu_supports("avx2") ? &kAvx2Table : nullptr;
  return table;
}

}  // namespace evolve::kernels

#else

namespace evolve::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace evolve::kernels

#endif
