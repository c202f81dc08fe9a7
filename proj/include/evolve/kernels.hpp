#pragma once

#include <cstddef>
#include <string>

// Double-precision vector kernels behind the hot loops: policy matvecs,
// gradient accumulation, optimizer updates, softmax reductions.
//
// Each kernel has a scalar reference implementation and, where the build
// target supports it, an AVX2 (x86-64) or NEON (aarch64) variant. The
// active implementation is chosen once at runtime from CPU capabilities;
// EVOLVE_LAB_KERNELS={auto,scalar,avx2,neon} forces a lane.
//
// Elementwise kernels (axpy, scale, adam_update, sgd_update) avoid FMA
// contraction so every lane produces bit-identical results. Reduction
// kernels (dot, sum) reassociate and may differ from scalar in the last
// ulps; the equivalence tests bound that difference.

namespace evolve::kernels {

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*max)(const double* a, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x[i] *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
  // theta[i] -= lr * g[i]
  void (*sgd_update)(double lr, const double* g, double* theta, std::size_t n);
  // Adam with bias-corrected step size folded into lr_t:
  //   m = beta1*m + (1-beta1)*g
  //   v = beta2*v + (1-beta2)*g*g
  //   theta -= lr_t * m / (sqrt(v) + eps)
  void (*adam_update)(double lr_t, double beta1, double beta2, double eps,
                      const double* g, double* m, double* v, double* theta,
                      std::size_t n);
  const char* name;
};

// Scalar reference table (always available).
const KernelTable& scalar_table();

// AVX2 / NEON tables; null when not compiled in or unsupported by the CPU.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// The dispatched table: best available lane unless EVOLVE_LAB_KERNELS
// overrides. Resolved once on first call.
const KernelTable& active();

// Name of the active lane ("scalar", "avx2", "neon").
std::string active_name();

// Convenience forwarders through the active table.
inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline double sum(const double* a, std::size_t n) { return active().sum(a, n); }
inline double max(const double* a, std::size_t n) { return active().max(a, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void scale(double alpha, double* x, std::size_t n) {
  active().scale(alpha, x, n);
}
inline void sgd_update(double lr, const double* g, double* theta,
                       std::size_t n) {
  active().sgd_update(lr, g, theta, n);
}
inline void adam_update(double lr_t, double beta1, double beta2, double eps,
                        const double* g, double* m, double* v, double* theta,
                        std::size_t n) {
  active().adam_update(lr_t, beta1, beta2, eps, g, m, v, theta, n);
}

}  // namespace evolve::kernels
