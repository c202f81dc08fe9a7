#include "evolve/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>

namespace evolve::kernels {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double max_scalar(const double* a, std::size_t n) {
  double m = a[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (a[i] > m) m = a[i];
  }
  return m;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void sgd_update_scalar(double lr, const double* g, double* theta,
                       std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) theta[i] -= lr * g[i];
}

void adam_update_scalar(double lr_t, double beta1, double beta2, double eps,
                        const double* g, double* m, double* v, double* theta,
                        std::size_t n) {
  const double om1 = 1.0 - beta1;
  const double om2 = 1.0 - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + om1 * g[i];
    v[i] = beta2 * v[i] + om2 * (g[i] * g[i]);
    theta[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
  }
}

constexpr KernelTable kScalarTable = {
    dot_scalar,    sum_scalar,        max_scalar,         axpy_scalar,
    scale_scalar,  sgd_update_scalar, adam_update_scalar, "scalar",
};

const KernelTable* resolve() {
  const char* forced = std::getenv("EVOLVE_LAB_KERNELS");
  if (forced != nullptr) {
    if (std::strcmp(forced, "scalar") == 0) return &kScalarTable;
    if (std::strcmp(forced, "avx2") == 0 && avx2_table() != nullptr) {
      return avx2_table();
    }
    if (std::strcmp(forced, "neon") == 0 && neon_table() != nullptr) {
      return neon_table();
    }
    // Unknown or unavailable request falls through to auto.
  }
  if (avx2_table() != nullptr) return avx2_table();
  if (neon_table() != nullptr) return neon_table();
  return &kScalarTable;
}

}  // namespace

const KernelTable& scalar_table() { return kScalarTable; }

const KernelTable& active() {
  static const KernelTable* table = resolve();
  return *table;
}

std::string active_name() { return active().name; }

}  // namespace evolve::kernels
