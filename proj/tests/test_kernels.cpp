#include <cmath>
#include <vector>

#include "doctest.h"
#include "evolve/kernels.hpp"
#include "evolve/rng.hpp"

using namespace evolve;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * (rng.next_double() - 0.5);
  return v;
}

// Sizes straddling the vector width to exercise remainder handling.
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 64, 257};

}  // namespace

TEST_CASE("active kernel table resolves") {
  const auto name = kernels::active_name();
  CHECK((name == "scalar" || name == "avx2" || name == "neon"));
  MESSAGE("active kernel lane: ", name);
}

TEST_CASE("elementwise kernels match the scalar lane bit for bit") {
  const auto& scalar = kernels::scalar_table();
  const auto& active = kernels::active();
  Rng rng(2024);
  for (std::size_t n : kSizes) {
    for (int rep = 0; rep < 8; ++rep) {
      const auto x = random_vector(rng, n);
      const double alpha = 3.0 * (rng.next_double() - 0.5);

      auto y1 = random_vector(rng, n);
      auto y2 = y1;
      scalar.axpy(alpha, x.data(), y1.data(), n);
      active.axpy(alpha, x.data(), y2.data(), n);
      CHECK(y1 == y2);

      auto s1 = x;
      auto s2 = x;
      scalar.scale(alpha, s1.data(), n);
      active.scale(alpha, s2.data(), n);
      CHECK(s1 == s2);

      auto t1 = random_vector(rng, n);
      auto t2 = t1;
      scalar.sgd_update(0.01, x.data(), t1.data(), n);
      active.sgd_update(0.01, x.data(), t2.data(), n);
      CHECK(t1 == t2);
    }
  }
}

TEST_CASE("adam update matches the scalar lane bit for bit") {
  const auto& scalar = kernels::scalar_table();
  const auto& active = kernels::active();
  Rng rng(77);
  for (std::size_t n : kSizes) {
    const auto g = random_vector(rng, n);
    auto m1 = random_vector(rng, n, 0.1);
    auto v1 = random_vector(rng, n, 0.0);
    for (auto& x : v1) x = rng.next_double() * 0.01;  // v must be >= 0
    auto t1 = random_vector(rng, n);
    auto m2 = m1;
    auto v2 = v1;
    auto t2 = t1;
    scalar.adam_update(1e-3, 0.9, 0.999, 1e-8, g.data(), m1.data(), v1.data(),
                       t1.data(), n);
    active.adam_update(1e-3, 0.9, 0.999, 1e-8, g.data(), m2.data(), v2.data(),
                       t2.data(), n);
    CHECK(m1 == m2);
    CHECK(v1 == v2);
    CHECK(t1 == t2);
  }
}

TEST_CASE("reduction kernels agree within reassociation error") {
  const auto& scalar = kernels::scalar_table();
  const auto& active = kernels::active();
  Rng rng(13);
  for (std::size_t n : kSizes) {
    if (n == 0) continue;
    for (int rep = 0; rep < 8; ++rep) {
      const auto a = random_vector(rng, n);
      const auto b = random_vector(rng, n);

      const double d1 = scalar.dot(a.data(), b.data(), n);
      const double d2 = active.dot(a.data(), b.data(), n);
      // |err| <= c * n * eps * sum |a_i b_i|
      double abs_bound = 0.0;
      for (std::size_t i = 0; i < n; ++i) abs_bound += std::fabs(a[i] * b[i]);
      CHECK(std::fabs(d1 - d2) <=
            4.0 * static_cast<double>(n) * 2.22e-16 * abs_bound + 1e-300);

      const double s1 = scalar.sum(a.data(), n);
      const double s2 = active.sum(a.data(), n);
      double sum_abs = 0.0;
      for (double x : a) sum_abs += std::fabs(x);
      CHECK(std::fabs(s1 - s2) <=
            4.0 * static_cast<double>(n) * 2.22e-16 * sum_abs + 1e-300);

      // max is exact in every lane
      CHECK(scalar.max(a.data(), n) == active.max(a.data(), n));
    }
  }
}

TEST_CASE("dot against a compensated reference") {
  const auto& active = kernels::active();
  Rng rng(99);
  for (std::size_t n : {16u, 128u, 1024u}) {
    const auto a = random_vector(rng, n);
    const auto b = random_vector(rng, n);
    long double expect = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      expect += static_cast<long double>(a[i]) * b[i];
    }
    const double got = active.dot(a.data(), b.data(), n);
    CHECK(std::fabs(got - static_cast<double>(expect)) <=
          1e-12 * (1.0 + std::fabs(static_cast<double>(expect))));
  }
}
