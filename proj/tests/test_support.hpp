#pragma once

// Shared fixtures for the test suites: micro-instance construction,
// random policies, and the central finite-difference gradient oracle.
// The oracle is test-only and independent of the analytic gradient path
// it checks.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <vector>

#include "evolve/policy.hpp"
#include "evolve/rng.hpp"
#include "evolve/sequence.hpp"
#include "evolve/vocab.hpp"

namespace evolve::testing {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("evolve-test-" +
            std::to_string(splitmix64(static_cast<std::uint64_t>(
                std::chrono::steady_clock::now().time_since_epoch().count()))));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::vector<TokenSequence> enumerate_prompts(const Vocabulary& vocab,
                                                    int k) {
  std::vector<TokenSequence> out;
  std::vector<Token> cur;
  auto visit = [&](auto&& self) -> void {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(make_prompt(cur));
      return;
    }
    for (int t = 0; t < vocab.content_size(); ++t) {
      bool used = false;
      for (Token u : cur) used = used || (u == t);
      if (used) continue;
      cur.push_back(t);
      self(self);
      cur.pop_back();
    }
  };
  visit(visit);
  return out;
}

inline std::vector<TokenSequence> enumerate_responses(const Vocabulary& vocab,
                                                      int max_len) {
  std::vector<TokenSequence> out;
  std::vector<Token> cur;
  auto visit = [&](auto&& self) -> void {
    auto resp = cur;
    resp.push_back(vocab.eos());
    out.push_back(make_response(std::move(resp)));
    if (static_cast<int>(cur.size()) >= max_len) return;
    for (int t = 0; t < vocab.content_size(); ++t) {
      cur.push_back(t);
      self(self);
      cur.pop_back();
    }
  };
  visit(visit);
  return out;
}

inline void randomize_parameters(PolicyModel& model, std::uint64_t seed,
                                 double scale = 1.0) {
  Rng rng(seed);
  for (double& p : model.mutable_parameters()) {
    p = scale * (2.0 * rng.next_double() - 1.0);
  }
}

// Central finite differences of a scalar function of the model's
// parameters, evaluated coordinate by coordinate.
inline std::vector<double> finite_difference_grad(
    PolicyModel& model, const std::function<double()>& f, double step = 1e-4) {
  auto params = model.mutable_parameters();
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double hi = f();
    params[i] = saved - step;
    const double lo = f();
    params[i] = saved;
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

// max_i |g_i - fd_i| / (1 + |fd_i|)
inline double max_relative_error(const std::vector<double>& analytic,
                                 const std::vector<double>& fd) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err =
        std::fabs(analytic[i] - fd[i]) / (1.0 + std::fabs(fd[i]));
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace evolve::testing
