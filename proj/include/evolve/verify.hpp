#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evolve {

struct VerifyCheck {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  bool pass = false;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 2026;
  // Random (theta, batch) draws per loss and architecture in the
  // finite-difference comparison.
  int gradient_configs = 100;
  // Random batches for the reference-point loss identities.
  int reference_batches = 20;
};

// The analytic oracle battery:
//   - reference-point loss values at theta = pi_ref
//   - analytic vs central finite-difference gradients for all losses
//     and both trainable architectures
//   - normalization and the optimal-policy log-ratio identity of the
//     tilted distribution on the micro-instance, hard and soft
//   - sr-loss minimization recovering v = +/- 1/2
// Pure computation; no run directory involved.
std::vector<VerifyCheck> run_verification_battery(const VerifyOptions& opts);

bool all_checks_pass(const std::vector<VerifyCheck>& checks);

// One JSON object: {"checks": [{name, measured, bound, pass}...],
// "all_pass": bool}.
std::string verify_report_json(const std::vector<VerifyCheck>& checks);

}  // namespace evolve
