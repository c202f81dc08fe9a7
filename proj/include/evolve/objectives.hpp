#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evolve/context.hpp"
#include "evolve/dataset.hpp"
#include "evolve/policy.hpp"

namespace evolve {

// Mixing and regularization weights for the preference-training losses.
// alpha weighs the self-refinement term against DPO; beta scales the
// reference-normalized log-ratios. Defaults: alpha 0.8; beta 0.01 when
// pairs come from oracle-score filtering, 0.05 under rule-based
// filtering (noisier pairs want stronger regularization).
struct LossConfig {
  double alpha = 0.8;
  double beta = 0.01;
  double preference_gamma = 4.0;
  // The second term of the BT self-refinement loss is implemented with
  // the printed sign convention (the y_w-conditioned sigmoid rewards
  // y_l minus y_w); this switch negates it.
  bool bt_second_term_flipped = false;

  void validate() const;

  static constexpr double kBetaScoreFilter = 0.01;
  static constexpr double kBetaRuleFilter = 0.05;
};

enum class PreferenceMode { kHard, kSoft };

// p(y2 > y1 | x): probability that y2 is preferred over y1. Hard mode
// compares scores and puts 1/2 on ties; soft mode is a logistic in the
// score difference. Identical responses always tie at exactly 1/2, and
// p(a,b) + p(b,a) = 1.
class PreferenceFunction {
 public:
  using Scorer =
      std::function<double(const TokenSequence& x, const TokenSequence& y)>;

  PreferenceFunction(PreferenceMode mode, double gamma, Scorer scorer);

  static PreferenceFunction hard(Scorer scorer) {
    return PreferenceFunction(PreferenceMode::kHard, 0.0, std::move(scorer));
  }
  static PreferenceFunction soft(double gamma, Scorer scorer) {
    return PreferenceFunction(PreferenceMode::kSoft, gamma, std::move(scorer));
  }

  // p(y2 preferred over y1 | x)
  double operator()(const TokenSequence& x, const TokenSequence& y2,
                    const TokenSequence& y1) const;

  PreferenceMode mode() const { return mode_; }

 private:
  PreferenceMode mode_;
  double gamma_;
  Scorer scorer_;
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // empty when gradients were not requested
};

// -log E[log pi(y_w|x) + log pi(y_w|x, y_l, z)] averaged over the batch:
// likelihood of the chosen response both directly and as a refinement of
// the rejected one.
LossResult sft_loss(const PolicyModel& model,
                    std::span<const PreferenceTriple> batch,
                    const RefinementTemplate& tmpl, bool with_grad = true);

// beta * log[ pi(y2|x,y1,z) pi_ref(y1|x,y1,z) /
//             (pi(y1|x,y1,z) pi_ref(y2|x,y1,z)) ]
// The conditioning context is fixed by y1; the value is not symmetric
// in (y1, y2).
double v_value(const PolicyModel& model, const PolicyModel& ref,
               const TokenSequence& x, const TokenSequence& y1,
               const TokenSequence& y2, const RefinementTemplate& tmpl,
               double beta);

// Mean of (1/2 - v(x,y_l,y_w))^2 + (1/2 + v(x,y_w,y_l))^2.
LossResult sr_loss(const PolicyModel& model, const PolicyModel& ref,
                   std::span<const PreferenceTriple> batch,
                   const RefinementTemplate& tmpl, double beta,
                   bool with_grad = true);

// Mean of -log sigmoid(beta * [reference-normalized log-ratio margin]).
LossResult dpo_loss(const PolicyModel& model, const PolicyModel& ref,
                    std::span<const PreferenceTriple> batch, double beta,
                    bool with_grad = true);

// alpha * sr + (1 - alpha) * dpo, composed bit-level from the two terms.
LossResult evolve_pt_loss(const PolicyModel& model, const PolicyModel& ref,
                          std::span<const PreferenceTriple> batch,
                          const RefinementTemplate& tmpl,
                          const LossConfig& config, bool with_grad = true);

// Bradley-Terry self-refinement loss: two -log sigmoid terms, the first
// conditioned on y_l, the second on y_w with the printed sign ordering.
LossResult bt_sr_loss(const PolicyModel& model, const PolicyModel& ref,
                      std::span<const PreferenceTriple> batch,
                      const RefinementTemplate& tmpl, double beta,
                      bool second_term_flipped = false, bool with_grad = true);

// alpha * bt_sr + (1 - alpha) * dpo.
LossResult bt_evolve_loss(const PolicyModel& model, const PolicyModel& ref,
                          std::span<const PreferenceTriple> batch,
                          const RefinementTemplate& tmpl,
                          const LossConfig& config, bool with_grad = true);

enum class LossKind { kSft, kSr, kDpo, kEvolvePt, kBtSr, kBtEvolve };

std::string loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

// Uniform entry point used by the trainer and the verification battery.
// `ref` may be null for kSft.
LossResult evaluate_loss(LossKind kind, const PolicyModel& model,
                         const PolicyModel* ref,
                         std::span<const PreferenceTriple> batch,
                         const RefinementTemplate& tmpl,
                         const LossConfig& config, bool with_grad = true);

// ---------------------------------------------------------------- oracle

// Response (with EOS) -> probability.
using ResponseDistribution = std::map<std::vector<Token>, double>;

// pi*(y2) proportional to ref(y2) * exp(p(y2 > y1 | x) / beta), the
// closed-form maximizer of the KL-regularized refinement objective,
// normalized by exact summation over the given support.
ResponseDistribution tilt_distribution(const ResponseDistribution& ref_dist,
                                       const TokenSequence& x,
                                       const TokenSequence& y1,
                                       const PreferenceFunction& pref,
                                       double beta);

// Enumerates ref over the refinement context of (x, y1) and tilts it.
ResponseDistribution optimal_policy_oracle(const PolicyModel& ref,
                                           const TokenSequence& x,
                                           const TokenSequence& y1,
                                           const RefinementTemplate& tmpl,
                                           double beta,
                                           const PreferenceFunction& pref);

struct OptimalityCheck {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct OptimalityReport {
  std::vector<OptimalityCheck> checks;
  bool all_pass() const;
};

// For every prompt and every conditioning response y1: the tilted
// distribution sums to 1, and for every pair (y1, y2)
//   beta * log[pi*(y2) ref(y1) / (pi*(y1) ref(y2))] = p(y2 > y1|x) - 1/2
// within `bound`. Failing pairs are listed individually.
OptimalityReport verify_optimality(const PolicyModel& ref,
                                   std::span<const TokenSequence> prompts,
                                   const RefinementTemplate& tmpl, double beta,
                                   const PreferenceFunction& pref,
                                   double bound = 1e-9);

}  // namespace evolve
