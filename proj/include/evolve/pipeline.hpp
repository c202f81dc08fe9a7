#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "evolve/dataset.hpp"
#include "evolve/generation.hpp"
#include "evolve/objectives.hpp"
#include "evolve/policy.hpp"
#include "evolve/reward.hpp"

namespace evolve {

// ----------------------------------------------------------------- filters

// Attaches oracle scores to a chain; idempotent.
ResponseChain score_chain(const RewardOracle& oracle, ResponseChain chain);

// chosen = argmax score, rejected = argmin score, earliest index on
// ties. Returns nothing when max - min < delta (uninformative chain).
std::optional<PreferenceTriple> filter_by_score(const ResponseChain& chain,
                                                double delta = 1e-9);

// Position-based pairing on 4-response chains: y_4 chosen, y_1
// rejected, no scorer consulted. Returns nothing when y_1 == y_4.
std::optional<PreferenceTriple> filter_by_rule(const ResponseChain& chain);

enum class FilterMode { kScore, kRule };

std::string filter_mode_name(FilterMode mode);
FilterMode filter_mode_from_name(const std::string& name);

// ----------------------------------------------------------------- trainer

enum class Optimizer { kSgd, kAdam };

std::string optimizer_name(Optimizer opt);
Optimizer optimizer_from_name(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-2;
  int steps = 1000;
  int batch_size = 16;
  Optimizer optimizer = Optimizer::kAdam;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kEvolvePt;

  // Named presets from the reference setup; the toy defaults above are
  // scaled up because the toy loss surface is far better conditioned.
  static constexpr double kReferenceSftLearningRate = 5e-6;
  static constexpr double kReferencePtLearningRate = 1e-6;

  void validate() const;
};

struct TrainResult {
  std::vector<double> trajectory;  // loss before each update, per step
  double final_loss = 0.0;
};

// Deterministic mini-batch training: batches walk a seeded shuffle of
// the dataset, examples reduce left to right, one optimizer update per
// step. Throws DivergenceError when the loss is non-finite or exceeds
// ten times the initial loss for 100 consecutive steps.
TrainResult train(PolicyModel& model, const PolicyModel* ref,
                  std::span<const PreferenceTriple> dataset,
                  const RefinementTemplate& tmpl, const LossConfig& loss_cfg,
                  const TrainConfig& cfg);

// --------------------------------------------------------------- task data

// All k-permutations of distinct content tokens, lexicographic.
std::vector<TokenSequence> all_task_prompts(const Vocabulary& vocab, int k);

// Named, pairwise-disjoint prompt splits drawn from one seeded shuffle
// of the full prompt space.
struct PromptSplits {
  std::vector<TokenSequence> sft;
  std::vector<TokenSequence> offline;
  std::vector<std::vector<TokenSequence>> iterations;
  std::vector<TokenSequence> eval;
};

struct SplitSizes {
  int sft = 100;
  int offline = 150;
  std::vector<int> iterations = {50, 100};
  int eval = 256;
};

PromptSplits make_prompt_splits(const Vocabulary& vocab, int k,
                                const SplitSizes& sizes, std::uint64_t seed);

// Parallel-samples `chains_per_prompt` chains of `turns` responses per
// prompt from `model`, scores them, and pairs max/min per chain. The
// synthesized stand-in for an external curated preference dataset.
std::vector<PreferenceTriple> synthesize_curated_triples(
    const PolicyModel& model, const RewardOracle& oracle,
    std::span<const TokenSequence> prompts, int chains_per_prompt, int turns,
    double temperature, std::uint64_t seed);

// -------------------------------------------------------------- iteration

struct IterationOutcome {
  std::vector<ResponseChain> chains;
  std::vector<PreferenceTriple> triples;
  TrainResult train_result;
};

// One generate -> filter -> train round. `model` is trained in place;
// the reference policy is re-snapshotted from the incoming model unless
// `fixed_ref` supplies one. `used_prompts` enforces disjointness from
// earlier splits. Rule mode never touches the oracle while filtering.
IterationOutcome run_iteration(PolicyModel& model, const RewardOracle& oracle,
                               std::span<const TokenSequence> prompts,
                               const std::set<std::vector<Token>>& used_prompts,
                               const GenerationStrategy& strategy,
                               FilterMode filter_mode,
                               const RefinementTemplate& ref_tmpl,
                               const RefinementTemplate& eval_tmpl,
                               const LossConfig& loss_cfg,
                               const TrainConfig& train_cfg,
                               const PolicyModel* fixed_ref = nullptr);

// -------------------------------------------------------------- evaluation

struct EvalMetrics {
  std::vector<double> per_turn_mean;  // over seeds of per-prompt means
  std::vector<double> per_turn_std;   // sample std over seeds
  double direct_score = 0.0;          // turn 1
  double sr_score = 0.0;              // final turn
  double sr_gain = 0.0;               // sr - direct
};

// Chain-of-self-refinement evaluation on held-out prompts, repeated
// over `seeds`.
EvalMetrics evaluate_model(const PolicyModel& model,
                           std::span<const TokenSequence> eval_prompts,
                           const RewardOracle& oracle, int turns,
                           double temperature,
                           std::span<const std::uint64_t> seeds,
                           const RefinementTemplate& ref_tmpl);

// Fraction of prompts where A outscores B on a direct sample, ties
// counted one half. A model against itself under one seed is exactly
// one half.
double pairwise_win_rate(const PolicyModel& model_a,
                         const PolicyModel& model_b,
                         std::span<const TokenSequence> prompts,
                         const RewardOracle& oracle, double temperature,
                         std::uint64_t seed);

}  // namespace evolve
