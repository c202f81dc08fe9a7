#include "evolve/generation.hpp"

#include "evolve/errors.hpp"
#include "evolve/rng.hpp"

namespace evolve {

namespace {

// Sub-seed streams; turn indices are 1-based.
constexpr std::uint64_t kResponseStream = 1;
constexpr std::uint64_t kEvaluationStream = 2;

void require_turns(int n) {
  if (n < 1) {
    throw ValidationError("generation requires at least one turn");
  }
}

}  // namespace

std::string strategy_kind_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kParallel:
      return "parallel";
    case StrategyKind::kChain:
      return "chain";
    case StrategyKind::kFewShot:
      return "few-shot";
    case StrategyKind::kSelfEval:
      return "self-eval";
  }
  return "unknown";
}

StrategyKind strategy_kind_from_name(const std::string& name) {
  if (name == "parallel") return StrategyKind::kParallel;
  if (name == "chain") return StrategyKind::kChain;
  if (name == "few-shot" || name == "few_shot") return StrategyKind::kFewShot;
  if (name == "self-eval" || name == "self_eval") {
    return StrategyKind::kSelfEval;
  }
  throw ValidationError("unknown generation strategy: " + name);
}

ResponseChain parallel_sampling(const PolicyModel& model,
                                const TokenSequence& x, int n,
                                double temperature, std::uint64_t seed) {
  require_turns(n);
  const auto ctx = build_direct_context(x, model.vocab());
  std::vector<TokenSequence> responses;
  responses.reserve(n);
  for (int t = 1; t <= n; ++t) {
    responses.push_back(
        sample(model, ctx, temperature, derive_seed(seed, kResponseStream, t)));
  }
  return ResponseChain(x, std::move(responses));
}

ResponseChain chain_of_self_refinement(const PolicyModel& model,
                                       const TokenSequence& x, int n,
                                       const RefinementTemplate& tmpl,
                                       double temperature,
                                       std::uint64_t seed) {
  require_turns(n);
  const auto& vocab = model.vocab();
  std::vector<TokenSequence> responses;
  responses.reserve(n);
  responses.push_back(sample(model, build_direct_context(x, vocab),
                             temperature,
                             derive_seed(seed, kResponseStream, 1)));
  for (int t = 2; t <= n; ++t) {
    const auto ctx =
        build_refinement_context(x, responses.back(), tmpl, vocab);
    responses.push_back(sample(model, ctx, temperature,
                               derive_seed(seed, kResponseStream, t)));
  }
  return ResponseChain(x, std::move(responses));
}

GenerationResult few_shot_self_refinement(const PolicyModel& model,
                                          const TokenSequence& x, int n,
                                          const RefinementTemplate& tmpl,
                                          double temperature,
                                          std::uint64_t seed) {
  require_turns(n);
  const auto& vocab = model.vocab();
  std::vector<TokenSequence> responses;
  responses.reserve(n);
  responses.push_back(sample(model, build_direct_context(x, vocab),
                             temperature,
                             derive_seed(seed, kResponseStream, 1)));
  bool truncated = false;
  for (int t = 2; t <= n; ++t) {
    TokenSequence ctx;
    try {
      ctx = build_fewshot_context(x, responses, tmpl, vocab);
    } catch (const ContextTooLong&) {
      truncated = true;
      break;
    }
    responses.push_back(sample(model, ctx, temperature,
                               derive_seed(seed, kResponseStream, t)));
  }
  return GenerationResult{ResponseChain(x, std::move(responses)), truncated};
}

ResponseChain self_refinement_with_self_evaluation(
    const PolicyModel& model, const TokenSequence& x, int n,
    const RefinementTemplate& ref_tmpl, const RefinementTemplate& eval_tmpl,
    double temperature, std::uint64_t seed) {
  require_turns(n);
  const auto& vocab = model.vocab();
  std::vector<TokenSequence> responses;
  std::vector<TokenSequence> evaluations;
  responses.reserve(n);
  responses.push_back(sample(model, build_direct_context(x, vocab),
                             temperature,
                             derive_seed(seed, kResponseStream, 1)));
  for (int t = 2; t <= n; ++t) {
    const auto& y_prev = responses.back();
    auto e_prev = sample(model, build_evaluation_context(x, y_prev, eval_tmpl,
                                                         vocab),
                         temperature,
                         derive_seed(seed, kEvaluationStream, t - 1));
    e_prev.kind = SequenceKind::kEvaluation;
    const auto ctx = build_refine_with_eval_context(x, y_prev, e_prev,
                                                    ref_tmpl, vocab);
    responses.push_back(sample(model, ctx, temperature,
                               derive_seed(seed, kResponseStream, t)));
    evaluations.push_back(std::move(e_prev));
  }
  std::optional<std::vector<TokenSequence>> evals;
  if (!evaluations.empty()) evals = std::move(evaluations);
  return ResponseChain(x, std::move(responses), std::nullopt,
                       std::move(evals));
}

GenerationResult run_strategy(const PolicyModel& model, const TokenSequence& x,
                              const GenerationStrategy& strategy,
                              const RefinementTemplate& ref_tmpl,
                              const RefinementTemplate& eval_tmpl) {
  switch (strategy.kind) {
    case StrategyKind::kParallel:
      return {parallel_sampling(model, x, strategy.turns, strategy.temperature,
                                strategy.seed),
              false};
    case StrategyKind::kChain:
      return {chain_of_self_refinement(model, x, strategy.turns, ref_tmpl,
                                       strategy.temperature, strategy.seed),
              false};
    case StrategyKind::kFewShot:
      return few_shot_self_refinement(model, x, strategy.turns, ref_tmpl,
                                      strategy.temperature, strategy.seed);
    case StrategyKind::kSelfEval:
      return {self_refinement_with_self_evaluation(
                  model, x, strategy.turns, ref_tmpl, eval_tmpl,
                  strategy.temperature, strategy.seed),
              false};
  }
  throw ValidationError("unknown generation strategy");
}

}  // namespace evolve
