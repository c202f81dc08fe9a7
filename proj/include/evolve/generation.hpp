#pragma once

#include <cstdint>
#include <string>

#include "evolve/context.hpp"
#include "evolve/dataset.hpp"
#include "evolve/policy.hpp"

namespace evolve {

enum class StrategyKind { kParallel, kChain, kFewShot, kSelfEval };

std::string strategy_kind_name(StrategyKind kind);
StrategyKind strategy_kind_from_name(const std::string& name);

struct GenerationStrategy {
  StrategyKind kind = StrategyKind::kChain;
  int turns = 4;
  double temperature = 0.7;
  std::uint64_t seed = 0;
};

struct GenerationResult {
  ResponseChain chain;
  // Few-shot only: the context budget ran out and the chain was cut at
  // the last complete turn.
  bool truncated = false;
};

// Every strategy is a pure function of (model parameters, x, config,
// seed). Turn t draws its randomness from derive_seed(seed, stream, t),
// so strategies that share a context prefix produce identical turns.

// n i.i.d. samples from pi(.|BOS.x).
ResponseChain parallel_sampling(const PolicyModel& model,
                                const TokenSequence& x, int n,
                                double temperature, std::uint64_t seed);

// y_1 from the direct context; y_t refines y_{t-1}.
ResponseChain chain_of_self_refinement(const PolicyModel& model,
                                       const TokenSequence& x, int n,
                                       const RefinementTemplate& tmpl,
                                       double temperature, std::uint64_t seed);

// y_t conditions on the full history y_1..y_{t-1}.
GenerationResult few_shot_self_refinement(const PolicyModel& model,
                                          const TokenSequence& x, int n,
                                          const RefinementTemplate& tmpl,
                                          double temperature,
                                          std::uint64_t seed);

// y_1 direct; e_t evaluates y_t; y_{t+1} refines (y_t, e_t). The chain
// carries the n-1 evaluations alongside the n responses.
ResponseChain self_refinement_with_self_evaluation(
    const PolicyModel& model, const TokenSequence& x, int n,
    const RefinementTemplate& ref_tmpl, const RefinementTemplate& eval_tmpl,
    double temperature, std::uint64_t seed);

GenerationResult run_strategy(const PolicyModel& model, const TokenSequence& x,
                              const GenerationStrategy& strategy,
                              const RefinementTemplate& ref_tmpl,
                              const RefinementTemplate& eval_tmpl);

}  // namespace evolve
