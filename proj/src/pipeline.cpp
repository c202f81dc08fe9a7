#include "evolve/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "evolve/errors.hpp"
#include "evolve/rng.hpp"

namespace evolve {

ResponseChain score_chain(const RewardOracle& oracle, ResponseChain chain) {
  std::vector<double> scores;
  scores.reserve(chain.responses.size());
  for (const auto& y : chain.responses) {
    scores.push_back(oracle.score(chain.prompt, y));
  }
  chain.scores = std::move(scores);
  return chain;
}

std::optional<PreferenceTriple> filter_by_score(const ResponseChain& chain,
                                                double delta) {
  if (chain.responses.size() < 2) {
    throw InsufficientResponses(
        "score filter needs at least two responses, got " +
        std::to_string(chain.responses.size()));
  }
  if (!chain.scores) {
    throw ValidationError("score filter needs a scored chain");
  }
  const auto& scores = *chain.scores;
  std::size_t best = 0;
  std::size_t worst = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;  // earliest max wins ties
    if (scores[i] < scores[worst]) worst = i;
  }
  if (scores[best] - scores[worst] < delta) return std::nullopt;
  return PreferenceTriple(chain.prompt, chain.responses[best],
                          chain.responses[worst]);
}

std::optional<PreferenceTriple> filter_by_rule(const ResponseChain& chain) {
  if (chain.responses.size() != 4) {
    throw ChainLengthMismatch("rule filter expects exactly 4 responses, got " +
                              std::to_string(chain.responses.size()));
  }
  const auto& first = chain.responses.front();
  const auto& last = chain.responses.back();
  if (first.tokens == last.tokens) return std::nullopt;
  return PreferenceTriple(chain.prompt, last, first);
}

std::string filter_mode_name(FilterMode mode) {
  return mode == FilterMode::kScore ? "score" : "rule";
}

FilterMode filter_mode_from_name(const std::string& name) {
  if (name == "score") return FilterMode::kScore;
  if (name == "rule") return FilterMode::kRule;
  throw ValidationError("unknown filter mode: " + name);
}

// ---------------------------------------------------------------- task data

std::vector<TokenSequence> all_task_prompts(const Vocabulary& vocab, int k) {
  if (k < 1 || k > vocab.content_size()) {
    throw ValidationError("prompt length must lie in [1, content size]");
  }
  std::vector<TokenSequence> out;
  std::vector<Token> cur;
  std::vector<bool> used(vocab.content_size(), false);
  auto visit = [&](auto&& self) -> void {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(make_prompt(cur));
      return;
    }
    for (int t = 0; t < vocab.content_size(); ++t) {
      if (used[t]) continue;
      used[t] = true;
      cur.push_back(t);
      self(self);
      cur.pop_back();
      used[t] = false;
    }
  };
  visit(visit);
  return out;
}

PromptSplits make_prompt_splits(const Vocabulary& vocab, int k,
                                const SplitSizes& sizes, std::uint64_t seed) {
  auto prompts = all_task_prompts(vocab, k);
  std::size_t need = static_cast<std::size_t>(sizes.sft) + sizes.offline +
                     sizes.eval;
  for (int it : sizes.iterations) need += static_cast<std::size_t>(it);
  if (need > prompts.size()) {
    throw ValidationError(
        "prompt splits need " + std::to_string(need) + " prompts but the "
        "task space holds only " + std::to_string(prompts.size()));
  }
  Rng rng(derive_seed(seed, 0x5317, 0));
  for (std::size_t i = prompts.size(); i > 1; --i) {
    std::swap(prompts[i - 1], prompts[rng.next_below(i)]);
  }
  PromptSplits splits;
  std::size_t cursor = 0;
  auto take = [&](int count) {
    std::vector<TokenSequence> part(prompts.begin() + cursor,
                                    prompts.begin() + cursor + count);
    cursor += count;
    return part;
  };
  splits.sft = take(sizes.sft);
  splits.offline = take(sizes.offline);
  for (int it : sizes.iterations) splits.iterations.push_back(take(it));
  splits.eval = take(sizes.eval);
  return splits;
}

std::vector<PreferenceTriple> synthesize_curated_triples(
    const PolicyModel& model, const RewardOracle& oracle,
    std::span<const TokenSequence> prompts, int chains_per_prompt, int turns,
    double temperature, std::uint64_t seed) {
  std::vector<PreferenceTriple> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (int c = 0; c < chains_per_prompt; ++c) {
      const auto chain_seed = derive_seed(seed, 0xcafe + c, i);
      auto chain = score_chain(
          oracle, parallel_sampling(model, prompts[i], turns, temperature,
                                    chain_seed));
      if (auto triple = filter_by_score(chain)) {
        out.push_back(std::move(*triple));
      }
    }
  }
  return out;
}

// --------------------------------------------------------------- iteration

IterationOutcome run_iteration(PolicyModel& model, const RewardOracle& oracle,
                               std::span<const TokenSequence> prompts,
                               const std::set<std::vector<Token>>& used_prompts,
                               const GenerationStrategy& strategy,
                               FilterMode filter_mode,
                               const RefinementTemplate& ref_tmpl,
                               const RefinementTemplate& eval_tmpl,
                               const LossConfig& loss_cfg,
                               const TrainConfig& train_cfg,
                               const PolicyModel* fixed_ref) {
  for (const auto& x : prompts) {
    if (used_prompts.count(x.tokens) > 0) {
      throw ValidationError(
          "iteration prompt set intersects previously used prompts");
    }
  }

  IterationOutcome outcome;
  outcome.chains.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    GenerationStrategy per_prompt = strategy;
    per_prompt.seed = derive_seed(strategy.seed, 0x9e37, i);
    auto result =
        run_strategy(model, prompts[i], per_prompt, ref_tmpl, eval_tmpl);
    outcome.chains.push_back(std::move(result.chain));
  }

  for (auto& chain : outcome.chains) {
    std::optional<PreferenceTriple> triple;
    if (filter_mode == FilterMode::kScore) {
      chain = score_chain(oracle, std::move(chain));
      triple = filter_by_score(chain);
    } else {
      triple = filter_by_rule(chain);
    }
    if (triple) outcome.triples.push_back(std::move(*triple));
  }
  if (outcome.triples.empty()) {
    throw EmptyFilteredDataset(
        "no informative preference pairs survived filtering");
  }

  const auto ref =
      fixed_ref != nullptr ? nullptr : snapshot_reference(model);
  const PolicyModel* ref_ptr = fixed_ref != nullptr ? fixed_ref : ref.get();
  outcome.train_result = train(model, ref_ptr, outcome.triples, ref_tmpl,
                               loss_cfg, train_cfg);
  return outcome;
}

// -------------------------------------------------------------- evaluation

EvalMetrics evaluate_model(const PolicyModel& model,
                           std::span<const TokenSequence> eval_prompts,
                           const RewardOracle& oracle, int turns,
                           double temperature,
                           std::span<const std::uint64_t> seeds,
                           const RefinementTemplate& ref_tmpl) {
  if (eval_prompts.empty() || seeds.empty() || turns < 1) {
    throw ValidationError("evaluation needs prompts, seeds and >= 1 turn");
  }
  // per_seed_mean[s][t]: mean score over prompts of turn t under seed s
  std::vector<std::vector<double>> per_seed_mean(
      seeds.size(), std::vector<double>(turns, 0.0));
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (std::size_t i = 0; i < eval_prompts.size(); ++i) {
      const auto chain = chain_of_self_refinement(
          model, eval_prompts[i], turns, ref_tmpl, temperature,
          derive_seed(seeds[s], 0xe7a1, i));
      for (int t = 0; t < turns; ++t) {
        per_seed_mean[s][t] +=
            oracle.score(eval_prompts[i], chain.responses[t]);
      }
    }
    for (int t = 0; t < turns; ++t) {
      per_seed_mean[s][t] /= static_cast<double>(eval_prompts.size());
    }
  }
  EvalMetrics metrics;
  metrics.per_turn_mean.assign(turns, 0.0);
  metrics.per_turn_std.assign(turns, 0.0);
  for (int t = 0; t < turns; ++t) {
    double mean = 0.0;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      mean += per_seed_mean[s][t];
    }
    mean /= static_cast<double>(seeds.size());
    metrics.per_turn_mean[t] = mean;
    if (seeds.size() > 1) {
      double var = 0.0;
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        const double d = per_seed_mean[s][t] - mean;
        var += d * d;
      }
      metrics.per_turn_std[t] =
          std::sqrt(var / static_cast<double>(seeds.size() - 1));
    }
  }
  metrics.direct_score = metrics.per_turn_mean.front();
  metrics.sr_score = metrics.per_turn_mean.back();
  metrics.sr_gain = metrics.sr_score - metrics.direct_score;
  return metrics;
}

double pairwise_win_rate(const PolicyModel& model_a,
                         const PolicyModel& model_b,
                         std::span<const TokenSequence> prompts,
                         const RewardOracle& oracle, double temperature,
                         std::uint64_t seed) {
  if (prompts.empty()) {
    throw ValidationError("win rate needs at least one prompt");
  }
  double wins = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto ctx_a = build_direct_context(prompts[i], model_a.vocab());
    const auto ctx_b = build_direct_context(prompts[i], model_b.vocab());
    const auto sample_seed = derive_seed(seed, 0x31b5, i);
    const double sa =
        oracle.score(prompts[i], sample(model_a, ctx_a, temperature,
                                        sample_seed));
    const double sb =
        oracle.score(prompts[i], sample(model_b, ctx_b, temperature,
                                        sample_seed));
    if (sa > sb) {
      wins += 1.0;
    } else if (sa == sb) {
      wins += 0.5;
    }
  }
  return wins / static_cast<double>(prompts.size());
}

}  // namespace evolve
