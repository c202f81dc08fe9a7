#pragma once

#include <atomic>
#include <cstdint>

#include "evolve/sequence.hpp"
#include "evolve/vocab.hpp"

namespace evolve {

// Deterministic programmatic scorer for the synthetic sorting task,
// standing in for a learned reward model. A prompt is k distinct
// content tokens; the target is the prompt sorted ascending by id.
//   score(x, y) = matches(y, sorted(x)) / k
//                 - lambda * max(0, len(y) - k) / k,   clipped to [0, 1]
// where matches counts positions agreeing with the target and len(y)
// is the content length. Scoring calls are counted so tests can assert
// the rule-based filter path never consults the oracle.
class RewardOracle {
 public:
  explicit RewardOracle(Vocabulary vocab, double overlength_penalty = 0.5);

  double score(const TokenSequence& x, const TokenSequence& y) const;
  TokenSequence target(const TokenSequence& x) const;

  std::uint64_t call_count() const { return calls_.load(); }
  void reset_call_count() const { calls_.store(0); }

  const Vocabulary& vocab() const { return vocab_; }

 private:
  Vocabulary vocab_;
  double lambda_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

}  // namespace evolve
