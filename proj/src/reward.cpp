#include "evolve/reward.hpp"

#include <algorithm>
#include <set>

#include "evolve/errors.hpp"

namespace evolve {

RewardOracle::RewardOracle(Vocabulary vocab, double overlength_penalty)
    : vocab_(std::move(vocab)), lambda_(overlength_penalty) {
  if (lambda_ < 0.0) {
    throw ValidationError("overlength penalty must be >= 0");
  }
}

TokenSequence RewardOracle::target(const TokenSequence& x) const {
  if (x.kind != SequenceKind::kPrompt) {
    throw InvalidSequenceKind("oracle target expects a prompt");
  }
  std::set<Token> seen;
  for (Token t : x.tokens) {
    if (!vocab_.is_content(t)) {
      throw ValidationError("task prompt contains non-content token " +
                            vocab_.token_name(t));
    }
    if (!seen.insert(t).second) {
      throw ValidationError("task prompt tokens must be distinct");
    }
  }
  std::vector<Token> sorted = x.tokens;
  std::sort(sorted.begin(), sorted.end());
  sorted.push_back(vocab_.eos());
  return make_response(std::move(sorted));
}

double RewardOracle::score(const TokenSequence& x,
                           const TokenSequence& y) const {
  calls_.fetch_add(1, std::memory_order_relaxed);
  const auto goal = target(x);
  const std::size_t k = x.tokens.size();
  const std::size_t len = content_length(y, vocab_);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < std::min(len, k); ++i) {
    if (y.tokens[i] == goal.tokens[i]) ++matches;
  }
  double s = static_cast<double>(matches) / static_cast<double>(k);
  if (len > k) {
    s -= lambda_ * static_cast<double>(len - k) / static_cast<double>(k);
  }
  return std::clamp(s, 0.0, 1.0);
}

}  // namespace evolve
