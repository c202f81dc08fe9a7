#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "evolve/vocab.hpp"

namespace evolve {

enum class SequenceKind { kPrompt, kResponse, kEvaluation };

std::string kind_name(SequenceKind kind);

// A token list tagged with its role. Plain prompts hold content tokens
// only; responses and evaluations hold content tokens closed by exactly
// one EOS. Conditioning contexts built from templates are prompt-kind
// sequences that additionally carry BOS/SEP/REF/EVAL markers.
struct TokenSequence {
  std::vector<Token> tokens;
  SequenceKind kind = SequenceKind::kPrompt;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const TokenSequence& other) const = default;
};

inline TokenSequence make_prompt(std::vector<Token> tokens) {
  return TokenSequence{std::move(tokens), SequenceKind::kPrompt};
}
inline TokenSequence make_response(std::vector<Token> tokens) {
  return TokenSequence{std::move(tokens), SequenceKind::kResponse};
}
inline TokenSequence make_evaluation(std::vector<Token> tokens) {
  return TokenSequence{std::move(tokens), SequenceKind::kEvaluation};
}

inline constexpr std::size_t kDefaultMaxSequenceLength = 8;

// Validates the kind-specific invariants; throws ValidationError (or
// InvalidToken for out-of-vocabulary ids).
//   prompt:      content tokens only, no EOS
//   response:    content tokens closed by exactly one trailing EOS
//   evaluation:  same shape as response
void validate_sequence(const TokenSequence& seq, const Vocabulary& vocab,
                       std::size_t max_len = kDefaultMaxSequenceLength);

// Content length of a response/evaluation (tokens before the EOS).
std::size_t content_length(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace evolve
