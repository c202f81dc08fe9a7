#include "evolve/sequence.hpp"

#include "evolve/errors.hpp"

namespace evolve {

std::string kind_name(SequenceKind kind) {
  switch (kind) {
    case SequenceKind::kPrompt:
      return "prompt";
    case SequenceKind::kResponse:
      return "response";
    case SequenceKind::kEvaluation:
      return "evaluation";
  }
  return "unknown";
}

void validate_sequence(const TokenSequence& seq, const Vocabulary& vocab,
                       std::size_t max_len) {
  for (Token t : seq.tokens) {
    if (!vocab.contains(t)) {
      throw InvalidToken("token id " + std::to_string(t) +
                         " out of vocabulary (size " +
                         std::to_string(vocab.size()) + ")");
    }
  }
  if (seq.tokens.size() > max_len) {
    throw ValidationError(kind_name(seq.kind) + " of length " +
                          std::to_string(seq.tokens.size()) +
                          " exceeds the maximum of " + std::to_string(max_len));
  }
  if (seq.kind == SequenceKind::kPrompt) {
    for (Token t : seq.tokens) {
      if (!vocab.is_content(t)) {
        throw ValidationError("prompt contains control token " +
                              vocab.token_name(t));
      }
    }
    return;
  }
  // response / evaluation: content tokens closed by exactly one EOS
  if (seq.tokens.empty() || seq.tokens.back() != vocab.eos()) {
    throw ValidationError(kind_name(seq.kind) +
                          " must terminate with exactly one EOS");
  }
  for (std::size_t i = 0; i + 1 < seq.tokens.size(); ++i) {
    if (!vocab.is_content(seq.tokens[i])) {
      throw ValidationError(kind_name(seq.kind) +
                            " contains control token " +
                            vocab.token_name(seq.tokens[i]) +
                            " before the terminating EOS");
    }
  }
}

std::size_t content_length(const TokenSequence& seq, const Vocabulary& vocab) {
  std::size_t n = seq.tokens.size();
  if (n > 0 && seq.tokens.back() == vocab.eos()) return n - 1;
  return n;
}

}  // namespace evolve
