#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "evolve/sequence.hpp"
#include "evolve/vocab.hpp"

namespace evolve {

enum class TemplateMarker { kRefine, kEvaluate };

// Conditioning scaffold. Fixes the layout of the sequence a policy is
// conditioned on and the control token that closes it:
//   refine    BOS . x . SEP . y_prev . REF
//   evaluate  BOS . x . SEP . y . EVAL
// The prior response's EOS is stripped inside contexts so that EOS
// uniquely terminates the generation target. One REF template serves
// both training and inference.
struct RefinementTemplate {
  TemplateMarker marker = TemplateMarker::kRefine;
  std::size_t max_context_len = 64;
};

inline RefinementTemplate refine_template(std::size_t max_context_len = 64) {
  return {TemplateMarker::kRefine, max_context_len};
}
inline RefinementTemplate evaluate_template(std::size_t max_context_len = 64) {
  return {TemplateMarker::kEvaluate, max_context_len};
}

// BOS . x . SEP . y_prev(without EOS) . REF
// Requires a refine-marker template, a prompt x and a valid response
// y_prev; throws InvalidSequenceKind otherwise, ContextTooLong when the
// result exceeds the template budget.
TokenSequence build_refinement_context(const TokenSequence& x,
                                       const TokenSequence& y_prev,
                                       const RefinementTemplate& tmpl,
                                       const Vocabulary& vocab);

// BOS . x . SEP . y(without EOS) . EVAL
TokenSequence build_evaluation_context(const TokenSequence& x,
                                       const TokenSequence& y,
                                       const RefinementTemplate& tmpl,
                                       const Vocabulary& vocab);

// BOS . x . SEP . y1 . SEP . ... . SEP . y_{t-1} . REF
TokenSequence build_fewshot_context(const TokenSequence& x,
                                    std::span<const TokenSequence> history,
                                    const RefinementTemplate& tmpl,
                                    const Vocabulary& vocab);

// BOS . x . SEP . y_prev . SEP . e_prev . REF
TokenSequence build_refine_with_eval_context(const TokenSequence& x,
                                             const TokenSequence& y_prev,
                                             const TokenSequence& e_prev,
                                             const RefinementTemplate& tmpl,
                                             const Vocabulary& vocab);

// BOS . x — the conditioning sequence for direct generation.
TokenSequence build_direct_context(const TokenSequence& x,
                                   const Vocabulary& vocab);

}  // namespace evolve
