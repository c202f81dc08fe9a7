#include "evolve/context.hpp"

#include "evolve/errors.hpp"

namespace evolve {

namespace {

void require_prompt(const TokenSequence& x, const Vocabulary& vocab) {
  if (x.kind != SequenceKind::kPrompt) {
    throw InvalidSequenceKind("expected a prompt, got " + kind_name(x.kind));
  }
  for (Token t : x.tokens) {
    if (!vocab.is_content(t)) {
      throw InvalidSequenceKind("prompt contains non-content token " +
                                vocab.token_name(t));
    }
  }
}

// A context ingredient must be a well-formed response or evaluation;
// an empty or unterminated sequence has no defined layout position.
void require_terminated(const TokenSequence& y, SequenceKind kind,
                        const Vocabulary& vocab) {
  if (y.kind != kind) {
    throw InvalidSequenceKind("expected a " + kind_name(kind) + ", got " +
                              kind_name(y.kind));
  }
  if (y.tokens.empty() || y.tokens.back() != vocab.eos()) {
    throw InvalidSequenceKind(kind_name(kind) +
                              " used in a context must be EOS-terminated and "
                              "non-empty");
  }
}

void append_without_eos(std::vector<Token>& out, const TokenSequence& y,
                        const Vocabulary& vocab) {
  for (Token t : y.tokens) {
    if (t == vocab.eos()) break;
    out.push_back(t);
  }
}

TokenSequence finish(std::vector<Token> tokens, std::size_t budget) {
  if (tokens.size() > budget) {
    throw ContextTooLong("context of length " + std::to_string(tokens.size()) +
                         " exceeds the budget of " + std::to_string(budget));
  }
  return TokenSequence{std::move(tokens), SequenceKind::kPrompt};
}

}  // namespace

TokenSequence build_refinement_context(const TokenSequence& x,
                                       const TokenSequence& y_prev,
                                       const RefinementTemplate& tmpl,
                                       const Vocabulary& vocab) {
  if (tmpl.marker != TemplateMarker::kRefine) {
    throw InvalidSequenceKind(
        "refinement context requires a REF-marker template");
  }
  require_prompt(x, vocab);
  require_terminated(y_prev, SequenceKind::kResponse, vocab);
  std::vector<Token> out;
  out.reserve(x.size() + y_prev.size() + 3);
  out.push_back(vocab.bos());
  out.insert(out.end(), x.tokens.begin(), x.tokens.end());
  out.push_back(vocab.sep());
  append_without_eos(out, y_prev, vocab);
  out.push_back(vocab.ref());
  return finish(std::move(out), tmpl.max_context_len);
}

TokenSequence build_evaluation_context(const TokenSequence& x,
                                       const TokenSequence& y,
                                       const RefinementTemplate& tmpl,
                                       const Vocabulary& vocab) {
  if (tmpl.marker != TemplateMarker::kEvaluate) {
    throw InvalidSequenceKind(
        "evaluation context requires an EVAL-marker template");
  }
  require_prompt(x, vocab);
  require_terminated(y, SequenceKind::kResponse, vocab);
  std::vector<Token> out;
  out.reserve(x.size() + y.size() + 3);
  out.push_back(vocab.bos());
  out.insert(out.end(), x.tokens.begin(), x.tokens.end());
  out.push_back(vocab.sep());
  append_without_eos(out, y, vocab);
  out.push_back(vocab.eval());
  return finish(std::move(out), tmpl.max_context_len);
}

TokenSequence build_fewshot_context(const TokenSequence& x,
                                    std::span<const TokenSequence> history,
                                    const RefinementTemplate& tmpl,
                                    const Vocabulary& vocab) {
  if (tmpl.marker != TemplateMarker::kRefine) {
    throw InvalidSequenceKind("few-shot context requires a REF-marker template");
  }
  if (history.empty()) {
    throw InvalidSequenceKind("few-shot context requires at least one prior "
                              "response");
  }
  require_prompt(x, vocab);
  std::vector<Token> out;
  out.push_back(vocab.bos());
  out.insert(out.end(), x.tokens.begin(), x.tokens.end());
  for (const TokenSequence& y : history) {
    require_terminated(y, SequenceKind::kResponse, vocab);
    out.push_back(vocab.sep());
    append_without_eos(out, y, vocab);
  }
  out.push_back(vocab.ref());
  return finish(std::move(out), tmpl.max_context_len);
}

TokenSequence build_refine_with_eval_context(const TokenSequence& x,
                                             const TokenSequence& y_prev,
                                             const TokenSequence& e_prev,
                                             const RefinementTemplate& tmpl,
                                             const Vocabulary& vocab) {
  if (tmpl.marker != TemplateMarker::kRefine) {
    throw InvalidSequenceKind(
        "refinement context requires a REF-marker template");
  }
  require_prompt(x, vocab);
  require_terminated(y_prev, SequenceKind::kResponse, vocab);
  require_terminated(e_prev, SequenceKind::kEvaluation, vocab);
  std::vector<Token> out;
  out.push_back(vocab.bos());
  out.insert(out.end(), x.tokens.begin(), x.tokens.end());
  out.push_back(vocab.sep());
  append_without_eos(out, y_prev, vocab);
  out.push_back(vocab.sep());
  append_without_eos(out, e_prev, vocab);
  out.push_back(vocab.ref());
  return finish(std::move(out), tmpl.max_context_len);
}

TokenSequence build_direct_context(const TokenSequence& x,
                                   const Vocabulary& vocab) {
  require_prompt(x, vocab);
  std::vector<Token> out;
  out.reserve(x.size() + 1);
  out.push_back(vocab.bos());
  out.insert(out.end(), x.tokens.begin(), x.tokens.end());
  return TokenSequence{std::move(out), SequenceKind::kPrompt};
}

}  // namespace evolve
