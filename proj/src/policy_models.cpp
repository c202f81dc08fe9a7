#include <algorithm>
#include <cmath>

#include "evolve/context.hpp"
#include "evolve/errors.hpp"
#include "evolve/kernels.hpp"
#include "evolve/policy.hpp"
#include "evolve/rng.hpp"

namespace evolve {

// ---------------------------------------------------------------- uniform

UniformPolicy::UniformPolicy(Vocabulary vocab, int max_response_length)
    : vocab_(std::move(vocab)), max_len_(max_response_length) {
  if (max_len_ < 1) {
    throw ValidationError("max response length must be >= 1");
  }
}

void UniformPolicy::next_logits(std::span<const Token> /*context*/,
                                std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void UniformPolicy::accumulate_logits_grad(std::span<const Token> /*context*/,
                                           std::span<const double> /*dlogits*/,
                                           std::span<double> /*grad*/) const {
  // No parameters, nothing to accumulate.
}

std::unique_ptr<PolicyModel> UniformPolicy::clone() const {
  return std::make_unique<UniformPolicy>(*this);
}

// ---------------------------------------------------------------- tabular

namespace {

// Appends the decision contexts reachable from `base` by emitting
// 0..max_len-1 content tokens, in lexicographic order.
void add_prefix_contexts(const std::vector<Token>& base,
                         const Vocabulary& vocab, int max_len,
                         std::map<std::vector<Token>, std::size_t>& rows,
                         std::size_t& next_row) {
  std::vector<Token> ctx = base;
  auto visit = [&](auto&& self, int depth) -> void {
    if (rows.emplace(ctx, next_row).second) ++next_row;
    if (depth >= max_len - 1) return;
    for (int t = 0; t < vocab.content_size(); ++t) {
      ctx.push_back(t);
      self(self, depth + 1);
      ctx.pop_back();
    }
  };
  visit(visit, 0);
}

// All responses of content length 0..max_len over the vocabulary, in
// lexicographic order, EOS-terminated.
std::vector<TokenSequence> all_responses(const Vocabulary& vocab,
                                         int max_len) {
  std::vector<TokenSequence> out;
  std::vector<Token> cur;
  auto visit = [&](auto&& self) -> void {
    std::vector<Token> resp = cur;
    resp.push_back(vocab.eos());
    out.push_back(make_response(std::move(resp)));
    if (static_cast<int>(cur.size()) >= max_len) return;
    for (int t = 0; t < vocab.content_size(); ++t) {
      cur.push_back(t);
      self(self);
      cur.pop_back();
    }
  };
  visit(visit);
  return out;
}

}  // namespace

TabularPolicy::TabularPolicy(Vocabulary vocab, int max_response_length,
                             std::vector<TokenSequence> prompts,
                             const TabularScope& scope)
    : vocab_(std::move(vocab)),
      max_len_(max_response_length),
      prompts_(std::move(prompts)),
      scope_(scope) {
  if (max_len_ < 1) {
    throw ValidationError("max response length must be >= 1");
  }
  std::size_t next_row = 0;
  const auto responses = (scope_.refinement || scope_.evaluation)
                             ? all_responses(vocab_, max_len_)
                             : std::vector<TokenSequence>{};
  const auto ref_tmpl = refine_template();
  const auto eval_tmpl = evaluate_template();
  for (const auto& x : prompts_) {
    validate_sequence(x, vocab_);
    if (scope_.direct) {
      add_prefix_contexts(build_direct_context(x, vocab_).tokens, vocab_,
                          max_len_, row_of_context_, next_row);
    }
    if (scope_.refinement) {
      for (const auto& y : responses) {
        add_prefix_contexts(
            build_refinement_context(x, y, ref_tmpl, vocab_).tokens, vocab_,
            max_len_, row_of_context_, next_row);
      }
    }
    if (scope_.evaluation) {
      for (const auto& y : responses) {
        add_prefix_contexts(
            build_evaluation_context(x, y, eval_tmpl, vocab_).tokens, vocab_,
            max_len_, row_of_context_, next_row);
      }
    }
  }
  params_.assign(row_of_context_.size() * vocab_.generation_size(), 0.0);
}

std::size_t TabularPolicy::row_index(std::span<const Token> context) const {
  std::vector<Token> key(context.begin(), context.end());
  auto it = row_of_context_.find(key);
  if (it == row_of_context_.end()) {
    std::string text;
    for (Token t : key) text += vocab_.token_name(t) + " ";
    throw ValidationError("tabular policy reached an unenumerated context: " +
                          text);
  }
  return it->second;
}

void TabularPolicy::next_logits(std::span<const Token> context,
                                std::span<double> out) const {
  const std::size_t row = row_index(context);
  const std::size_t width = vocab_.generation_size();
  const double* src = params_.data() + row * width;
  std::copy(src, src + width, out.begin());
}

void TabularPolicy::accumulate_logits_grad(std::span<const Token> context,
                                           std::span<const double> dlogits,
                                           std::span<double> grad) const {
  const std::size_t row = row_index(context);
  const std::size_t width = vocab_.generation_size();
  double* dst = grad.data() + row * width;
  for (std::size_t i = 0; i < width; ++i) dst[i] += dlogits[i];
}

std::unique_ptr<PolicyModel> TabularPolicy::clone() const {
  return std::make_unique<TabularPolicy>(*this);
}

std::span<double> TabularPolicy::logits_for(std::span<const Token> context) {
  const std::size_t row = row_index(context);
  const std::size_t width = vocab_.generation_size();
  return {params_.data() + row * width, width};
}

// ------------------------------------------------------------ tiny-neural

std::size_t TinyNeuralPolicy::w1_offset() const {
  return static_cast<std::size_t>(vocab_.size()) * dims_.embedding;
}
std::size_t TinyNeuralPolicy::b1_offset() const {
  return w1_offset() +
         static_cast<std::size_t>(dims_.hidden) * dims_.window *
             dims_.embedding;
}
std::size_t TinyNeuralPolicy::w2_offset() const {
  return b1_offset() + dims_.hidden;
}
std::size_t TinyNeuralPolicy::b2_offset() const {
  return w2_offset() +
         static_cast<std::size_t>(vocab_.generation_size()) * dims_.hidden;
}

TinyNeuralPolicy::TinyNeuralPolicy(Vocabulary vocab, int max_response_length,
                                   Dims dims, std::uint64_t init_seed)
    : vocab_(std::move(vocab)), max_len_(max_response_length), dims_(dims) {
  if (max_len_ < 1) {
    throw ValidationError("max response length must be >= 1");
  }
  if (dims_.embedding < 1 || dims_.hidden < 1 || dims_.window < 1) {
    throw ValidationError("tiny-neural dimensions must be positive");
  }
  const std::size_t total = b2_offset() + vocab_.generation_size();
  if (total > 10000) {
    throw ValidationError("tiny-neural parameter count " +
                          std::to_string(total) + " exceeds 10^4");
  }
  params_.assign(total, 0.0);
  Rng rng(derive_seed(init_seed, /*stream=*/0xeb0d));
  const double emb_std = 0.1;
  const double w1_std =
      1.0 / std::sqrt(static_cast<double>(dims_.window) * dims_.embedding);
  const double w2_std = 1.0 / std::sqrt(static_cast<double>(dims_.hidden));
  for (std::size_t i = 0; i < w1_offset(); ++i) {
    params_[i] = emb_std * rng.next_gaussian();
  }
  for (std::size_t i = w1_offset(); i < b1_offset(); ++i) {
    params_[i] = w1_std * rng.next_gaussian();
  }
  for (std::size_t i = w2_offset(); i < b2_offset(); ++i) {
    params_[i] = w2_std * rng.next_gaussian();
  }
  // biases stay zero
}

void TinyNeuralPolicy::window_tokens(std::span<const Token> context,
                                     std::span<Token> out) const {
  const int w = dims_.window;
  const int n = static_cast<int>(context.size());
  for (int p = 0; p < w; ++p) {
    const int src = n - w + p;
    out[p] = src >= 0 ? context[src] : vocab_.bos();
  }
}

void TinyNeuralPolicy::forward(std::span<const Token> context,
                               std::span<double> input,
                               std::span<double> hidden,
                               std::span<double> logits) const {
  const int e = dims_.embedding;
  const int w = dims_.window;
  const int h = dims_.hidden;
  const int g = vocab_.generation_size();
  std::vector<Token> win(w);
  window_tokens(context, win);
  for (int p = 0; p < w; ++p) {
    if (!vocab_.contains(win[p])) {
      throw InvalidToken("context token id " + std::to_string(win[p]) +
                         " out of vocabulary");
    }
    const double* row = params_.data() + emb_offset() +
                        static_cast<std::size_t>(win[p]) * e;
    std::copy(row, row + e, input.begin() + static_cast<std::size_t>(p) * e);
  }
  const int in_dim = w * e;
  const double* w1 = params_.data() + w1_offset();
  const double* b1 = params_.data() + b1_offset();
  for (int j = 0; j < h; ++j) {
    hidden[j] = std::tanh(
        kernels::dot(w1 + static_cast<std::size_t>(j) * in_dim, input.data(),
                     in_dim) +
        b1[j]);
  }
  const double* w2 = params_.data() + w2_offset();
  const double* b2 = params_.data() + b2_offset();
  for (int j = 0; j < g; ++j) {
    logits[j] = kernels::dot(w2 + static_cast<std::size_t>(j) * h,
                             hidden.data(), h) +
                b2[j];
  }
}

void TinyNeuralPolicy::next_logits(std::span<const Token> context,
                                   std::span<double> out) const {
  std::vector<double> input(static_cast<std::size_t>(dims_.window) *
                            dims_.embedding);
  std::vector<double> hidden(dims_.hidden);
  forward(context, input, hidden, out);
}

void TinyNeuralPolicy::accumulate_logits_grad(std::span<const Token> context,
                                              std::span<const double> dlogits,
                                              std::span<double> grad) const {
  const int e = dims_.embedding;
  const int w = dims_.window;
  const int h = dims_.hidden;
  const int g = vocab_.generation_size();
  const int in_dim = w * e;

  std::vector<double> input(in_dim);
  std::vector<double> hidden(h);
  std::vector<double> logits(g);
  forward(context, input, hidden, logits);

  const double* w1 = params_.data() + w1_offset();
  const double* w2 = params_.data() + w2_offset();
  double* g_w1 = grad.data() + w1_offset();
  double* g_b1 = grad.data() + b1_offset();
  double* g_w2 = grad.data() + w2_offset();
  double* g_b2 = grad.data() + b2_offset();

  // output layer
  std::vector<double> dhidden(h, 0.0);
  for (int j = 0; j < g; ++j) {
    const double d = dlogits[j];
    if (d == 0.0) continue;
    g_b2[j] += d;
    kernels::axpy(d, hidden.data(), g_w2 + static_cast<std::size_t>(j) * h, h);
    kernels::axpy(d, w2 + static_cast<std::size_t>(j) * h, dhidden.data(), h);
  }
  // hidden layer (tanh')
  std::vector<double> dinput(in_dim, 0.0);
  for (int j = 0; j < h; ++j) {
    const double dpre = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
    if (dpre == 0.0) continue;
    g_b1[j] += dpre;
    kernels::axpy(dpre, input.data(),
                  g_w1 + static_cast<std::size_t>(j) * in_dim, in_dim);
    kernels::axpy(dpre, w1 + static_cast<std::size_t>(j) * in_dim,
                  dinput.data(), in_dim);
  }
  // embedding table
  std::vector<Token> win(w);
  window_tokens(context, win);
  for (int p = 0; p < w; ++p) {
    double* row = grad.data() + emb_offset() +
                  static_cast<std::size_t>(win[p]) * e;
    kernels::axpy(1.0, dinput.data() + static_cast<std::size_t>(p) * e, row,
                  e);
  }
}

std::unique_ptr<PolicyModel> TinyNeuralPolicy::clone() const {
  return std::make_unique<TinyNeuralPolicy>(*this);
}

}  // namespace evolve
