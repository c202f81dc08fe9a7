#include <algorithm>
#include <cmath>

#include "evolve/errors.hpp"
#include "evolve/kernels.hpp"
#include "evolve/policy.hpp"
#include "evolve/rng.hpp"

namespace evolve {

namespace {

void require_target(const PolicyModel& model, const TokenSequence& y) {
  const auto& vocab = model.vocab();
  if (y.kind == SequenceKind::kPrompt) {
    throw InvalidSequenceKind("log_prob target must be a response or "
                              "evaluation, got a prompt");
  }
  if (y.tokens.empty() || y.tokens.back() != vocab.eos()) {
    throw ValidationError("log_prob target must terminate with EOS");
  }
  for (std::size_t i = 0; i + 1 < y.tokens.size(); ++i) {
    const Token t = y.tokens[i];
    if (!vocab.contains(t)) {
      throw InvalidToken("token id " + std::to_string(t) +
                         " out of vocabulary");
    }
    if (!vocab.is_content(t)) {
      throw ValidationError("log_prob target holds control token " +
                            vocab.token_name(t) + " before EOS");
    }
  }
  const std::size_t content = y.tokens.size() - 1;
  if (content > static_cast<std::size_t>(model.max_response_length())) {
    throw ValidationError("target content length " + std::to_string(content) +
                          " exceeds the model's max response length " +
                          std::to_string(model.max_response_length()));
  }
}

void softmax_inplace(std::span<double> logits) {
  const double m = kernels::max(logits.data(), logits.size());
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - m);
    sum += v;
  }
  const double inv = 1.0 / sum;
  kernels::scale(inv, logits.data(), logits.size());
}

}  // namespace

std::vector<double> next_token_probabilities(const PolicyModel& model,
                                             std::span<const Token> context,
                                             double temperature) {
  if (!(temperature > 0.0)) {
    throw InvalidTemperature("temperature must be > 0, got " +
                             std::to_string(temperature));
  }
  std::vector<double> probs(model.vocab().generation_size());
  model.next_logits(context, probs);
  if (temperature != 1.0) {
    kernels::scale(1.0 / temperature, probs.data(), probs.size());
  }
  softmax_inplace(probs);
  return probs;
}

double log_prob(const PolicyModel& model, const TokenSequence& y,
                const TokenSequence& context) {
  require_target(model, y);
  const auto& vocab = model.vocab();
  const int max_len = model.max_response_length();
  std::vector<Token> ctx = context.tokens;
  std::vector<double> probs(vocab.generation_size());
  double lp = 0.0;
  int emitted = 0;
  for (Token t : y.tokens) {
    if (emitted == max_len) {
      // EOS is forced here; the step has probability 1.
      break;
    }
    model.next_logits(ctx, probs);
    softmax_inplace(probs);
    const double p = probs[vocab.generation_index(t)];
    lp += std::log(std::max(p, kProbFloor));
    if (t == vocab.eos()) break;
    ctx.push_back(t);
    ++emitted;
  }
  return lp;
}

void accumulate_log_prob_grad(const PolicyModel& model, const TokenSequence& y,
                              const TokenSequence& context, double weight,
                              std::span<double> grad) {
  require_target(model, y);
  if (weight == 0.0 || grad.empty()) return;
  const auto& vocab = model.vocab();
  const int max_len = model.max_response_length();
  std::vector<Token> ctx = context.tokens;
  std::vector<double> probs(vocab.generation_size());
  std::vector<double> dlogits(vocab.generation_size());
  int emitted = 0;
  for (Token t : y.tokens) {
    if (emitted == max_len) break;
    model.next_logits(ctx, probs);
    softmax_inplace(probs);
    const int idx = vocab.generation_index(t);
    if (probs[idx] >= kProbFloor) {
      // d log softmax_idx / d logit_j = 1{j==idx} - softmax_j
      for (std::size_t j = 0; j < probs.size(); ++j) dlogits[j] = -probs[j];
      dlogits[idx] += 1.0;
      if (weight != 1.0) {
        kernels::scale(weight, dlogits.data(), dlogits.size());
      }
      model.accumulate_logits_grad(ctx, dlogits, grad);
    }
    // A floored step contributes the constant log(kProbFloor): zero grad.
    if (t == vocab.eos()) break;
    ctx.push_back(t);
    ++emitted;
  }
}

std::vector<double> log_prob_grad(const PolicyModel& model,
                                  const TokenSequence& y,
                                  const TokenSequence& context) {
  std::vector<double> grad(model.parameters().size(), 0.0);
  accumulate_log_prob_grad(model, y, context, 1.0, grad);
  return grad;
}

TokenSequence sample(const PolicyModel& model, const TokenSequence& context,
                     double temperature, std::uint64_t seed) {
  if (!(temperature > 0.0)) {
    throw InvalidTemperature("temperature must be > 0, got " +
                             std::to_string(temperature));
  }
  const auto& vocab = model.vocab();
  const int max_len = model.max_response_length();
  Rng rng(seed);
  std::vector<Token> ctx = context.tokens;
  std::vector<Token> out;
  for (int step = 0; step < max_len; ++step) {
    const auto probs = next_token_probabilities(model, ctx, temperature);
    const double u = rng.next_double();
    double cum = 0.0;
    int picked = static_cast<int>(probs.size()) - 1;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      cum += probs[j];
      if (u < cum) {
        picked = static_cast<int>(j);
        break;
      }
    }
    const Token t = vocab.generation_token(picked);
    if (t == vocab.eos()) {
      out.push_back(t);
      return make_response(std::move(out));
    }
    out.push_back(t);
    ctx.push_back(t);
  }
  out.push_back(vocab.eos());  // truncated at max length
  return make_response(std::move(out));
}

TokenSequence greedy_decode(const PolicyModel& model,
                            const TokenSequence& context) {
  const auto& vocab = model.vocab();
  const int max_len = model.max_response_length();
  std::vector<Token> ctx = context.tokens;
  std::vector<Token> out;
  std::vector<double> logits(vocab.generation_size());
  for (int step = 0; step < max_len; ++step) {
    model.next_logits(ctx, logits);
    int best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j) {
      if (logits[j] > logits[best]) best = static_cast<int>(j);
    }
    const Token t = vocab.generation_token(best);
    if (t == vocab.eos()) {
      out.push_back(t);
      return make_response(std::move(out));
    }
    out.push_back(t);
    ctx.push_back(t);
  }
  out.push_back(vocab.eos());
  return make_response(std::move(out));
}

std::map<std::vector<Token>, double> enumerate_distribution(
    const PolicyModel& model, const TokenSequence& context,
    std::size_t max_support) {
  const auto& vocab = model.vocab();
  const int max_len = model.max_response_length();
  const int v = vocab.content_size();
  std::size_t support = 0;
  std::size_t layer = 1;
  for (int m = 0; m <= max_len; ++m) {
    support += layer;
    if (support > max_support) {
      throw EnumerationTooLarge(
          "response space exceeds " + std::to_string(max_support) +
          " outcomes for max length " + std::to_string(max_len));
    }
    layer *= static_cast<std::size_t>(v);
  }

  std::map<std::vector<Token>, double> dist;
  std::vector<Token> ctx = context.tokens;
  std::vector<Token> prefix;

  auto visit = [&](auto&& self, double mass, int depth) -> void {
    if (depth == max_len) {
      // EOS forced: all remaining mass ends the response here.
      std::vector<Token> resp = prefix;
      resp.push_back(vocab.eos());
      dist.emplace(std::move(resp), mass);
      return;
    }
    std::vector<double> probs(vocab.generation_size());
    model.next_logits(ctx, probs);
    softmax_inplace(probs);
    for (double& p : probs) p = std::max(p, kProbFloor);
    {
      std::vector<Token> resp = prefix;
      resp.push_back(vocab.eos());
      dist.emplace(std::move(resp),
                   mass * probs[vocab.generation_index(vocab.eos())]);
    }
    for (int t = 0; t < v; ++t) {
      const double p = probs[vocab.generation_index(t)];
      ctx.push_back(t);
      prefix.push_back(t);
      self(self, mass * p, depth + 1);
      prefix.pop_back();
      ctx.pop_back();
    }
  };
  visit(visit, 1.0, 0);
  return dist;
}

std::shared_ptr<const PolicyModel> snapshot_reference(
    const PolicyModel& model) {
  return std::shared_ptr<const PolicyModel>(model.clone());
}

}  // namespace evolve
