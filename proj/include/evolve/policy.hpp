#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "evolve/sequence.hpp"
#include "evolve/vocab.hpp"

namespace evolve {

// Probability floor applied before taking logs, so the log-ratio losses
// stay finite for degenerate policies.
inline constexpr double kProbFloor = 1e-12;

// Autoregressive policy over responses: at every step it scores the
// generatable tokens (content + EOS) given the conditioning context plus
// the tokens emitted so far. Parameters are exposed as one flat vector
// of 64-bit reals. Generation stops at EOS; after max_response_length
// content tokens EOS is forced, which keeps the response space finite
// and the distribution over it exactly normalized.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual int max_response_length() const = 0;
  virtual std::string architecture() const = 0;

  virtual std::span<const double> parameters() const = 0;
  virtual std::span<double> mutable_parameters() = 0;

  // Writes the logits over the generatable tokens for `context`
  // (the conditioning sequence plus any emitted prefix) into `out`,
  // which has vocab().generation_size() slots.
  virtual void next_logits(std::span<const Token> context,
                           std::span<double> out) const = 0;

  // Accumulates d(logits)/d(theta)^T * dlogits for one step into `grad`
  // (a |theta|-sized vector). Reverse-mode companion of next_logits.
  virtual void accumulate_logits_grad(std::span<const Token> context,
                                      std::span<const double> dlogits,
                                      std::span<double> grad) const = 0;

  virtual std::unique_ptr<PolicyModel> clone() const = 0;
};

// Parameter-free policy, uniform over the generatable tokens at every
// step. Serves as a closed-form reference in tests and as the vacuous
// case of the gradient contract (empty theta, empty gradient).
class UniformPolicy final : public PolicyModel {
 public:
  UniformPolicy(Vocabulary vocab, int max_response_length);

  const Vocabulary& vocab() const override { return vocab_; }
  int max_response_length() const override { return max_len_; }
  std::string architecture() const override { return "uniform"; }
  std::span<const double> parameters() const override { return {}; }
  std::span<double> mutable_parameters() override { return {}; }
  void next_logits(std::span<const Token> context,
                   std::span<double> out) const override;
  void accumulate_logits_grad(std::span<const Token> context,
                              std::span<const double> dlogits,
                              std::span<double> grad) const override;
  std::unique_ptr<PolicyModel> clone() const override;

 private:
  Vocabulary vocab_;
  int max_len_;
};

// Which context families a tabular policy allocates rows for.
struct TabularScope {
  bool direct = true;       // BOS.x and emitted prefixes
  bool refinement = true;   // BOS.x.SEP.y.REF and prefixes, all responses y
  bool evaluation = false;  // BOS.x.SEP.y.EVAL and prefixes
  // Remaining strategy contexts (few-shot depth > 2, refine-with-eval)
  // blow up combinatorially and stay out of the tabular closure; the
  // neural policy covers them.
};

// One logit row per enumerated decision context of a micro-instance.
// Contexts outside the enumerated set raise instead of defaulting, so
// an oracle can never silently consult an untrained row.
class TabularPolicy final : public PolicyModel {
 public:
  // Enumerates every decision context reachable from `prompts` under the
  // given scope: for each conditioning sequence, the states after 0 to
  // max_response_length-1 emitted content tokens. Logits start at zero
  // (uniform next-token distribution).
  TabularPolicy(Vocabulary vocab, int max_response_length,
                std::vector<TokenSequence> prompts,
                const TabularScope& scope = TabularScope{});

  const Vocabulary& vocab() const override { return vocab_; }
  int max_response_length() const override { return max_len_; }
  std::string architecture() const override { return "tabular"; }
  std::span<const double> parameters() const override { return params_; }
  std::span<double> mutable_parameters() override { return params_; }
  void next_logits(std::span<const Token> context,
                   std::span<double> out) const override;
  void accumulate_logits_grad(std::span<const Token> context,
                              std::span<const double> dlogits,
                              std::span<double> grad) const override;
  std::unique_ptr<PolicyModel> clone() const override;

  std::size_t context_count() const { return row_of_context_.size(); }
  // Direct access to one context's logit row, for constructing
  // point-mass and otherwise hand-shaped policies in tests.
  std::span<double> logits_for(std::span<const Token> context);

  const std::vector<TokenSequence>& prompts() const { return prompts_; }
  const TabularScope& scope() const { return scope_; }

 private:
  std::size_t row_index(std::span<const Token> context) const;

  Vocabulary vocab_;
  int max_len_;
  std::vector<TokenSequence> prompts_;
  TabularScope scope_;
  // Context token-string -> row. Deterministic construction order.
  std::map<std::vector<Token>, std::size_t> row_of_context_;
  std::vector<double> params_;
};

// Fixed-window MLP: the last `window` context tokens are embedded,
// concatenated, passed through one tanh hidden layer and projected to
// generation logits. Positions before the context start are padded
// with BOS, which never occurs mid-context.
class TinyNeuralPolicy final : public PolicyModel {
 public:
  struct Dims {
    int embedding = 8;
    int hidden = 64;
    int window = 12;
  };

  TinyNeuralPolicy(Vocabulary vocab, int max_response_length, Dims dims,
                   std::uint64_t init_seed);

  const Vocabulary& vocab() const override { return vocab_; }
  int max_response_length() const override { return max_len_; }
  std::string architecture() const override { return "tiny-neural"; }
  std::span<const double> parameters() const override { return params_; }
  std::span<double> mutable_parameters() override { return params_; }
  void next_logits(std::span<const Token> context,
                   std::span<double> out) const override;
  void accumulate_logits_grad(std::span<const Token> context,
                              std::span<const double> dlogits,
                              std::span<double> grad) const override;
  std::unique_ptr<PolicyModel> clone() const override;

  const Dims& dims() const { return dims_; }

 private:
  // Layout in params_: [embedding | W1 | b1 | W2 | b2].
  std::size_t emb_offset() const { return 0; }
  std::size_t w1_offset() const;
  std::size_t b1_offset() const;
  std::size_t w2_offset() const;
  std::size_t b2_offset() const;
  void forward(std::span<const Token> context, std::span<double> input,
               std::span<double> hidden, std::span<double> logits) const;
  void window_tokens(std::span<const Token> context,
                     std::span<Token> out) const;

  Vocabulary vocab_;
  int max_len_;
  Dims dims_;
  std::vector<double> params_;
};

// --- operations over the shared contract ---

// Per-step probabilities of every generatable token, softmax of the
// model's logits with optional temperature (logits/T).
std::vector<double> next_token_probabilities(const PolicyModel& model,
                                             std::span<const Token> context,
                                             double temperature = 1.0);

// Sum over steps of log P(y_t | context, y_<t), including the EOS step.
// Probabilities are floored at kProbFloor before the log. A response of
// exactly max_response_length content tokens has its EOS forced, which
// contributes log 1 = 0.
double log_prob(const PolicyModel& model, const TokenSequence& y,
                const TokenSequence& context);

// d log_prob / d theta, accumulated analytically step by step.
std::vector<double> log_prob_grad(const PolicyModel& model,
                                  const TokenSequence& y,
                                  const TokenSequence& context);
// As above but adds `weight` times the gradient into `grad`.
void accumulate_log_prob_grad(const PolicyModel& model, const TokenSequence& y,
                              const TokenSequence& context, double weight,
                              std::span<double> grad);

// Autoregressive sample at `temperature` (> 0), deterministic in `seed`.
TokenSequence sample(const PolicyModel& model, const TokenSequence& context,
                     double temperature, std::uint64_t seed);

// Argmax decode; the temperature -> 0 limit as a distinct mode.
TokenSequence greedy_decode(const PolicyModel& model,
                            const TokenSequence& context);

// Every response of content length <= max_response_length with its
// probability. Refuses spaces larger than `max_support` outcomes.
std::map<std::vector<Token>, double> enumerate_distribution(
    const PolicyModel& model, const TokenSequence& context,
    std::size_t max_support = 10000);

// Deep frozen copy serving as pi_ref.
std::shared_ptr<const PolicyModel> snapshot_reference(const PolicyModel& model);

// --- checkpoints ---
// Binary format: magic "EVLB", u32 version, architecture tag, vocabulary
// manifest hash, shape metadata, then the flat little-endian f64
// parameter array. Loading across mismatched vocabulary hashes fails.
void save_checkpoint(const PolicyModel& model,
                     const std::filesystem::path& path);
std::unique_ptr<PolicyModel> load_checkpoint(const std::filesystem::path& path,
                                             const Vocabulary& vocab);

}  // namespace evolve
