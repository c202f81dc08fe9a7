#include "evolve/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "evolve/errors.hpp"
#include "evolve/kernels.hpp"

namespace evolve {

namespace {

double stable_sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// -log sigmoid(t) = softplus(-t)
double neg_log_sigmoid(double t) {
  if (t >= 0.0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

void require_batch(std::span<const PreferenceTriple> batch) {
  if (batch.empty()) throw EmptyBatch("loss over an empty batch");
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ValidationError("loss alpha must lie in [0,1], got " +
                          std::to_string(alpha));
  }
  if (!(beta > 0.0)) {
    throw ValidationError("loss beta must be > 0, got " +
                          std::to_string(beta));
  }
  if (!(preference_gamma > 0.0)) {
    throw ValidationError("preference gamma must be > 0, got " +
                          std::to_string(preference_gamma));
  }
}

PreferenceFunction::PreferenceFunction(PreferenceMode mode, double gamma,
                                       Scorer scorer)
    : mode_(mode), gamma_(gamma), scorer_(std::move(scorer)) {
  if (mode_ == PreferenceMode::kSoft && !(gamma_ > 0.0)) {
    throw ValidationError("soft preference requires gamma > 0");
  }
  if (!scorer_) {
    throw ValidationError("preference function requires a scorer");
  }
}

double PreferenceFunction::operator()(const TokenSequence& x,
                                      const TokenSequence& y2,
                                      const TokenSequence& y1) const {
  if (y2.tokens == y1.tokens) return 0.5;
  const double r2 = scorer_(x, y2);
  const double r1 = scorer_(x, y1);
  if (mode_ == PreferenceMode::kHard) {
    if (r2 > r1) return 1.0;
    if (r2 < r1) return 0.0;
    return 0.5;
  }
  return stable_sigmoid(gamma_ * (r2 - r1));
}

LossResult sft_loss(const PolicyModel& model,
                    std::span<const PreferenceTriple> batch,
                    const RefinementTemplate& tmpl, bool with_grad) {
  require_batch(batch);
  const auto& vocab = model.vocab();
  LossResult result;
  if (with_grad) result.grad.assign(model.parameters().size(), 0.0);
  double acc = 0.0;
  for (const auto& ex : batch) {
    const auto cx = build_direct_context(ex.prompt, vocab);
    const auto cr =
        build_refinement_context(ex.prompt, ex.rejected, tmpl, vocab);
    acc += -(log_prob(model, ex.chosen, cx) + log_prob(model, ex.chosen, cr));
    if (with_grad) {
      accumulate_log_prob_grad(model, ex.chosen, cx, -1.0, result.grad);
      accumulate_log_prob_grad(model, ex.chosen, cr, -1.0, result.grad);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  result.value = acc * inv;
  if (with_grad) kernels::scale(inv, result.grad.data(), result.grad.size());
  return result;
}

double v_value(const PolicyModel& model, const PolicyModel& ref,
               const TokenSequence& x, const TokenSequence& y1,
               const TokenSequence& y2, const RefinementTemplate& tmpl,
               double beta) {
  const auto& vocab = model.vocab();
  const auto ctx = build_refinement_context(x, y1, tmpl, vocab);
  return beta * (log_prob(model, y2, ctx) - log_prob(model, y1, ctx) -
                 log_prob(ref, y2, ctx) + log_prob(ref, y1, ctx));
}

LossResult sr_loss(const PolicyModel& model, const PolicyModel& ref,
                   std::span<const PreferenceTriple> batch,
                   const RefinementTemplate& tmpl, double beta,
                   bool with_grad) {
  require_batch(batch);
  const auto& vocab = model.vocab();
  LossResult result;
  if (with_grad) result.grad.assign(model.parameters().size(), 0.0);
  double acc = 0.0;
  for (const auto& ex : batch) {
    // v1 = v(x, y_l, y_w): context fixed by the rejected response
    const auto cl =
        build_refinement_context(ex.prompt, ex.rejected, tmpl, vocab);
    const double v1 =
        beta * (log_prob(model, ex.chosen, cl) -
                log_prob(model, ex.rejected, cl) -
                log_prob(ref, ex.chosen, cl) + log_prob(ref, ex.rejected, cl));
    // v2 = v(x, y_w, y_l): context fixed by the chosen response
    const auto cw =
        build_refinement_context(ex.prompt, ex.chosen, tmpl, vocab);
    const double v2 =
        beta * (log_prob(model, ex.rejected, cw) -
                log_prob(model, ex.chosen, cw) -
                log_prob(ref, ex.rejected, cw) + log_prob(ref, ex.chosen, cw));
    acc += (0.5 - v1) * (0.5 - v1) + (0.5 + v2) * (0.5 + v2);
    if (with_grad) {
      // d (0.5 - v1)^2 = -2 (0.5 - v1) dv1
      const double w1 = -2.0 * (0.5 - v1) * beta;
      accumulate_log_prob_grad(model, ex.chosen, cl, w1, result.grad);
      accumulate_log_prob_grad(model, ex.rejected, cl, -w1, result.grad);
      // d (0.5 + v2)^2 = 2 (0.5 + v2) dv2
      const double w2 = 2.0 * (0.5 + v2) * beta;
      accumulate_log_prob_grad(model, ex.rejected, cw, w2, result.grad);
      accumulate_log_prob_grad(model, ex.chosen, cw, -w2, result.grad);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  result.value = acc * inv;
  if (with_grad) kernels::scale(inv, result.grad.data(), result.grad.size());
  return result;
}

LossResult dpo_loss(const PolicyModel& model, const PolicyModel& ref,
                    std::span<const PreferenceTriple> batch, double beta,
                    bool with_grad) {
  require_batch(batch);
  const auto& vocab = model.vocab();
  LossResult result;
  if (with_grad) result.grad.assign(model.parameters().size(), 0.0);
  double acc = 0.0;
  for (const auto& ex : batch) {
    const auto cx = build_direct_context(ex.prompt, vocab);
    const double margin =
        beta * (log_prob(model, ex.chosen, cx) - log_prob(ref, ex.chosen, cx) -
                log_prob(model, ex.rejected, cx) +
                log_prob(ref, ex.rejected, cx));
    acc += neg_log_sigmoid(margin);
    if (with_grad) {
      const double w = -stable_sigmoid(-margin) * beta;
      accumulate_log_prob_grad(model, ex.chosen, cx, w, result.grad);
      accumulate_log_prob_grad(model, ex.rejected, cx, -w, result.grad);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  result.value = acc * inv;
  if (with_grad) kernels::scale(inv, result.grad.data(), result.grad.size());
  return result;
}

namespace {

LossResult mix_losses(double alpha, LossResult&& a, LossResult&& b,
                      bool with_grad) {
  LossResult result;
  result.value = alpha * a.value + (1.0 - alpha) * b.value;
  if (with_grad) {
    result.grad = std::move(a.grad);
    kernels::scale(alpha, result.grad.data(), result.grad.size());
    kernels::axpy(1.0 - alpha, b.grad.data(), result.grad.data(),
                  result.grad.size());
  }
  return result;
}

}  // namespace

LossResult evolve_pt_loss(const PolicyModel& model, const PolicyModel& ref,
                          std::span<const PreferenceTriple> batch,
                          const RefinementTemplate& tmpl,
                          const LossConfig& config, bool with_grad) {
  config.validate();
  auto sr = sr_loss(model, ref, batch, tmpl, config.beta, with_grad);
  auto dpo = dpo_loss(model, ref, batch, config.beta, with_grad);
  return mix_losses(config.alpha, std::move(sr), std::move(dpo), with_grad);
}

LossResult bt_sr_loss(const PolicyModel& model, const PolicyModel& ref,
                      std::span<const PreferenceTriple> batch,
                      const RefinementTemplate& tmpl, double beta,
                      bool second_term_flipped, bool with_grad) {
  require_batch(batch);
  const auto& vocab = model.vocab();
  LossResult result;
  if (with_grad) result.grad.assign(model.parameters().size(), 0.0);
  double acc = 0.0;
  for (const auto& ex : batch) {
    // First term conditions on y_l and rewards y_w over y_l.
    const auto cl =
        build_refinement_context(ex.prompt, ex.rejected, tmpl, vocab);
    const double t1 =
        beta * (log_prob(model, ex.chosen, cl) - log_prob(ref, ex.chosen, cl) -
                log_prob(model, ex.rejected, cl) +
                log_prob(ref, ex.rejected, cl));
    // Second term conditions on y_w and, as printed, rewards y_l over
    // y_w; the flipped switch negates its margin.
    const auto cw =
        build_refinement_context(ex.prompt, ex.chosen, tmpl, vocab);
    double t2 =
        beta * (log_prob(model, ex.rejected, cw) -
                log_prob(ref, ex.rejected, cw) -
                log_prob(model, ex.chosen, cw) + log_prob(ref, ex.chosen, cw));
    double sign2 = 1.0;
    if (second_term_flipped) {
      t2 = -t2;
      sign2 = -1.0;
    }
    acc += neg_log_sigmoid(t1) + neg_log_sigmoid(t2);
    if (with_grad) {
      const double w1 = -stable_sigmoid(-t1) * beta;
      accumulate_log_prob_grad(model, ex.chosen, cl, w1, result.grad);
      accumulate_log_prob_grad(model, ex.rejected, cl, -w1, result.grad);
      const double w2 = -stable_sigmoid(-t2) * beta * sign2;
      accumulate_log_prob_grad(model, ex.rejected, cw, w2, result.grad);
      accumulate_log_prob_grad(model, ex.chosen, cw, -w2, result.grad);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  result.value = acc * inv;
  if (with_grad) kernels::scale(inv, result.grad.data(), result.grad.size());
  return result;
}

LossResult bt_evolve_loss(const PolicyModel& model, const PolicyModel& ref,
                          std::span<const PreferenceTriple> batch,
                          const RefinementTemplate& tmpl,
                          const LossConfig& config, bool with_grad) {
  config.validate();
  auto bt = bt_sr_loss(model, ref, batch, tmpl, config.beta,
                       config.bt_second_term_flipped, with_grad);
  auto dpo = dpo_loss(model, ref, batch, config.beta, with_grad);
  return mix_losses(config.alpha, std::move(bt), std::move(dpo), with_grad);
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kSft:
      return "sft";
    case LossKind::kSr:
      return "sr";
    case LossKind::kDpo:
      return "dpo";
    case LossKind::kEvolvePt:
      return "evolve_pt";
    case LossKind::kBtSr:
      return "bt_sr";
    case LossKind::kBtEvolve:
      return "bt_evolve";
  }
  return "unknown";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "sft") return LossKind::kSft;
  if (name == "sr") return LossKind::kSr;
  if (name == "dpo") return LossKind::kDpo;
  if (name == "evolve_pt") return LossKind::kEvolvePt;
  if (name == "bt_sr") return LossKind::kBtSr;
  if (name == "bt_evolve") return LossKind::kBtEvolve;
  throw ValidationError("unknown loss kind: " + name);
}

LossResult evaluate_loss(LossKind kind, const PolicyModel& model,
                         const PolicyModel* ref,
                         std::span<const PreferenceTriple> batch,
                         const RefinementTemplate& tmpl,
                         const LossConfig& config, bool with_grad) {
  if (kind != LossKind::kSft && ref == nullptr) {
    throw ValidationError("loss " + loss_kind_name(kind) +
                          " requires a reference policy");
  }
  switch (kind) {
    case LossKind::kSft:
      return sft_loss(model, batch, tmpl, with_grad);
    case LossKind::kSr:
      return sr_loss(model, *ref, batch, tmpl, config.beta, with_grad);
    case LossKind::kDpo:
      return dpo_loss(model, *ref, batch, config.beta, with_grad);
    case LossKind::kEvolvePt:
      return evolve_pt_loss(model, *ref, batch, tmpl, config, with_grad);
    case LossKind::kBtSr:
      return bt_sr_loss(model, *ref, batch, tmpl, config.beta,
                        config.bt_second_term_flipped, with_grad);
    case LossKind::kBtEvolve:
      return bt_evolve_loss(model, *ref, batch, tmpl, config, with_grad);
  }
  throw ValidationError("unknown loss kind");
}

// ------------------------------------------------------------------ oracle

ResponseDistribution tilt_distribution(const ResponseDistribution& ref_dist,
                                       const TokenSequence& x,
                                       const TokenSequence& y1,
                                       const PreferenceFunction& pref,
                                       double beta) {
  if (!(beta > 0.0)) {
    throw ValidationError("oracle beta must be > 0");
  }
  ResponseDistribution tilted;
  double z = 0.0;
  for (const auto& [resp, p_ref] : ref_dist) {
    const auto y2 = TokenSequence{resp, SequenceKind::kResponse};
    const double p = pref(x, y2, y1);
    const double w = p_ref * std::exp(p / beta);
    tilted.emplace(resp, w);
    z += w;
  }
  const double inv = 1.0 / z;
  for (auto& [resp, w] : tilted) w *= inv;
  return tilted;
}

ResponseDistribution optimal_policy_oracle(const PolicyModel& ref,
                                           const TokenSequence& x,
                                           const TokenSequence& y1,
                                           const RefinementTemplate& tmpl,
                                           double beta,
                                           const PreferenceFunction& pref) {
  const auto ctx = build_refinement_context(x, y1, tmpl, ref.vocab());
  return tilt_distribution(enumerate_distribution(ref, ctx), x, y1, pref,
                           beta);
}

bool OptimalityReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const OptimalityCheck& c) { return c.pass; });
}

OptimalityReport verify_optimality(const PolicyModel& ref,
                                   std::span<const TokenSequence> prompts,
                                   const RefinementTemplate& tmpl, double beta,
                                   const PreferenceFunction& pref,
                                   double bound) {
  OptimalityReport report;
  for (const auto& x : prompts) {
    std::string xname;
    for (Token t : x.tokens) xname += std::to_string(t);
    // Conditioning responses y1 range over the whole response space,
    // which the direct enumeration conveniently lists.
    const auto ctx0 = build_direct_context(x, ref.vocab());
    const auto response_space = enumerate_distribution(ref, ctx0);
    double worst_sum = 0.0;
    double worst_pair = 0.0;
    std::size_t pair_failures = 0;
    for (const auto& [y1_tokens, y1_mass] : response_space) {
      (void)y1_mass;
      const auto y1 = TokenSequence{y1_tokens, SequenceKind::kResponse};
      const auto rctx = build_refinement_context(x, y1, tmpl, ref.vocab());
      const auto ref_dist = enumerate_distribution(ref, rctx);
      const auto opt = tilt_distribution(ref_dist, x, y1, pref, beta);

      double total = 0.0;
      for (const auto& [resp, p] : opt) total += p;
      worst_sum = std::max(worst_sum, std::fabs(total - 1.0));

      const double p_star_y1 = opt.at(y1_tokens);
      const double p_ref_y1 = ref_dist.at(y1_tokens);
      for (const auto& [y2_tokens, p_star_y2] : opt) {
        const auto y2 = TokenSequence{y2_tokens, SequenceKind::kResponse};
        const double lhs =
            beta * std::log((p_star_y2 * p_ref_y1) /
                            (p_star_y1 * ref_dist.at(y2_tokens)));
        const double rhs = pref(x, y2, y1) - 0.5;
        const double dev = std::fabs(lhs - rhs);
        if (dev > bound) {
          ++pair_failures;
          std::string pair;
          for (Token t : y1_tokens) pair += std::to_string(t) + ".";
          pair += " vs ";
          for (Token t : y2_tokens) pair += std::to_string(t) + ".";
          report.checks.push_back(
              {"eq-identity x=" + xname + " " + pair, dev, bound, false});
        }
        worst_pair = std::max(worst_pair, dev);
      }
    }
    report.checks.push_back({"oracle-normalization x=" + xname, worst_sum,
                             bound, worst_sum <= bound});
    report.checks.push_back({"optimality-identity x=" + xname, worst_pair,
                             bound,
                             worst_pair <= bound && pair_failures == 0});
  }
  return report;
}

}  // namespace evolve
