#include "evolve/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <tuple>

#include "evolve/context.hpp"
#include "evolve/objectives.hpp"
#include "evolve/pipeline.hpp"
#include "evolve/policy.hpp"
#include "evolve/reward.hpp"
#include "evolve/rng.hpp"
#include "json.hpp"

namespace evolve {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// V=4, k=2, L=2 micro-instance.
constexpr int kMicroContent = 4;
constexpr int kMicroPromptLen = 2;
constexpr int kMicroMaxLen = 2;

std::vector<TokenSequence> micro_prompts(const Vocabulary& vocab, int count) {
  auto all = all_task_prompts(vocab, kMicroPromptLen);
  all.resize(static_cast<std::size_t>(count));
  return all;
}

std::vector<TokenSequence> micro_responses(const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  std::vector<Token> cur;
  auto visit = [&](auto&& self) -> void {
    auto resp = cur;
    resp.push_back(vocab.eos());
    out.push_back(make_response(std::move(resp)));
    if (static_cast<int>(cur.size()) >= kMicroMaxLen) return;
    for (int t = 0; t < vocab.content_size(); ++t) {
      cur.push_back(t);
      self(self);
      cur.pop_back();
    }
  };
  visit(visit);
  return out;
}

void randomize(PolicyModel& model, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (double& p : model.mutable_parameters()) {
    p = scale * (2.0 * rng.next_double() - 1.0);
  }
}

std::vector<PreferenceTriple> random_batch(
    const std::vector<TokenSequence>& prompts,
    const std::vector<TokenSequence>& responses, std::size_t size,
    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PreferenceTriple> batch;
  while (batch.size() < size) {
    const auto& x = prompts[rng.next_below(prompts.size())];
    const auto& a = responses[rng.next_below(responses.size())];
    const auto& b = responses[rng.next_below(responses.size())];
    if (a.tokens == b.tokens) continue;
    batch.emplace_back(x, a, b);
  }
  return batch;
}

std::vector<double> finite_difference(
    PolicyModel& model, const std::function<double()>& f, double step) {
  auto params = model.mutable_parameters();
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double hi = f();
    params[i] = saved - step;
    const double lo = f();
    params[i] = saved;
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

double max_relative_error(const std::vector<double>& analytic,
                          const std::vector<double>& fd) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::fabs(analytic[i] - fd[i]) /
                                (1.0 + std::fabs(fd[i])));
  }
  return worst;
}

VerifyCheck reference_point_check(const VerifyOptions& opts) {
  const auto start = Clock::now();
  const Vocabulary vocab(kMicroContent);
  const auto tmpl = refine_template();
  const auto prompts = micro_prompts(vocab, 3);
  const auto responses = micro_responses(vocab);
  const double ln2 = std::log(2.0);

  double worst = 0.0;
  for (int rep = 0; rep < opts.reference_batches; ++rep) {
    TabularPolicy model(vocab, kMicroMaxLen, prompts);
    randomize(model, derive_seed(opts.seed, 0xa1, rep), 2.0);
    const auto ref = snapshot_reference(model);
    const auto batch = random_batch(prompts, responses, 1 + rep % 5,
                                    derive_seed(opts.seed, 0xa2, rep));
    LossConfig config;
    config.alpha = 0.8;
    config.beta = 0.05;
    worst = std::max(
        worst, std::fabs(sr_loss(model, *ref, batch, tmpl, config.beta, false)
                             .value -
                         0.5));
    worst = std::max(
        worst,
        std::fabs(dpo_loss(model, *ref, batch, config.beta, false).value -
                  ln2));
    worst = std::max(
        worst, std::fabs(bt_sr_loss(model, *ref, batch, tmpl, config.beta,
                                    false, false)
                             .value -
                         2.0 * ln2));
    worst = std::max(
        worst,
        std::fabs(evolve_pt_loss(model, *ref, batch, tmpl, config, false)
                      .value -
                  (0.8 * 0.5 + 0.2 * ln2)));
    worst = std::max(
        worst,
        std::fabs(bt_evolve_loss(model, *ref, batch, tmpl, config, false)
                      .value -
                  1.8 * ln2));
  }
  return {"reference-point-loss-values", worst, 1e-12, worst < 1e-12,
          seconds_since(start)};
}

std::vector<VerifyCheck> gradient_checks(const VerifyOptions& opts) {
  const Vocabulary vocab(kMicroContent);
  const auto tmpl = refine_template();
  const auto prompts = micro_prompts(vocab, 2);
  const auto responses = micro_responses(vocab);
  const LossKind kinds[] = {LossKind::kSft,  LossKind::kSr,
                            LossKind::kDpo,  LossKind::kEvolvePt,
                            LossKind::kBtSr, LossKind::kBtEvolve};
  constexpr double kTol = 1e-5;
  constexpr double kStep = 1e-4;

  std::vector<VerifyCheck> checks;
  for (const char* arch : {"tabular", "tiny-neural"}) {
    std::unique_ptr<PolicyModel> model;
    std::unique_ptr<PolicyModel> ref;
    if (std::string(arch) == "tabular") {
      model = std::make_unique<TabularPolicy>(vocab, kMicroMaxLen, prompts);
      ref = std::make_unique<TabularPolicy>(vocab, kMicroMaxLen, prompts);
    } else {
      TinyNeuralPolicy::Dims dims{4, 8, 8};
      model = std::make_unique<TinyNeuralPolicy>(vocab, kMicroMaxLen, dims,
                                                 derive_seed(opts.seed, 1, 0));
      ref = std::make_unique<TinyNeuralPolicy>(vocab, kMicroMaxLen, dims,
                                               derive_seed(opts.seed, 1, 1));
    }
    randomize(*ref, derive_seed(opts.seed, 0xb0, 0), 0.8);
    for (LossKind kind : kinds) {
      const auto start = Clock::now();
      double worst = 0.0;
      for (int rep = 0; rep < opts.gradient_configs; ++rep) {
        randomize(*model, derive_seed(opts.seed, 0xb1, rep), 0.8);
        const auto batch =
            random_batch(prompts, responses, 1 + rep % 3,
                         derive_seed(opts.seed, 0xb2, rep));
        LossConfig config;
        config.alpha = 0.8;
        config.beta = 0.2;
        const auto loss =
            evaluate_loss(kind, *model, ref.get(), batch, tmpl, config, true);
        const auto fd = finite_difference(
            *model,
            [&] {
              return evaluate_loss(kind, *model, ref.get(), batch, tmpl,
                                   config, false)
                  .value;
            },
            kStep);
        worst = std::max(worst, max_relative_error(loss.grad, fd));
      }
      checks.push_back({"gradient-" + loss_kind_name(kind) + "-" + arch,
                        worst, kTol, worst < kTol, seconds_since(start)});
    }
  }
  return checks;
}

std::vector<VerifyCheck> oracle_checks(const VerifyOptions& opts) {
  const Vocabulary vocab(kMicroContent);
  const auto tmpl = refine_template();
  const auto prompts = micro_prompts(vocab, 2);
  const RewardOracle oracle(vocab);
  auto scorer = [&oracle](const TokenSequence& x, const TokenSequence& y) {
    return oracle.score(x, y);
  };

  std::vector<VerifyCheck> checks;
  for (const char* mode : {"hard", "soft"}) {
    const auto start = Clock::now();
    const auto pref = std::string(mode) == "hard"
                          ? PreferenceFunction::hard(scorer)
                          : PreferenceFunction::soft(4.0, scorer);
    double worst_sum = 0.0;
    double worst_pair = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
      TabularPolicy ref_model(vocab, kMicroMaxLen, prompts);
      randomize(ref_model, derive_seed(opts.seed, 0xc0, rep), 1.3);
      const auto report =
          verify_optimality(ref_model, prompts, tmpl, 0.2, pref);
      for (const auto& check : report.checks) {
        if (check.name.rfind("oracle-normalization", 0) == 0) {
          worst_sum = std::max(worst_sum, check.measured);
        } else {
          worst_pair = std::max(worst_pair, check.measured);
        }
      }
    }
    checks.push_back({std::string("oracle-normalization-") + mode, worst_sum,
                      1e-9, worst_sum < 1e-9, seconds_since(start)});
    checks.push_back({std::string("optimality-identity-") + mode, worst_pair,
                      1e-9, worst_pair < 1e-9, seconds_since(start)});
  }
  return checks;
}

std::vector<VerifyCheck> sr_recovery_check(const VerifyOptions& opts) {
  const auto start = Clock::now();
  const Vocabulary vocab(kMicroContent);
  const auto tmpl = refine_template();
  const auto prompts = micro_prompts(vocab, 3);
  const auto responses = micro_responses(vocab);
  constexpr double kBeta = 0.25;

  TabularPolicy model(vocab, kMicroMaxLen, prompts);
  const auto ref = snapshot_reference(model);  // uniform reference

  // Reversed pairs over one prompt would pin the same log-ratio to +1/2
  // and -1/2 at once; keep the constraint set consistent.
  std::vector<PreferenceTriple> batch;
  {
    Rng rng(derive_seed(opts.seed, 0xd0, 0));
    std::set<std::tuple<std::vector<Token>, std::vector<Token>,
                        std::vector<Token>>>
        seen;
    while (batch.size() < 6) {
      const auto& x = prompts[rng.next_below(prompts.size())];
      const auto& w = responses[rng.next_below(responses.size())];
      const auto& l = responses[rng.next_below(responses.size())];
      if (w.tokens == l.tokens) continue;
      if (seen.count({x.tokens, l.tokens, w.tokens}) > 0) continue;
      if (!seen.insert({x.tokens, w.tokens, l.tokens}).second) continue;
      batch.emplace_back(x, w, l);
    }
  }

  TrainConfig cfg;
  cfg.learning_rate = 2.0;
  cfg.steps = 10000;
  cfg.batch_size = static_cast<int>(batch.size());
  cfg.optimizer = Optimizer::kSgd;
  cfg.loss = LossKind::kSr;
  LossConfig loss_cfg;
  loss_cfg.beta = kBeta;
  const auto result = train(model, ref.get(), batch, tmpl, loss_cfg, cfg);

  double worst_v = 0.0;
  for (const auto& ex : batch) {
    worst_v = std::max(
        worst_v, std::fabs(v_value(model, *ref, ex.prompt, ex.rejected,
                                   ex.chosen, tmpl, kBeta) -
                           0.5));
    worst_v = std::max(
        worst_v, std::fabs(v_value(model, *ref, ex.prompt, ex.chosen,
                                   ex.rejected, tmpl, kBeta) +
                           0.5));
  }
  const double elapsed = seconds_since(start);
  return {{"sr-minimization-loss", result.final_loss, 1e-4,
           result.final_loss < 1e-4, elapsed},
          {"sr-minimization-v-recovery", worst_v, 1e-3, worst_v < 1e-3,
           elapsed}};
}

}  // namespace

std::vector<VerifyCheck> run_verification_battery(const VerifyOptions& opts) {
  std::vector<VerifyCheck> checks;
  checks.push_back(reference_point_check(opts));
  for (auto& c : gradient_checks(opts)) checks.push_back(std::move(c));
  for (auto& c : oracle_checks(opts)) checks.push_back(std::move(c));
  for (auto& c : sr_recovery_check(opts)) checks.push_back(std::move(c));
  return checks;
}

bool all_checks_pass(const std::vector<VerifyCheck>& checks) {
  return std::all_of(checks.begin(), checks.end(),
                     [](const VerifyCheck& c) { return c.pass; });
}

std::string verify_report_json(const std::vector<VerifyCheck>& checks) {
  nlohmann::json j;
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    j["checks"].push_back({{"name", c.name},
                           {"measured", c.measured},
                           {"bound", c.bound},
                           {"pass", c.pass},
                           {"seconds", c.seconds}});
  }
  j["all_pass"] = all_checks_pass(checks);
  return j.dump(2);
}

}  // namespace evolve
