#include <algorithm>
#include <cmath>

#include "evolve/errors.hpp"
#include "evolve/kernels.hpp"
#include "evolve/pipeline.hpp"
#include "evolve/rng.hpp"

namespace evolve {

std::string optimizer_name(Optimizer opt) {
  return opt == Optimizer::kSgd ? "sgd" : "adam";
}

Optimizer optimizer_from_name(const std::string& name) {
  if (name == "sgd" || name == "gd") return Optimizer::kSgd;
  if (name == "adam") return Optimizer::kAdam;
  throw ValidationError("unknown optimizer: " + name);
}

void TrainConfig::validate() const {
  if (learning_rate < 0.0) {
    throw ValidationError("learning rate must be >= 0");
  }
  if (batch_size < 1) {
    throw ValidationError("batch size must be >= 1");
  }
  if (steps < 0) {
    throw ValidationError("step count must be >= 0");
  }
}

TrainResult train(PolicyModel& model, const PolicyModel* ref,
                  std::span<const PreferenceTriple> dataset,
                  const RefinementTemplate& tmpl, const LossConfig& loss_cfg,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) {
    throw EmptyBatch("training on an empty dataset");
  }

  const std::size_t n = dataset.size();
  const std::size_t batch =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  const std::size_t param_count = model.parameters().size();
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  if (cfg.optimizer == Optimizer::kAdam) {
    adam_m.assign(param_count, 0.0);
    adam_v.assign(param_count, 0.0);
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kAdamEps = 1e-8;

  TrainResult result;
  result.trajectory.reserve(cfg.steps);
  std::vector<PreferenceTriple> minibatch;
  minibatch.reserve(batch);

  double initial_loss = 0.0;
  int high_loss_streak = 0;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor == 0) {
      Rng rng(derive_seed(cfg.seed, 0x50f1, epoch));
      for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.next_below(i)]);
      }
      ++epoch;
    }
    minibatch.clear();
    for (std::size_t i = 0; i < batch; ++i) {
      minibatch.push_back(dataset[order[(cursor + i) % n]]);
    }
    cursor = (cursor + batch) % n;

    auto loss = evaluate_loss(cfg.loss, model, ref, minibatch, tmpl, loss_cfg,
                              /*with_grad=*/true);
    result.trajectory.push_back(loss.value);
    if (!std::isfinite(loss.value)) {
      throw DivergenceError("non-finite loss at step " + std::to_string(step));
    }
    if (step == 0) {
      initial_loss = loss.value;
    } else if (loss.value > 10.0 * initial_loss && initial_loss > 0.0) {
      if (++high_loss_streak >= 100) {
        throw DivergenceError("loss exceeded 10x the initial value for 100 "
                              "consecutive steps");
      }
    } else {
      high_loss_streak = 0;
    }

    auto params = model.mutable_parameters();
    if (cfg.optimizer == Optimizer::kSgd) {
      kernels::sgd_update(cfg.learning_rate, loss.grad.data(), params.data(),
                          param_count);
    } else {
      const double t = static_cast<double>(step + 1);
      const double lr_t = cfg.learning_rate *
                          std::sqrt(1.0 - std::pow(kBeta2, t)) /
                          (1.0 - std::pow(kBeta1, t));
      kernels::adam_update(lr_t, kBeta1, kBeta2, kAdamEps, loss.grad.data(),
                           adam_m.data(), adam_v.data(), params.data(),
                           param_count);
    }
  }
  result.final_loss =
      result.trajectory.empty() ? 0.0 : result.trajectory.back();
  return result;
}

}  // namespace evolve
