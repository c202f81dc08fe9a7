#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evolve/generation.hpp"
#include "evolve/objectives.hpp"
#include "evolve/pipeline.hpp"
#include "evolve/policy.hpp"
#include "evolve/vocab.hpp"

namespace evolve {

// One experiment, one file. Every knob has a default mirroring the
// reference setup scaled to the toy task; a config file overrides
// fields selectively. Unknown keys fail loading, and the canonical
// re-serialization hash is embedded into run provenance.
struct ExperimentConfig {
  std::string run_name = "default";
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> eval_seeds = {1, 2, 3};

  // task
  int content_size = 10;
  int prompt_length = 3;
  double overlength_penalty = 0.5;

  // model
  std::string architecture = "tiny-neural";
  int max_response_length = 4;
  TinyNeuralPolicy::Dims dims{8, 64, 12};

  std::size_t max_context_length = 64;

  LossConfig loss;

  TrainConfig sft_train;
  TrainConfig pt_train;
  int sft_chains_per_prompt = 2;
  int offline_chains_per_prompt = 2;

  GenerationStrategy strategy;

  SplitSizes splits;
  std::uint64_t split_seed = 20260810;

  bool refresh_reference = true;
  bool restart_from_offline = false;
  FilterMode filter = FilterMode::kScore;

  int eval_turns = 4;
  double eval_temperature = 0.7;

  // Optional external inputs; when set the files must exist at load.
  std::optional<std::string> sft_triples_path;
  std::optional<std::string> prompts_path;

  ExperimentConfig();

  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Canonical JSON (sorted keys); identical configs hash identically.
  std::string canonical_json() const;
  std::uint64_t config_hash() const;

  Vocabulary vocabulary() const { return Vocabulary(content_size); }
  RefinementTemplate refinement_template() const {
    return refine_template(max_context_length);
  }
  RefinementTemplate evaluation_template() const {
    return evaluate_template(max_context_length);
  }
  std::unique_ptr<PolicyModel> make_model(std::uint64_t init_seed) const;

  void validate() const;
};

std::uint64_t fnv1a(const std::string& text);
std::string hash_hex(std::uint64_t h);

}  // namespace evolve
