#include "evolve/config.hpp"

#include <fstream>
#include <set>

#include "evolve/errors.hpp"
#include "json.hpp"

namespace evolve {

namespace {

using nlohmann::json;

// Reads cfg[key] when present, enforcing the JSON type via the visitor.
template <typename T>
void read_field(const json& obj, const std::string& path, const char* key,
                T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field " + path + "." + key +
                      " has the wrong type");
  }
}

void check_known_keys(const json& obj, const std::string& path,
                      const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.find(it.key()) == known.end()) {
      throw ConfigError("unknown config field " + path + "." + it.key());
    }
  }
}

void read_train_section(const json& obj, const std::string& path,
                        TrainConfig& cfg) {
  check_known_keys(obj, path,
                   {"learning_rate", "steps", "batch_size", "optimizer",
                    "loss", "seed"});
  read_field(obj, path, "learning_rate", cfg.learning_rate);
  read_field(obj, path, "steps", cfg.steps);
  read_field(obj, path, "batch_size", cfg.batch_size);
  if (obj.contains("optimizer")) {
    cfg.optimizer = optimizer_from_name(obj.at("optimizer").get<std::string>());
  }
  if (obj.contains("loss")) {
    cfg.loss = loss_kind_from_name(obj.at("loss").get<std::string>());
  }
  read_field(obj, path, "seed", cfg.seed);
}

json train_section(const TrainConfig& cfg) {
  return json{{"learning_rate", cfg.learning_rate},
              {"steps", cfg.steps},
              {"batch_size", cfg.batch_size},
              {"optimizer", optimizer_name(cfg.optimizer)},
              {"loss", loss_kind_name(cfg.loss)},
              {"seed", cfg.seed}};
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  sft_train.loss = LossKind::kSft;
  sft_train.learning_rate = 1e-3;
  sft_train.steps = 2000;
  sft_train.batch_size = 32;
  pt_train.loss = LossKind::kEvolvePt;
  pt_train.learning_rate = 1e-3;
  pt_train.steps = 2000;
  pt_train.batch_size = 32;
  strategy.kind = StrategyKind::kChain;
  strategy.turns = 4;
  strategy.temperature = 0.7;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  check_known_keys(j, "",
                   {"run_name", "seed", "eval_seeds", "task", "model",
                    "sequence", "loss", "sft", "pt", "strategy", "splits",
                    "schedule", "evaluation", "data"});
  read_field(j, "", "run_name", cfg.run_name);
  read_field(j, "", "seed", cfg.seed);
  read_field(j, "", "eval_seeds", cfg.eval_seeds);

  if (j.contains("task")) {
    const auto& t = j["task"];
    check_known_keys(t, "task",
                     {"content_size", "prompt_length", "overlength_penalty"});
    read_field(t, "task", "content_size", cfg.content_size);
    read_field(t, "task", "prompt_length", cfg.prompt_length);
    read_field(t, "task", "overlength_penalty", cfg.overlength_penalty);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_known_keys(m, "model",
                     {"architecture", "max_response_length", "embedding_dim",
                      "hidden_dim", "window"});
    read_field(m, "model", "architecture", cfg.architecture);
    read_field(m, "model", "max_response_length", cfg.max_response_length);
    read_field(m, "model", "embedding_dim", cfg.dims.embedding);
    read_field(m, "model", "hidden_dim", cfg.dims.hidden);
    read_field(m, "model", "window", cfg.dims.window);
  }
  if (j.contains("sequence")) {
    const auto& s = j["sequence"];
    check_known_keys(s, "sequence", {"max_context_length"});
    read_field(s, "sequence", "max_context_length", cfg.max_context_length);
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    check_known_keys(l, "loss",
                     {"alpha", "beta", "preference_gamma",
                      "bt_second_term_flipped"});
    read_field(l, "loss", "alpha", cfg.loss.alpha);
    read_field(l, "loss", "beta", cfg.loss.beta);
    read_field(l, "loss", "preference_gamma", cfg.loss.preference_gamma);
    read_field(l, "loss", "bt_second_term_flipped",
               cfg.loss.bt_second_term_flipped);
  }
  if (j.contains("sft")) {
    const auto& s = j["sft"];
    check_known_keys(s, "sft",
                     {"learning_rate", "steps", "batch_size", "optimizer",
                      "loss", "seed", "chains_per_prompt"});
    json train = s;
    train.erase("chains_per_prompt");
    read_train_section(train, "sft", cfg.sft_train);
    read_field(s, "sft", "chains_per_prompt", cfg.sft_chains_per_prompt);
  }
  if (j.contains("pt")) {
    const auto& p = j["pt"];
    check_known_keys(p, "pt",
                     {"learning_rate", "steps", "batch_size", "optimizer",
                      "loss", "seed", "chains_per_prompt"});
    json train = p;
    train.erase("chains_per_prompt");
    read_train_section(train, "pt", cfg.pt_train);
    read_field(p, "pt", "chains_per_prompt", cfg.offline_chains_per_prompt);
  }
  if (j.contains("strategy")) {
    const auto& s = j["strategy"];
    check_known_keys(s, "strategy", {"kind", "turns", "temperature"});
    if (s.contains("kind")) {
      cfg.strategy.kind =
          strategy_kind_from_name(s.at("kind").get<std::string>());
    }
    read_field(s, "strategy", "turns", cfg.strategy.turns);
    read_field(s, "strategy", "temperature", cfg.strategy.temperature);
  }
  if (j.contains("splits")) {
    const auto& s = j["splits"];
    check_known_keys(s, "splits",
                     {"sft_prompts", "offline_prompts", "iteration_prompts",
                      "eval_prompts", "split_seed"});
    read_field(s, "splits", "sft_prompts", cfg.splits.sft);
    read_field(s, "splits", "offline_prompts", cfg.splits.offline);
    read_field(s, "splits", "iteration_prompts", cfg.splits.iterations);
    read_field(s, "splits", "eval_prompts", cfg.splits.eval);
    read_field(s, "splits", "split_seed", cfg.split_seed);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_known_keys(s, "schedule",
                     {"refresh_reference", "restart_from_offline", "filter"});
    read_field(s, "schedule", "refresh_reference", cfg.refresh_reference);
    read_field(s, "schedule", "restart_from_offline",
               cfg.restart_from_offline);
    if (s.contains("filter")) {
      cfg.filter = filter_mode_from_name(s.at("filter").get<std::string>());
    }
  }
  if (j.contains("evaluation")) {
    const auto& e = j["evaluation"];
    check_known_keys(e, "evaluation", {"turns", "temperature"});
    read_field(e, "evaluation", "turns", cfg.eval_turns);
    read_field(e, "evaluation", "temperature", cfg.eval_temperature);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_known_keys(d, "data", {"sft_triples", "prompts"});
    if (d.contains("sft_triples") && !d["sft_triples"].is_null()) {
      cfg.sft_triples_path = d["sft_triples"].get<std::string>();
    }
    if (d.contains("prompts") && !d["prompts"].is_null()) {
      cfg.prompts_path = d["prompts"].get<std::string>();
    }
  }
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  if (content_size < 2) {
    throw ConfigError("task.content_size must be >= 2");
  }
  if (prompt_length < 1 || prompt_length > content_size) {
    throw ConfigError("task.prompt_length must lie in [1, content_size]");
  }
  if (max_response_length < 1) {
    throw ConfigError("model.max_response_length must be >= 1");
  }
  if (architecture != "tiny-neural" && architecture != "tabular" &&
      architecture != "uniform") {
    throw ConfigError("model.architecture must be tiny-neural, tabular or "
                      "uniform");
  }
  try {
    loss.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("loss: ") + e.what());
  }
  try {
    sft_train.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("sft: ") + e.what());
  }
  try {
    pt_train.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("pt: ") + e.what());
  }
  if (strategy.turns < 1) {
    throw ConfigError("strategy.turns must be >= 1");
  }
  if (!(strategy.temperature > 0.0) || !(eval_temperature > 0.0)) {
    throw ConfigError("temperatures must be > 0");
  }
  if (eval_turns < 1) {
    throw ConfigError("evaluation.turns must be >= 1");
  }
  if (eval_seeds.empty()) {
    throw ConfigError("eval_seeds must not be empty");
  }
  if (sft_triples_path &&
      !std::filesystem::exists(*sft_triples_path)) {
    throw ConfigError("data.sft_triples does not exist: " +
                      *sft_triples_path);
  }
  if (prompts_path && !std::filesystem::exists(*prompts_path)) {
    throw ConfigError("data.prompts does not exist: " + *prompts_path);
  }
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["run_name"] = run_name;
  j["seed"] = seed;
  j["eval_seeds"] = eval_seeds;
  j["task"] = {{"content_size", content_size},
               {"prompt_length", prompt_length},
               {"overlength_penalty", overlength_penalty}};
  j["model"] = {{"architecture", architecture},
                {"max_response_length", max_response_length},
                {"embedding_dim", dims.embedding},
                {"hidden_dim", dims.hidden},
                {"window", dims.window}};
  j["sequence"] = {{"max_context_length", max_context_length}};
  j["loss"] = {{"alpha", loss.alpha},
               {"beta", loss.beta},
               {"preference_gamma", loss.preference_gamma},
               {"bt_second_term_flipped", loss.bt_second_term_flipped}};
  j["sft"] = train_section(sft_train);
  j["sft"]["chains_per_prompt"] = sft_chains_per_prompt;
  j["pt"] = train_section(pt_train);
  j["pt"]["chains_per_prompt"] = offline_chains_per_prompt;
  j["strategy"] = {{"kind", strategy_kind_name(strategy.kind)},
                   {"turns", strategy.turns},
                   {"temperature", strategy.temperature}};
  j["splits"] = {{"sft_prompts", splits.sft},
                 {"offline_prompts", splits.offline},
                 {"iteration_prompts", splits.iterations},
                 {"eval_prompts", splits.eval},
                 {"split_seed", split_seed}};
  j["schedule"] = {{"refresh_reference", refresh_reference},
                   {"restart_from_offline", restart_from_offline},
                   {"filter", filter_mode_name(filter)}};
  j["evaluation"] = {{"turns", eval_turns},
                     {"temperature", eval_temperature}};
  j["data"] = {
      {"sft_triples",
       sft_triples_path ? json(*sft_triples_path) : json(nullptr)},
      {"prompts", prompts_path ? json(*prompts_path) : json(nullptr)}};
  return j.dump(2);
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot write config file: " + path.string());
  }
  out << canonical_json() << "\n";
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::uint64_t ExperimentConfig::config_hash() const {
  return fnv1a(canonical_json());
}

std::unique_ptr<PolicyModel> ExperimentConfig::make_model(
    std::uint64_t init_seed) const {
  const auto vocab = vocabulary();
  if (architecture == "tiny-neural") {
    return std::make_unique<TinyNeuralPolicy>(vocab, max_response_length,
                                              dims, init_seed);
  }
  if (architecture == "uniform") {
    return std::make_unique<UniformPolicy>(vocab, max_response_length);
  }
  // Tabular over the whole task prompt space; workable only for tiny
  // configurations.
  return std::make_unique<TabularPolicy>(
      vocab, max_response_length, all_task_prompts(vocab, prompt_length));
}

}  // namespace evolve
