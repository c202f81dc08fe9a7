#include "evolve/rundir.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "evolve/errors.hpp"
#include "evolve/rng.hpp"
#include "json.hpp"

namespace evolve {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kCheckpointFile = "checkpoint.ckpt";
constexpr const char* kChainsFile = "chains.jsonl";
constexpr const char* kPrefsFile = "prefs.jsonl";
constexpr const char* kMetricsFile = "metrics.json";
constexpr const char* kTrajectoryFile = "trajectory.csv";
constexpr const char* kProvenanceFile = "provenance.json";

// Seed streams for the stages of one run.
constexpr std::uint64_t kInitStream = 0x01;
constexpr std::uint64_t kSftDataStream = 0x02;
constexpr std::uint64_t kSftTrainStream = 0x03;
constexpr std::uint64_t kOfflineDataStream = 0x04;
constexpr std::uint64_t kPtTrainStream = 0x05;
constexpr std::uint64_t kIterationStream = 0x06;

bool stage_complete(const fs::path& dir) {
  return fs::exists(dir / kProvenanceFile);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RunDirError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw RunDirError("bad JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw RunDirError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void check_config_hash(const ExperimentConfig& cfg, const fs::path& stage) {
  const auto prov = read_json_file(stage / kProvenanceFile);
  if (!prov.contains("config_hash")) {
    throw RunDirError("provenance without config hash in " + stage.string());
  }
  if (prov["config_hash"].get<std::string>() !=
      hash_hex(cfg.config_hash())) {
    throw ConfigError("config hash mismatch against completed stage " +
                      stage.string() +
                      "; the config changed after the run started");
  }
}

json provenance_base(const ExperimentConfig& cfg, const std::string& stage) {
  return json{{"stage", stage},
              {"config_hash", hash_hex(cfg.config_hash())},
              {"vocab_hash", hash_hex(cfg.vocabulary().manifest_hash())},
              {"seed", cfg.seed},
              {"eval_prompts", cfg.splits.eval}};
}

// Assemble a stage under .tmp-<stage> and atomically rename into place.
class StageWriter {
 public:
  StageWriter(fs::path run, std::string stage)
      : final_(run / stage), tmp_(run / (".tmp-" + stage)) {
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  const fs::path& dir() const { return tmp_; }
  void commit() {
    fs::remove_all(final_);
    fs::rename(tmp_, final_);
    committed_ = true;
  }
  ~StageWriter() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

 private:
  fs::path final_;
  fs::path tmp_;
  bool committed_ = false;
};

struct OfflineData {
  std::vector<ResponseChain> chains;
  std::vector<PreferenceTriple> triples;
};

// Parallel-sample, score, and max/min-pair the offline preference set.
OfflineData collect_offline_data(const PolicyModel& model,
                                 const RewardOracle& oracle,
                                 std::span<const TokenSequence> prompts,
                                 int chains_per_prompt, int turns,
                                 double temperature, std::uint64_t seed) {
  OfflineData data;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (int c = 0; c < chains_per_prompt; ++c) {
      auto chain = score_chain(
          oracle,
          parallel_sampling(model, prompts[i], turns, temperature,
                            derive_seed(seed, 0xcafe + c, i)));
      if (auto triple = filter_by_score(chain)) {
        data.triples.push_back(std::move(*triple));
      }
      data.chains.push_back(std::move(chain));
    }
  }
  return data;
}

EvalMetrics evaluate_stage(const ExperimentConfig& cfg,
                           const PolicyModel& model,
                           const PromptSplits& splits,
                           const RewardOracle& oracle) {
  return evaluate_model(model, splits.eval, oracle, cfg.eval_turns,
                        cfg.eval_temperature, cfg.eval_seeds,
                        cfg.refinement_template());
}

}  // namespace

fs::path run_root() {
  if (const char* env = std::getenv("EVOLVE_LAB_RUN_ROOT")) {
    return fs::path(env);
  }
  return fs::path("runs");
}

fs::path run_dir(const ExperimentConfig& cfg) {
  return run_root() / cfg.run_name;
}

fs::path stage_dir(const fs::path& run, const std::string& stage) {
  return run / stage;
}

RunLock::RunLock(const fs::path& run) {
  fs::create_directories(run);
  lock_path_ = run / ".lock";
  // O_EXCL-style create; a stale or concurrent lock refuses the run.
  if (fs::exists(lock_path_)) {
    throw RunDirError("run directory is locked: " + lock_path_.string() +
                      " (remove it if no other process owns this run)");
  }
  std::ofstream out(lock_path_);
  if (!out) {
    throw RunDirError("cannot create lock file " + lock_path_.string());
  }
  out << "locked\n";
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

void write_metrics(const EvalMetrics& metrics, const fs::path& path) {
  json j;
  j["per_turn_mean"] = metrics.per_turn_mean;
  j["per_turn_std"] = metrics.per_turn_std;
  j["direct_score"] = metrics.direct_score;
  j["sr_score"] = metrics.sr_score;
  j["sr_gain"] = metrics.sr_gain;
  write_json_file(j, path);
}

EvalMetrics read_metrics(const fs::path& path) {
  const auto j = read_json_file(path);
  EvalMetrics metrics;
  metrics.per_turn_mean = j.at("per_turn_mean").get<std::vector<double>>();
  metrics.per_turn_std = j.at("per_turn_std").get<std::vector<double>>();
  metrics.direct_score = j.at("direct_score").get<double>();
  metrics.sr_score = j.at("sr_score").get<double>();
  metrics.sr_gain = j.at("sr_gain").get<double>();
  return metrics;
}

void write_trajectory_csv(const TrainResult& result, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw RunDirError("cannot write " + path.string());
  out << "step,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
    out << i << "," << result.trajectory[i] << "\n";
  }
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunDirError("cannot hash " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

namespace {

// Caller holds the run lock.
fs::path ensure_sft_stage(const ExperimentConfig& cfg, bool force) {
  const auto run = run_dir(cfg);
  fs::create_directories(run);
  const auto sft = stage_dir(run, "sft");
  if (stage_complete(sft)) {
    if (!force) {
      check_config_hash(cfg, sft);
      return sft / kCheckpointFile;
    }
    fs::remove_all(sft);
  }

  const auto vocab = cfg.vocabulary();
  const RewardOracle oracle(vocab, cfg.overlength_penalty);
  const auto splits = make_prompt_splits(vocab, cfg.prompt_length, cfg.splits,
                                         cfg.split_seed);
  auto model = cfg.make_model(derive_seed(cfg.seed, kInitStream, 0));

  std::vector<PreferenceTriple> triples;
  if (cfg.sft_triples_path) {
    triples = deserialize_triples(*cfg.sft_triples_path, vocab);
  } else {
    triples = synthesize_curated_triples(
        *model, oracle, splits.sft, cfg.sft_chains_per_prompt,
        cfg.strategy.turns, cfg.strategy.temperature,
        derive_seed(cfg.seed, kSftDataStream, 0));
  }
  if (triples.empty()) {
    throw EmptyFilteredDataset("no curated triples for the SFT stage");
  }

  TrainConfig train_cfg = cfg.sft_train;
  train_cfg.seed = derive_seed(cfg.seed, kSftTrainStream, 0);
  const auto result = train(*model, nullptr, triples,
                            cfg.refinement_template(), cfg.loss, train_cfg);

  StageWriter writer(run, "sft");
  cfg.save(run / "config.json");
  save_checkpoint(*model, writer.dir() / kCheckpointFile);
  serialize_dataset(triples, writer.dir() / kPrefsFile);
  write_trajectory_csv(result, writer.dir() / kTrajectoryFile);
  auto prov = provenance_base(cfg, "sft");
  prov["triples"] = triples.size();
  prov["checkpoint_hash"] =
      hash_hex(file_hash(writer.dir() / kCheckpointFile));
  prov["final_loss"] = result.final_loss;
  write_json_file(prov, writer.dir() / kProvenanceFile);
  writer.commit();
  return sft / kCheckpointFile;
}

}  // namespace

fs::path run_sft_stage(const ExperimentConfig& cfg, bool force) {
  fs::create_directories(run_dir(cfg));
  RunLock lock(run_dir(cfg));
  return ensure_sft_stage(cfg, force);
}

IterateResult run_iterate(const ExperimentConfig& cfg,
                          const IterateOptions& opts) {
  const auto run = run_dir(cfg);
  fs::create_directories(run);
  RunLock lock(run);

  if (opts.force) {
    for (const auto& entry : fs::directory_iterator(run)) {
      if (entry.path().filename() == ".lock") continue;
      fs::remove_all(entry.path());
    }
  }

  const auto vocab = cfg.vocabulary();
  const RewardOracle oracle(vocab, cfg.overlength_penalty);
  const auto splits = make_prompt_splits(vocab, cfg.prompt_length, cfg.splits,
                                         cfg.split_seed);
  const auto ref_tmpl = cfg.refinement_template();
  const auto eval_tmpl = cfg.evaluation_template();

  // ---- SFT stage (outside the iter<t> sequence)
  const fs::path sft_ckpt = ensure_sft_stage(cfg, false);
  auto sft_model = load_checkpoint(sft_ckpt, vocab);
  cfg.save(run / "config.json");

  IterateResult result;
  const int total_iterations = static_cast<int>(cfg.splits.iterations.size());
  const int last_stage =
      opts.stop_after_iteration
          ? std::min(*opts.stop_after_iteration, total_iterations)
          : total_iterations;

  std::unique_ptr<PolicyModel> model;  // current model entering a stage

  for (int t = 0; t <= last_stage; ++t) {
    const std::string stage_name = "iter" + std::to_string(t);
    const auto stage = stage_dir(run, stage_name);
    if (stage_complete(stage)) {
      check_config_hash(cfg, stage);
      result.stages.push_back(
          {stage_name, read_metrics(stage / kMetricsFile)});
      result.final_checkpoint = stage / kCheckpointFile;
      model.reset();
      continue;
    }

    // Load the stage's starting model.
    if (!model) {
      if (t == 0) {
        model = sft_model->clone();
      } else {
        const auto parent =
            cfg.restart_from_offline ? stage_dir(run, "iter0")
                                     : stage_dir(run, "iter" +
                                                          std::to_string(t - 1));
        model = load_checkpoint(parent / kCheckpointFile, vocab);
      }
    }

    StageWriter writer(run, stage_name);
    TrainResult train_result;
    std::vector<ResponseChain> chains;
    std::vector<PreferenceTriple> triples;

    if (t == 0) {
      // Offline PT: parallel sampling from the SFT model, score filter.
      auto data = collect_offline_data(
          *model, oracle, splits.offline, cfg.offline_chains_per_prompt,
          cfg.strategy.turns, cfg.strategy.temperature,
          derive_seed(cfg.seed, kOfflineDataStream, 0));
      if (data.triples.empty()) {
        throw EmptyFilteredDataset("offline stage collected no pairs");
      }
      chains = std::move(data.chains);
      triples = std::move(data.triples);
      TrainConfig train_cfg = cfg.pt_train;
      train_cfg.seed = derive_seed(cfg.seed, kPtTrainStream, 0);
      const auto ref = snapshot_reference(*model);
      const PolicyModel* ref_ptr =
          opts.fixed_ref ? sft_model.get() : ref.get();
      train_result = train(*model, ref_ptr, triples, ref_tmpl, cfg.loss,
                           train_cfg);
    } else {
      // Online iteration: chain-of-self-refinement collection.
      std::set<std::vector<Token>> used;
      for (const auto& p : splits.sft) used.insert(p.tokens);
      for (const auto& p : splits.offline) used.insert(p.tokens);
      for (int s = 0; s + 1 < t; ++s) {
        for (const auto& p : splits.iterations[s]) used.insert(p.tokens);
      }
      for (const auto& p : splits.eval) used.insert(p.tokens);

      GenerationStrategy strategy = cfg.strategy;
      strategy.seed = derive_seed(cfg.seed, kIterationStream, t);
      TrainConfig train_cfg = cfg.pt_train;
      train_cfg.seed = derive_seed(cfg.seed, kPtTrainStream, t);
      auto outcome = run_iteration(
          *model, oracle, splits.iterations[t - 1], used, strategy,
          cfg.filter, ref_tmpl, eval_tmpl, cfg.loss, train_cfg,
          opts.fixed_ref ? sft_model.get() : nullptr);
      chains = std::move(outcome.chains);
      triples = std::move(outcome.triples);
      train_result = std::move(outcome.train_result);
    }

    const auto metrics = evaluate_stage(cfg, *model, splits, oracle);

    save_checkpoint(*model, writer.dir() / kCheckpointFile);
    serialize_dataset(chains, writer.dir() / kChainsFile);
    serialize_dataset(triples, writer.dir() / kPrefsFile);
    write_metrics(metrics, writer.dir() / kMetricsFile);
    write_trajectory_csv(train_result, writer.dir() / kTrajectoryFile);
    auto prov = provenance_base(cfg, stage_name);
    prov["iteration"] = t;
    prov["chains"] = chains.size();
    prov["triples"] = triples.size();
    prov["filter"] = filter_mode_name(cfg.filter);
    prov["checkpoint_hash"] =
        hash_hex(file_hash(writer.dir() / kCheckpointFile));
    prov["parent_checkpoint_hash"] = hash_hex(file_hash(
        t == 0 ? sft_ckpt
               : stage_dir(run, cfg.restart_from_offline
                                    ? std::string("iter0")
                                    : "iter" + std::to_string(t - 1)) /
                     kCheckpointFile));
    prov["final_loss"] = train_result.final_loss;
    write_json_file(prov, writer.dir() / kProvenanceFile);
    writer.commit();

    result.stages.push_back({stage_name, metrics});
    result.final_checkpoint = stage / kCheckpointFile;
  }
  return result;
}

void write_report(const fs::path& run, const fs::path& out_dir) {
  std::vector<std::pair<int, EvalMetrics>> stages;
  for (int t = 0;; ++t) {
    const auto stage = run / ("iter" + std::to_string(t));
    if (!fs::exists(stage / kMetricsFile)) break;
    stages.emplace_back(t, read_metrics(stage / kMetricsFile));
  }
  if (stages.empty()) {
    throw ReportError("no iteration metrics under " + run.string());
  }
  int eval_prompts = 0;
  {
    const auto prov = read_json_file(run / "iter0" / kProvenanceFile);
    if (prov.contains("eval_prompts")) {
      eval_prompts = prov["eval_prompts"].get<int>();
    }
  }

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "per_turn.csv");
    if (!out) throw ReportError("cannot write per_turn.csv");
    out << "iteration,turn,mean,std,n\n";
    out.precision(17);
    for (const auto& [t, m] : stages) {
      for (std::size_t turn = 0; turn < m.per_turn_mean.size(); ++turn) {
        out << t << "," << (turn + 1) << "," << m.per_turn_mean[turn] << ","
            << m.per_turn_std[turn] << "," << eval_prompts << "\n";
      }
    }
  }
  {
    std::ofstream out(out_dir / "direct_sr.csv");
    if (!out) throw ReportError("cannot write direct_sr.csv");
    out << "iteration,direct,sr,gain\n";
    out.precision(17);
    for (const auto& [t, m] : stages) {
      out << t << "," << m.direct_score << "," << m.sr_score << ","
          << m.sr_gain << "\n";
    }
  }
  {
    std::ofstream out(out_dir / "sr_gain.csv");
    if (!out) throw ReportError("cannot write sr_gain.csv");
    out << "iteration,gain\n";
    out.precision(17);
    for (const auto& [t, m] : stages) {
      out << t << "," << m.sr_gain << "\n";
    }
  }
}

}  // namespace evolve
