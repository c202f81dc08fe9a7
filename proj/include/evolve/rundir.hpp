#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evolve/config.hpp"
#include "evolve/pipeline.hpp"

namespace evolve {

// Run directories live under $EVOLVE_LAB_RUN_ROOT (default ./runs):
//   runs/<name>/config.json
//   runs/<name>/sft/{checkpoint.ckpt, prefs.jsonl, trajectory.csv,
//                    provenance.json}
//   runs/<name>/iter<t>/{checkpoint.ckpt, chains.jsonl, prefs.jsonl,
//                        metrics.json, trajectory.csv, provenance.json}
// iter0 is the offline preference-training stage; iter1.. are the
// online self-refinement iterations. A stage is assembled in a
// temporary directory and renamed into place, so a stage directory
// either exists completely or not at all.

std::filesystem::path run_root();
std::filesystem::path run_dir(const ExperimentConfig& cfg);
std::filesystem::path stage_dir(const std::filesystem::path& run,
                                const std::string& stage);

// Exclusive ownership of one run directory via a .lock file.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path lock_path_;
};

void write_metrics(const EvalMetrics& metrics,
                   const std::filesystem::path& path);
EvalMetrics read_metrics(const std::filesystem::path& path);

void write_trajectory_csv(const TrainResult& result,
                          const std::filesystem::path& path);

std::uint64_t file_hash(const std::filesystem::path& path);

struct IterateOptions {
  bool force = false;
  // Stop after this iteration index (0 = offline only); used to test
  // resumption of partial runs.
  std::optional<int> stop_after_iteration;
  // Keep the EVOLVE-SFT snapshot as pi_ref for every PT stage instead
  // of re-snapshotting per iteration.
  bool fixed_ref = false;
};

struct StageSummary {
  std::string name;
  EvalMetrics metrics;
};

struct IterateResult {
  std::vector<StageSummary> stages;  // iter0..iterN, in order
  std::filesystem::path final_checkpoint;
};

// SFT stage alone: synthesize or load curated triples, train with the
// refinement SFT loss, write the stage directory. Returns the
// checkpoint path. No-op when the stage is already complete.
std::filesystem::path run_sft_stage(const ExperimentConfig& cfg, bool force);

// Full schedule: SFT (if missing), offline PT, then one online
// iteration per configured split. Completed stages are reused; partial
// runs resume after the last complete stage.
IterateResult run_iterate(const ExperimentConfig& cfg,
                          const IterateOptions& opts);

// Fig.-4-style CSV emission from a run directory's metrics:
//   per_turn.csv   iteration,turn,mean,std,n
//   direct_sr.csv  iteration,direct,sr,gain
//   sr_gain.csv    iteration,gain
void write_report(const std::filesystem::path& run,
                  const std::filesystem::path& out_dir);

}  // namespace evolve
