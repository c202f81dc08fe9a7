// evolve-lab: train, generate, filter, iterate, evaluate, verify and
// report on the synthetic self-refinement task.
//
// Exit codes: 0 success, 2 configuration error, 3 verification failure,
// 4 pipeline error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "evolve/config.hpp"
#include "evolve/dataset.hpp"
#include "evolve/errors.hpp"
#include "evolve/generation.hpp"
#include "evolve/kernels.hpp"
#include "evolve/pipeline.hpp"
#include "evolve/policy.hpp"
#include "evolve/rng.hpp"
#include "evolve/rundir.hpp"
#include "evolve/verify.hpp"

namespace {

namespace fs = std::filesystem;
using namespace evolve;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;
constexpr int kExitPipeline = 4;

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

ExperimentConfig load_config(const GlobalArgs& args) {
  ExperimentConfig cfg = args.config_path.empty()
                             ? ExperimentConfig()
                             : ExperimentConfig::load(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

int cmd_train_sft(const GlobalArgs& args) {
  const auto cfg = load_config(args);
  const auto ckpt = run_sft_stage(cfg, args.force);
  std::cout << "sft checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_train_pt(const GlobalArgs& args, const std::string& prefs_path,
                 const std::string& init_ckpt, const std::string& out_ckpt,
                 const std::string& trajectory_csv) {
  const auto cfg = load_config(args);
  const auto vocab = cfg.vocabulary();
  auto model = load_checkpoint(init_ckpt, vocab);
  const auto triples = deserialize_triples(prefs_path, vocab);
  if (triples.empty()) {
    throw EmptyFilteredDataset("preference file holds no records");
  }
  const auto ref = snapshot_reference(*model);
  TrainConfig train_cfg = cfg.pt_train;
  train_cfg.seed = derive_seed(cfg.seed, 0x77, 0);
  const auto result = train(*model, ref.get(), triples,
                            cfg.refinement_template(), cfg.loss, train_cfg);
  save_checkpoint(*model, out_ckpt);
  if (!trajectory_csv.empty()) {
    write_trajectory_csv(result, trajectory_csv);
  }
  std::cout << "pt checkpoint: " << out_ckpt
            << " final loss: " << result.final_loss << "\n";
  return kExitOk;
}

int cmd_generate(const GlobalArgs& args, const std::string& model_path,
                 const std::string& prompts_path, const std::string& out_path,
                 const std::string& strategy_name, int turns,
                 double temperature, std::uint64_t gen_seed) {
  const auto cfg = load_config(args);
  const auto vocab = cfg.vocabulary();
  const auto model = load_checkpoint(model_path, vocab);
  const auto prompts = deserialize_prompts(prompts_path, vocab);

  GenerationStrategy strategy;
  strategy.kind = strategy_kind_from_name(strategy_name);
  strategy.turns = turns;
  strategy.temperature = temperature;

  std::vector<ResponseChain> chains;
  chains.reserve(prompts.size());
  std::size_t truncated = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    GenerationStrategy per_prompt = strategy;
    per_prompt.seed = derive_seed(gen_seed, 0x9e37, i);
    auto result = run_strategy(*model, prompts[i], per_prompt,
                               cfg.refinement_template(),
                               cfg.evaluation_template());
    if (result.truncated) ++truncated;
    chains.push_back(std::move(result.chain));
  }
  serialize_dataset(chains, out_path);
  std::cout << "wrote " << chains.size() << " chains to " << out_path;
  if (truncated > 0) {
    std::cout << " (" << truncated << " truncated by the context budget)";
  }
  std::cout << "\n";
  return kExitOk;
}

int cmd_filter(const GlobalArgs& args, const std::string& chains_path,
               const std::string& out_path, const std::string& mode_name) {
  const auto cfg = load_config(args);
  const auto vocab = cfg.vocabulary();
  const auto mode = filter_mode_from_name(mode_name);
  auto chains = deserialize_chains(chains_path, vocab);
  const RewardOracle oracle(vocab, cfg.overlength_penalty);

  std::vector<PreferenceTriple> triples;
  for (auto& chain : chains) {
    std::optional<PreferenceTriple> triple;
    if (mode == FilterMode::kScore) {
      if (!chain.scores) chain = score_chain(oracle, std::move(chain));
      triple = filter_by_score(chain);
    } else {
      triple = filter_by_rule(chain);
    }
    if (triple) triples.push_back(std::move(*triple));
  }
  serialize_dataset(triples, out_path);
  std::cout << "kept " << triples.size() << " of " << chains.size()
            << " chains -> " << out_path << "\n";
  return kExitOk;
}

int cmd_iterate(const GlobalArgs& args, bool fixed_ref,
                bool restart_from_offline,
                std::optional<int> stop_after_iteration,
                const std::string& filter_override) {
  auto cfg = load_config(args);
  if (restart_from_offline) cfg.restart_from_offline = true;
  if (!filter_override.empty()) {
    cfg.filter = filter_mode_from_name(filter_override);
  }
  IterateOptions opts;
  opts.force = args.force;
  opts.fixed_ref = fixed_ref;
  opts.stop_after_iteration = stop_after_iteration;
  const auto result = run_iterate(cfg, opts);
  for (const auto& stage : result.stages) {
    std::cout << stage.name << ": direct " << stage.metrics.direct_score
              << " sr " << stage.metrics.sr_score << " gain "
              << stage.metrics.sr_gain << "\n";
  }
  std::cout << "final checkpoint: " << result.final_checkpoint.string()
            << "\n";
  return kExitOk;
}

int cmd_evaluate(const GlobalArgs& args, const std::string& model_path,
                 const std::string& out_path) {
  const auto cfg = load_config(args);
  const auto vocab = cfg.vocabulary();
  const auto model = load_checkpoint(model_path, vocab);
  const RewardOracle oracle(vocab, cfg.overlength_penalty);

  std::vector<TokenSequence> prompts;
  if (cfg.prompts_path) {
    prompts = deserialize_prompts(*cfg.prompts_path, vocab);
  } else {
    prompts = make_prompt_splits(vocab, cfg.prompt_length, cfg.splits,
                                 cfg.split_seed)
                  .eval;
  }
  const auto metrics =
      evaluate_model(*model, prompts, oracle, cfg.eval_turns,
                     cfg.eval_temperature, cfg.eval_seeds,
                     cfg.refinement_template());
  write_metrics(metrics, out_path);
  std::cout << "direct " << metrics.direct_score << " sr "
            << metrics.sr_score << " gain " << metrics.sr_gain << " -> "
            << out_path << "\n";
  return kExitOk;
}

int cmd_verify(const GlobalArgs& args, int gradient_configs,
               const std::string& out_path) {
  VerifyOptions opts;
  if (args.seed) opts.seed = *args.seed;
  opts.gradient_configs = gradient_configs;
  const auto checks = run_verification_battery(opts);
  const auto report = verify_report_json(checks);
  if (out_path.empty()) {
    std::cout << report << "\n";
  } else {
    std::ofstream out(out_path);
    out << report << "\n";
    for (const auto& c : checks) {
      std::cout << (c.pass ? "pass " : "FAIL ") << c.name << " measured "
                << c.measured << " bound " << c.bound << "\n";
    }
  }
  return all_checks_pass(checks) ? kExitOk : kExitVerify;
}

int cmd_report(const std::string& run_path, const std::string& out_path) {
  const fs::path run(run_path);
  const fs::path out = out_path.empty() ? run / "report" : fs::path(out_path);
  write_report(run, out);
  std::cout << "report CSVs in " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evolve-lab: iterative self-refinement training laboratory"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--config", global.config_path,
                 "experiment config file (JSON)");
  app.add_option("--seed", global.seed, "override the run seed");
  app.add_flag("--force", global.force, "redo completed run stages");

  auto* sft = app.add_subcommand("train-sft", "run the SFT stage");

  auto* pt = app.add_subcommand("train-pt",
                                "preference-train from a checkpoint");
  std::string pt_prefs, pt_init, pt_out, pt_csv;
  pt->add_option("--prefs", pt_prefs, "preference triples (JSONL)")
      ->required();
  pt->add_option("--init", pt_init, "initial checkpoint")->required();
  pt->add_option("--out", pt_out, "output checkpoint")->required();
  pt->add_option("--trajectory", pt_csv, "loss trajectory CSV");

  auto* gen = app.add_subcommand("generate", "sample response chains");
  std::string gen_model, gen_prompts, gen_out, gen_strategy = "chain";
  int gen_turns = 4;
  double gen_temperature = 0.7;
  std::uint64_t gen_seed = 0;
  gen->add_option("--model", gen_model, "model checkpoint")->required();
  gen->add_option("--prompts", gen_prompts, "prompts file (JSONL)")
      ->required();
  gen->add_option("--out", gen_out, "output chains file")->required();
  gen->add_option("--strategy", gen_strategy,
                  "parallel|chain|few-shot|self-eval");
  gen->add_option("--turns", gen_turns, "responses per chain");
  gen->add_option("--temperature", gen_temperature, "sampling temperature");
  gen->add_option("--gen-seed", gen_seed, "generation seed");

  auto* filter = app.add_subcommand("filter", "chains to preference pairs");
  std::string filter_chains, filter_out, filter_mode = "score";
  filter->add_option("--chains", filter_chains, "chains file (JSONL)")
      ->required();
  filter->add_option("--out", filter_out, "output triples file")->required();
  filter->add_option("--mode", filter_mode, "score|rule");

  auto* iterate = app.add_subcommand("iterate", "run the full schedule");
  bool it_fixed_ref = false;
  bool it_restart = false;
  int it_stop = -1;
  std::string it_filter;
  iterate->add_flag("--fixed-ref", it_fixed_ref,
                    "keep the SFT snapshot as the reference policy");
  iterate->add_flag("--restart-from-offline", it_restart,
                    "start each online iteration from the offline model");
  iterate->add_option("--stop-after-iteration", it_stop,
                      "stop after this iteration (0 = offline only)");
  iterate->add_option("--filter", it_filter, "score|rule");

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint");
  std::string eval_model, eval_out = "metrics.json";
  evaluate->add_option("--model", eval_model, "model checkpoint")->required();
  evaluate->add_option("--out", eval_out, "metrics output file");

  auto* verify = app.add_subcommand("verify", "run the oracle battery");
  int verify_configs = 100;
  std::string verify_out;
  verify->add_option("--gradient-configs", verify_configs,
                     "finite-difference draws per loss and architecture");
  verify->add_option("--out", verify_out, "write the JSON report here");

  auto* report = app.add_subcommand("report", "emit CSVs from a run dir");
  std::string report_run, report_out;
  report->add_option("--run", report_run, "run directory")->required();
  report->add_option("--out", report_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sft->parsed()) return cmd_train_sft(global);
    if (pt->parsed()) {
      return cmd_train_pt(global, pt_prefs, pt_init, pt_out, pt_csv);
    }
    if (gen->parsed()) {
      return cmd_generate(global, gen_model, gen_prompts, gen_out,
                          gen_strategy, gen_turns, gen_temperature, gen_seed);
    }
    if (filter->parsed()) {
      return cmd_filter(global, filter_chains, filter_out, filter_mode);
    }
    if (iterate->parsed()) {
      return cmd_iterate(global, it_fixed_ref, it_restart,
                         it_stop >= 0 ? std::optional<int>(it_stop)
                                      : std::nullopt,
                         it_filter);
    }
    if (evaluate->parsed()) return cmd_evaluate(global, eval_model, eval_out);
    if (verify->parsed()) {
      return cmd_verify(global, verify_configs, verify_out);
    }
    if (report->parsed()) return cmd_report(report_run, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPipeline;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitPipeline;
  }
  return kExitOk;
}
