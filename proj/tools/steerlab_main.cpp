// Command-line front door: experiment configs in, artifacts and reports out.

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "steerlab/orchestrator.hpp"

using namespace steerlab;

namespace {

int exit_code_for(ErrorFamily family) {
  switch (family) {
    case ErrorFamily::Usage: return 64;
    case ErrorFamily::Corpus: return 65;
    case ErrorFamily::Prompting: return 66;
    case ErrorFamily::Gateway: return 67;
    case ErrorFamily::Distill: return 68;
    case ErrorFamily::Training: return 69;
    case ErrorFamily::Eval: return 70;
    case ErrorFamily::Pipeline: return 71;
  }
  return 1;
}

struct GlobalArgs {
  std::string config_path;
  std::string replay_trace;
  std::optional<uint64_t> seed;
  bool force = false;
};

orchestrator::ExperimentConfig load_config(const GlobalArgs& args) {
  if (args.config_path.empty()) throw UsageError("--config is required for this subcommand");
  auto cfg = orchestrator::ExperimentConfig::load(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steerlab: desk-scale laboratory for steerable pluralistic alignment"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand name

  GlobalArgs args;
  app.add_option("--config", args.config_path, "experiment config (JSON)");
  app.add_option("--seed", args.seed, "override the config seed");
  app.add_option("--replay-trace", args.replay_trace,
                 "serve gateway calls from a recorded trace instead of the configured endpoint");
  app.add_flag("--force", args.force, "recompute artifacts that already exist");

  auto* ingest = app.add_subcommand("ingest", "load, normalize, and split the corpus");
  auto* distill_cmd = app.add_subcommand("distill", "build SFT / human-CoT training records");
  std::string distill_mode = "sft";
  distill_cmd->add_option("--mode", distill_mode, "sft | human")
      ->check(CLI::IsMember({"sft", "human"}));
  auto* synth = app.add_subcommand("synth-cot", "generate the synthetic-CoT training set");
  auto* sft = app.add_subcommand("sft", "train the direct-answer baseline policy");
  auto* rlvr_cmd = app.add_subcommand("rlvr", "verifiable-reward GRPO training");
  auto* evaluate = app.add_subcommand("evaluate", "run the configured method end to end");
  auto* faith = app.add_subcommand("faithfulness", "judge CoT faithfulness over a finished run");
  auto* moderation = app.add_subcommand("moderation", "moderation sweep over a finished run");
  auto* sweep = app.add_subcommand("sweep", "sample-efficiency sweep over training fractions");
  std::string sweep_trainer = "rlvr";
  std::vector<double> sweep_fractions = {0.25, 1.0};
  sweep->add_option("--trainer", sweep_trainer, "sft | rlvr")
      ->check(CLI::IsMember({"sft", "rlvr"}));
  sweep->add_option("--fractions", sweep_fractions, "training fractions in (0, 1]");
  auto* report = app.add_subcommand("report", "comparison table across finished runs");
  std::vector<std::string> report_runs;
  std::string report_baseline;
  report->add_option("--runs", report_runs, "run directories to compare")->required();
  report->add_option("--baseline", report_baseline, "baseline run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) {
      auto manifest = orchestrator::run_ingest(load_config(args), args.force);
      std::cout << "ingested: train=" << manifest.summary.at("n_train")
                << " validation=" << manifest.summary.at("n_validation")
                << " test=" << manifest.summary.at("n_test") << "\n";
    } else if (distill_cmd->parsed()) {
      auto cfg = load_config(args);
      cfg.method = distill_mode == "human" ? orchestrator::Method::HumanCot
                                           : orchestrator::Method::Sft;
      orchestrator::run_distill(cfg, args.force, args.replay_trace);
      std::cout << "records written to " << cfg.output_dir << "/records.jsonl\n";
    } else if (synth->parsed()) {
      auto cfg = load_config(args);
      cfg.method = orchestrator::Method::SyntheticCot;
      auto manifest = orchestrator::run_distill(cfg, args.force, args.replay_trace);
      std::cout << "synthetic CoT records written; first-try correct: "
                << manifest.summary.at("synthetic_first_try_correct")
                << ", rationalized: " << manifest.summary.at("synthetic_rationalized") << "\n";
    } else if (sft->parsed() || rlvr_cmd->parsed() || evaluate->parsed()) {
      auto cfg = load_config(args);
      if (sft->parsed()) cfg.method = orchestrator::Method::Sft;
      if (rlvr_cmd->parsed()) cfg.method = orchestrator::Method::Rlvr;
      orchestrator::run(cfg, args.force, args.replay_trace);
      std::cout << read_file(
          (std::filesystem::path(cfg.output_dir) / "metrics_table.txt").string());
    } else if (faith->parsed()) {
      auto out = orchestrator::run_faithfulness_stage(load_config(args), args.replay_trace);
      std::cout << out.dump(2) << "\n";
    } else if (moderation->parsed()) {
      auto out = orchestrator::run_moderation_stage(load_config(args), args.replay_trace);
      std::cout << out.dump(2) << "\n";
    } else if (sweep->parsed()) {
      auto curve = orchestrator::run_sweep_stage(load_config(args), sweep_trainer,
                                                 sweep_fractions);
      for (const auto& point : curve) {
        std::cout << "fraction " << point.fraction << ": n=" << point.n_instances
                  << " val_accuracy=" << point.val_accuracy << "\n";
      }
    } else if (report->parsed()) {
      std::cout << orchestrator::render_report(report_runs, report_baseline);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.family());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
