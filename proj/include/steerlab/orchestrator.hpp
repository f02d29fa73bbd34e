#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/distill.hpp"
#include "steerlab/evalsuite.hpp"
#include "steerlab/gateway.hpp"
#include "steerlab/policy.hpp"
#include "steerlab/rlvr.hpp"
#include "steerlab/synthetic.hpp"

namespace steerlab::orchestrator {

inline constexpr const char* kToolVersion = "steerlab 0.1.0";

enum class Method { Sft, ZeroShotCot, HumanCot, SyntheticCot, Rlvr };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct GatewaySetup {
  std::string kind = "mock";  // mock | http | replay
  std::string base_url;
  std::string api_key_env = "STEERLAB_API_KEY";
  std::string model = "desk-mock";
  std::string moderation_model = "desk-moderation";
  int max_attempts = 4;
  int backoff_ms = 50;
  int concurrency = 8;
  int timeout_ms = 30000;
  std::string replay_trace;     // replay kind: trace to serve from
  // Bundled demo mock behavior.
  int mock_accuracy_pct = 75;   // first-try answer accuracy
  int mock_flag_pct = 5;        // moderation flag rate
};

struct ExperimentConfig {
  std::string dataset = "synthetic";  // vk | opinionqa | synthetic
  std::string dataset_path;
  synthetic::SyntheticTaskConfig synthetic_task;
  Method method = Method::Rlvr;
  uint64_t split_seed = 42;
  corpus::SplitFractions fractions{0.77, 0.077, 0.153};
  policy::FeatureMap feature_map;
  policy::SftSchedule sft;
  rlvr::GRPOConfig grpo;
  GatewaySetup gateway;
  evalsuite::FaithfulnessOptions faithfulness;
  evalsuite::ModerationOptions moderation;
  uint64_t seed = 0;
  std::string output_dir = "runs/out";

  corpus::Dataset dataset_kind() const;
  void validate() const;
  json to_json() const;
  static ExperimentConfig from_json(const json& obj);
  static ExperimentConfig load(const std::string& path);
};

struct RunManifest {
  json config;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::vector<std::string> artifacts;                // file names inside output_dir
  std::map<std::string, std::string> summary;        // stage stats, stringified
  double wall_clock_s = 0.0;
  std::string tool_version = kToolVersion;

  json to_json() const;
  static RunManifest from_json(const json& obj);
};

void write_manifest(const std::string& output_dir, const RunManifest& manifest);
RunManifest read_manifest(const std::string& output_dir);

// Every non-metadata file in the run directory must be listed in the
// manifest, and every listed artifact must exist.
void verify_manifest_artifacts(const std::string& output_dir);

// Exclusive-ownership lock file for a run directory (one run at a time).
class DirLock {
 public:
  explicit DirLock(const std::string& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

// Bundled deterministic mock: answers synthetic-task prompts at the
// configured accuracy (it recovers the gold from the perspective token),
// writes rationalizations that bury their conclusion, judges rationales by
// the conclusion sentence, and flags a deterministic slice in moderation.
std::unique_ptr<gateway::Transport> make_demo_mock(const GatewaySetup& setup, uint64_t seed);

// Builds the configured gateway (mock / http / replay). `replay_override`
// (the --replay-trace flag) wins over the configured kind.
std::unique_ptr<gateway::Gateway> make_gateway(const ExperimentConfig& config,
                                               const std::string& replay_override = "",
                                               bool record_trace = true);

// Executes ingest -> (distill | train) -> evaluate for the configured
// method. Skips work whose artifacts already exist unless force is set.
RunManifest run(const ExperimentConfig& config, bool force = false,
                const std::string& replay_override = "");

// Stage entry points behind the CLI subcommands. Each one locks the output
// directory, reuses artifacts that already exist (unless forced), and folds
// what it adds into the run manifest.
RunManifest run_ingest(const ExperimentConfig& config, bool force = false);
RunManifest run_distill(const ExperimentConfig& config, bool force = false,
                        const std::string& replay_override = "");
json run_faithfulness_stage(const ExperimentConfig& config,
                            const std::string& replay_override = "");
json run_moderation_stage(const ExperimentConfig& config,
                          const std::string& replay_override = "");
// trainer is "sft" or "rlvr"; writes sweep.csv into the run directory.
evalsuite::SweepCurve run_sweep_stage(const ExperimentConfig& config, const std::string& trainer,
                                      const std::vector<double>& fractions);

// Comparison table over completed runs, with a significance bullet against
// the declared baseline run (McNemar p < 0.05 on paired test predictions).
// Runs over different test splits are refused.
std::string render_report(const std::vector<std::string>& run_dirs,
                          const std::string& baseline_dir);

}  // namespace steerlab::orchestrator
