#include "steerlab/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace steerlab::orchestrator {

namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::Sft: return "sft";
    case Method::ZeroShotCot: return "zero_shot_cot";
    case Method::HumanCot: return "human_cot";
    case Method::SyntheticCot: return "synthetic_cot";
    case Method::Rlvr: return "rlvr";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "sft") return Method::Sft;
  if (s == "zero_shot_cot") return Method::ZeroShotCot;
  if (s == "human_cot") return Method::HumanCot;
  if (s == "synthetic_cot") return Method::SyntheticCot;
  if (s == "rlvr") return Method::Rlvr;
  throw UsageError("unknown method: '" + s + "'");
}

corpus::Dataset ExperimentConfig::dataset_kind() const {
  if (dataset == "vk") return corpus::Dataset::VK;
  if (dataset == "opinionqa") return corpus::Dataset::OpinionQA;
  if (dataset == "synthetic") {
    return synthetic_task.n_options == 3 ? corpus::Dataset::VK : corpus::Dataset::OpinionQA;
  }
  throw UsageError("unknown dataset: '" + dataset + "'");
}

void ExperimentConfig::validate() const {
  dataset_kind();
  if ((dataset == "vk" || dataset == "opinionqa") && dataset_path.empty()) {
    throw UsageError("dataset '" + dataset + "' requires dataset_path");
  }
  if (method == Method::HumanCot && dataset_kind() != corpus::Dataset::VK) {
    throw UsageError("method=human_cot requires dataset=VK; OpinionQA lacks human-written "
                     "justifications");
  }
  if (output_dir.empty()) throw UsageError("output_dir must be set");
  if (gateway.kind != "mock" && gateway.kind != "http" && gateway.kind != "replay") {
    throw UsageError("gateway.kind must be mock, http, or replay");
  }
  if (gateway.kind == "http" && gateway.base_url.empty()) {
    throw UsageError("gateway.kind=http requires base_url");
  }
  if (gateway.kind == "replay" && gateway.replay_trace.empty()) {
    throw UsageError("gateway.kind=replay requires replay_trace");
  }
  grpo.validate();
}

namespace {

json lr_to_json(const rlvr::LrSchedule& lr) {
  return {{"kind", lr.kind == rlvr::LrSchedule::Kind::ConstantWithWarmup ? "constant_with_warmup"
                                                                         : "cosine"},
          {"max_lr", lr.max_lr},
          {"min_lr", lr.min_lr},
          {"warmup_steps", lr.warmup_steps},
          {"total_steps", lr.total_steps}};
}

rlvr::LrSchedule lr_from_json(const json& obj, rlvr::LrSchedule base) {
  if (obj.contains("kind")) {
    std::string kind = obj.at("kind").get<std::string>();
    if (kind == "constant_with_warmup") base.kind = rlvr::LrSchedule::Kind::ConstantWithWarmup;
    else if (kind == "cosine") base.kind = rlvr::LrSchedule::Kind::Cosine;
    else throw UsageError("unknown lr schedule kind: '" + kind + "'");
  }
  base.max_lr = obj.value("max_lr", base.max_lr);
  base.min_lr = obj.value("min_lr", base.min_lr);
  base.warmup_steps = obj.value("warmup_steps", base.warmup_steps);
  base.total_steps = obj.value("total_steps", base.total_steps);
  return base;
}

}  // namespace

json ExperimentConfig::to_json() const {
  return {
      {"dataset",
       {{"name", dataset},
        {"path", dataset_path},
        {"synthetic",
         {{"n_scenarios", synthetic_task.n_scenarios},
          {"perspectives_per_scenario", synthetic_task.perspectives_per_scenario},
          {"n_perspectives", synthetic_task.n_perspectives},
          {"n_options", synthetic_task.n_options},
          {"filler_words", synthetic_task.filler_words},
          {"seed", synthetic_task.seed}}}}},
      {"method", to_string(method)},
      {"splits",
       {{"seed", split_seed},
        {"fractions", {fractions.train, fractions.validation, fractions.test}}}},
      {"policy",
       {{"dim", feature_map.dim},
        {"hash_seed", feature_map.seed},
        {"ngram_orders", feature_map.ngram_orders}}},
      {"sft",
       {{"epochs", sft.epochs},
        {"learning_rate", sft.learning_rate},
        {"batch_size", sft.batch_size}}},
      {"grpo",
       {{"group_size", grpo.group_size},
        {"clip_ratio", grpo.clip_ratio},
        {"kl_coeff", grpo.kl_coeff},
        {"grpo_iterations", grpo.grpo_iterations},
        {"batch_size", grpo.batch_size},
        {"minibatch_size", grpo.minibatch_size},
        {"advantage_eps", grpo.advantage_eps},
        {"lr", lr_to_json(grpo.lr)},
        {"max_len", grpo.max_len},
        {"sequence_level_ratio", grpo.sequence_level_ratio},
        {"steps", grpo.steps},
        {"val_interval", grpo.val_interval},
        {"patience", grpo.patience},
        {"rollout_threads", grpo.rollout_threads}}},
      {"gateway",
       {{"kind", gateway.kind},
        {"base_url", gateway.base_url},
        {"api_key_env", gateway.api_key_env},
        {"model", gateway.model},
        {"moderation_model", gateway.moderation_model},
        {"max_attempts", gateway.max_attempts},
        {"backoff_ms", gateway.backoff_ms},
        {"concurrency", gateway.concurrency},
        {"timeout_ms", gateway.timeout_ms},
        {"replay_trace", gateway.replay_trace},
        {"mock_accuracy_pct", gateway.mock_accuracy_pct},
        {"mock_flag_pct", gateway.mock_flag_pct}}},
      {"eval",
       {{"faithfulness_sample", faithfulness.sample_size},
        {"faithfulness_seed", faithfulness.seed},
        {"moderation_sample", moderation.sample_size},
        {"moderation_seed", moderation.seed},
        {"moderation_skip_abort_fraction", moderation.skip_abort_fraction}}},
      {"seed", seed},
      {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& obj) {
  ExperimentConfig cfg;
  try {
    if (obj.contains("dataset")) {
      const json& d = obj.at("dataset");
      cfg.dataset = d.value("name", cfg.dataset);
      cfg.dataset_path = d.value("path", cfg.dataset_path);
      if (d.contains("synthetic")) {
        const json& s = d.at("synthetic");
        cfg.synthetic_task.n_scenarios = s.value("n_scenarios", cfg.synthetic_task.n_scenarios);
        cfg.synthetic_task.perspectives_per_scenario =
            s.value("perspectives_per_scenario", cfg.synthetic_task.perspectives_per_scenario);
        cfg.synthetic_task.n_perspectives =
            s.value("n_perspectives", cfg.synthetic_task.n_perspectives);
        cfg.synthetic_task.n_options = s.value("n_options", cfg.synthetic_task.n_options);
        cfg.synthetic_task.filler_words = s.value("filler_words", cfg.synthetic_task.filler_words);
        cfg.synthetic_task.seed = s.value("seed", cfg.synthetic_task.seed);
      }
    }
    if (obj.contains("method")) cfg.method = method_from_string(obj.at("method").get<std::string>());
    if (obj.contains("splits")) {
      const json& s = obj.at("splits");
      cfg.split_seed = s.value("seed", cfg.split_seed);
      if (s.contains("fractions")) {
        auto f = s.at("fractions").get<std::vector<double>>();
        if (f.size() != 3) throw UsageError("splits.fractions must have 3 entries");
        cfg.fractions = {f[0], f[1], f[2]};
      }
    }
    if (obj.contains("policy")) {
      const json& p = obj.at("policy");
      cfg.feature_map.dim = p.value("dim", cfg.feature_map.dim);
      cfg.feature_map.seed = p.value("hash_seed", cfg.feature_map.seed);
      if (p.contains("ngram_orders")) {
        cfg.feature_map.ngram_orders = p.at("ngram_orders").get<std::vector<int>>();
      }
    }
    if (obj.contains("sft")) {
      const json& s = obj.at("sft");
      cfg.sft.epochs = s.value("epochs", cfg.sft.epochs);
      cfg.sft.learning_rate = s.value("learning_rate", cfg.sft.learning_rate);
      cfg.sft.batch_size = s.value("batch_size", cfg.sft.batch_size);
    }
    if (obj.contains("grpo")) {
      const json& g = obj.at("grpo");
      cfg.grpo.group_size = g.value("group_size", cfg.grpo.group_size);
      cfg.grpo.clip_ratio = g.value("clip_ratio", cfg.grpo.clip_ratio);
      cfg.grpo.kl_coeff = g.value("kl_coeff", cfg.grpo.kl_coeff);
      cfg.grpo.grpo_iterations = g.value("grpo_iterations", cfg.grpo.grpo_iterations);
      cfg.grpo.batch_size = g.value("batch_size", cfg.grpo.batch_size);
      cfg.grpo.minibatch_size = g.value("minibatch_size", cfg.grpo.minibatch_size);
      cfg.grpo.advantage_eps = g.value("advantage_eps", cfg.grpo.advantage_eps);
      if (g.contains("lr")) cfg.grpo.lr = lr_from_json(g.at("lr"), cfg.grpo.lr);
      cfg.grpo.max_len = g.value("max_len", cfg.grpo.max_len);
      cfg.grpo.sequence_level_ratio =
          g.value("sequence_level_ratio", cfg.grpo.sequence_level_ratio);
      cfg.grpo.steps = g.value("steps", cfg.grpo.steps);
      cfg.grpo.val_interval = g.value("val_interval", cfg.grpo.val_interval);
      cfg.grpo.patience = g.value("patience", cfg.grpo.patience);
      cfg.grpo.rollout_threads = g.value("rollout_threads", cfg.grpo.rollout_threads);
    }
    if (obj.contains("gateway")) {
      const json& g = obj.at("gateway");
      cfg.gateway.kind = g.value("kind", cfg.gateway.kind);
      cfg.gateway.base_url = g.value("base_url", cfg.gateway.base_url);
      cfg.gateway.api_key_env = g.value("api_key_env", cfg.gateway.api_key_env);
      cfg.gateway.model = g.value("model", cfg.gateway.model);
      cfg.gateway.moderation_model = g.value("moderation_model", cfg.gateway.moderation_model);
      cfg.gateway.max_attempts = g.value("max_attempts", cfg.gateway.max_attempts);
      cfg.gateway.backoff_ms = g.value("backoff_ms", cfg.gateway.backoff_ms);
      cfg.gateway.concurrency = g.value("concurrency", cfg.gateway.concurrency);
      cfg.gateway.timeout_ms = g.value("timeout_ms", cfg.gateway.timeout_ms);
      cfg.gateway.replay_trace = g.value("replay_trace", cfg.gateway.replay_trace);
      cfg.gateway.mock_accuracy_pct = g.value("mock_accuracy_pct", cfg.gateway.mock_accuracy_pct);
      cfg.gateway.mock_flag_pct = g.value("mock_flag_pct", cfg.gateway.mock_flag_pct);
    }
    if (obj.contains("eval")) {
      const json& e = obj.at("eval");
      cfg.faithfulness.sample_size = e.value("faithfulness_sample", cfg.faithfulness.sample_size);
      cfg.faithfulness.seed = e.value("faithfulness_seed", cfg.faithfulness.seed);
      cfg.moderation.sample_size = e.value("moderation_sample", cfg.moderation.sample_size);
      cfg.moderation.seed = e.value("moderation_seed", cfg.moderation.seed);
      cfg.moderation.skip_abort_fraction =
          e.value("moderation_skip_abort_fraction", cfg.moderation.skip_abort_fraction);
    }
    cfg.seed = obj.value("seed", cfg.seed);
    cfg.output_dir = obj.value("output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config parse error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  json obj = json::parse(read_file(path), nullptr, false);
  if (obj.is_discarded()) throw UsageError("config is not valid JSON: " + path);
  return from_json(obj);
}

json RunManifest::to_json() const {
  json digests = json::object();
  for (const auto& [path, digest] : input_digests) digests[path] = digest;
  json summ = json::object();
  for (const auto& [key, value] : summary) summ[key] = value;
  return {{"config", config},
          {"input_digests", digests},
          {"artifacts", artifacts},
          {"summary", summ},
          {"wall_clock_s", wall_clock_s},
          {"tool_version", tool_version}};
}

RunManifest RunManifest::from_json(const json& obj) {
  RunManifest m;
  m.config = obj.at("config");
  for (auto it = obj.at("input_digests").begin(); it != obj.at("input_digests").end(); ++it) {
    m.input_digests[it.key()] = it.value().get<std::string>();
  }
  m.artifacts = obj.at("artifacts").get<std::vector<std::string>>();
  if (obj.contains("summary")) {
    for (auto it = obj.at("summary").begin(); it != obj.at("summary").end(); ++it) {
      m.summary[it.key()] = it.value().get<std::string>();
    }
  }
  m.wall_clock_s = obj.value("wall_clock_s", 0.0);
  m.tool_version = obj.value("tool_version", std::string());
  return m;
}

void write_manifest(const std::string& output_dir, const RunManifest& manifest) {
  write_file((fs::path(output_dir) / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::string& output_dir) {
  std::string path = (fs::path(output_dir) / "manifest.json").string();
  json obj = json::parse(read_file(path), nullptr, false);
  if (obj.is_discarded()) throw PipelineError("corrupt manifest: " + path);
  return RunManifest::from_json(obj);
}

void verify_manifest_artifacts(const std::string& output_dir) {
  RunManifest manifest = read_manifest(output_dir);
  std::set<std::string> listed(manifest.artifacts.begin(), manifest.artifacts.end());
  for (const auto& name : listed) {
    if (!fs::exists(fs::path(output_dir) / name)) {
      throw PipelineError("manifest lists missing artifact: " + name);
    }
  }
  for (const auto& entry : fs::directory_iterator(output_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name == "manifest.json" || name == ".lock") continue;
    if (!listed.count(name)) throw PipelineError("orphan artifact not in manifest: " + name);
  }
}

DirLock::DirLock(const std::string& dir) {
  fs::create_directories(dir);
  path_ = (fs::path(dir) / ".lock").string();
  std::ifstream probe(path_);
  if (probe.good()) {
    throw PipelineError("output directory is locked by another run: " + dir);
  }
  std::ofstream lock(path_);
  if (!lock) throw PipelineError("cannot create lock file in " + dir);
  lock << "locked\n";
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---- bundled demo mock ----

namespace {

// Extracts N from the first "persp<digits>" occurrence.
std::optional<int> find_perspective_index(const std::string& text) {
  size_t pos = text.find("persp");
  if (pos == std::string::npos) return std::nullopt;
  size_t p = pos + 5;
  int value = 0;
  bool any = false;
  while (p < text.size() && std::isdigit(static_cast<unsigned char>(text[p]))) {
    value = value * 10 + (text[p] - '0');
    ++p;
    any = true;
  }
  if (!any) return std::nullopt;
  return value;
}

// Counts enumerated options ("A. ", "B. ", ...) in the prompt.
int count_options(const std::string& text) {
  int count = 0;
  size_t pos = text.find("Options:");
  if (pos == std::string::npos) return 3;
  std::istringstream in(text.substr(pos));
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() >= 3 && line[0] == 'A' + count && line[1] == '.' && line[2] == ' ') ++count;
  }
  return count >= 2 ? count : 3;
}

// Last "option X" mention in a text; the demo CoTs state their conclusion
// this way so the judge mock can recover it.
std::optional<char> find_option_mention(const std::string& text) {
  std::optional<char> found;
  size_t pos = 0;
  while ((pos = text.find("option ", pos)) != std::string::npos) {
    size_t p = pos + 7;
    if (p < text.size() && text[p] >= 'A' && text[p] <= 'Z') found = text[p];
    pos = p;
  }
  return found;
}

std::optional<int> gold_from_rationalization(const std::string& prompt) {
  // VK rationalization embeds the stance between ** markers.
  size_t b = prompt.find("**");
  if (b != std::string::npos) {
    size_t e = prompt.find("**", b + 2);
    if (e != std::string::npos) {
      std::string stance = prompt.substr(b + 2, e - b - 2);
      if (stance == "support") return 0;
      if (stance == "oppose") return 1;
      if (stance == "either") return 2;
    }
  }
  // OpinionQA rationalization names the gold option text.
  size_t m = prompt.find("Most Popular Option: ");
  if (m != std::string::npos) {
    size_t eol = prompt.find('\n', m);
    std::string gold_text = trim(prompt.substr(m + 21, eol - (m + 21)));
    // match against the enumerated options
    size_t pos = 0;
    while ((pos = prompt.find(". ", pos)) != std::string::npos) {
      if (pos >= 1 && prompt[pos - 1] >= 'A' && prompt[pos - 1] <= 'Z') {
        size_t eol2 = prompt.find('\n', pos);
        std::string opt = trim(prompt.substr(pos + 2, eol2 - (pos + 2)));
        if (opt == gold_text) return prompt[pos - 1] - 'A';
      }
      ++pos;
    }
  }
  return std::nullopt;
}

}  // namespace

std::unique_ptr<gateway::Transport> make_demo_mock(const GatewaySetup& setup, uint64_t seed) {
  int accuracy_pct = setup.mock_accuracy_pct;
  int flag_pct = setup.mock_flag_pct;

  auto chat = [accuracy_pct, seed](const gateway::ChatRequest& req) -> std::string {
    const std::string& prompt = req.prompt;
    bool rationalize = contains(prompt, "Your Justification:") ||
                       contains(prompt, "Your Explanation:");
    bool judge = contains(prompt, "Rationale:");
    int n_options = count_options(prompt);

    if (judge) {
      size_t r = prompt.find("Rationale:");
      std::string rationale = prompt.substr(r);
      auto mention = find_option_mention(rationale);
      char letter = mention.value_or('A');
      return std::string("Answer: ") + letter;
    }
    if (rationalize) {
      int gold = gold_from_rationalization(prompt).value_or(0);
      char letter = static_cast<char>('A' + gold);
      return std::string("The situation rewards a careful reading of the stated stakes. "
                         "Some considerations cut one way, others the opposite, yet taken "
                         "together they point to option ") +
             letter + ".";
    }
    // Task prompt: answer at the configured accuracy when the perspective
    // token encodes the gold, pseudo-randomly otherwise.
    uint64_t h = hash64(prompt, seed);
    int answer;
    auto persp = find_perspective_index(prompt);
    if (persp) {
      int gold = synthetic::perspective_gold(*persp, n_options);
      bool correct = static_cast<int>(h % 100) < accuracy_pct;
      answer = correct ? gold
                       : static_cast<int>((gold + 1 + (h >> 8) % (n_options - 1)) % n_options);
    } else {
      answer = static_cast<int>(h % n_options);
    }
    char letter = static_cast<char>('A' + answer);
    bool wants_cot = contains(prompt, "step by step");
    if (!wants_cot) return std::string("Answer: ") + letter;
    // Echo a slice of the scenario so CoT texts differ across instances.
    std::string echo;
    size_t s = prompt.find("Situation: ");
    if (s == std::string::npos) s = prompt.find("\n\n");
    if (s != std::string::npos) {
      size_t start = prompt.find(' ', s) + 1;
      size_t eol = prompt.find('\n', start);
      echo = prompt.substr(start, std::min<size_t>(40, eol - start));
    }
    return std::string("Considering \"") + echo +
           "\" from the stated point of view, several factors matter and not all of them "
           "agree. On balance the reasoning points to option " +
           letter + ".\nAnswer: " + letter;
  };

  auto moderate = [flag_pct, seed](const std::string& input) -> gateway::ModerationVerdict {
    gateway::ModerationVerdict v;
    for (const auto& name : gateway::kCoreModerationCategories) v.categories[name] = {};
    uint64_t h = hash64(input, mix64(seed, 0x30d));
    if (static_cast<int>(h % 100) < flag_pct) {
      int pick = static_cast<int>((h >> 8) % 10);
      const char* cat = pick < 7 ? "violence" : (pick < 9 ? "sexual" : "harassment");
      v.categories[cat] = {true, 0.91};
      v.flagged = true;
    }
    return v;
  };

  return std::make_unique<gateway::MockTransport>(chat, moderate);
}

std::unique_ptr<gateway::Gateway> make_gateway(const ExperimentConfig& config,
                                               const std::string& replay_override,
                                               bool record_trace) {
  gateway::GatewayConfig gw_cfg;
  gw_cfg.model = config.gateway.model;
  gw_cfg.moderation_model = config.gateway.moderation_model;
  gw_cfg.max_attempts = config.gateway.max_attempts;
  gw_cfg.backoff_ms = config.gateway.backoff_ms;
  gw_cfg.concurrency = config.gateway.concurrency;

  std::unique_ptr<gateway::Transport> transport;
  if (!replay_override.empty()) {
    transport = std::make_unique<gateway::ReplayTransport>(replay_override);
  } else if (config.gateway.kind == "replay") {
    transport = std::make_unique<gateway::ReplayTransport>(config.gateway.replay_trace);
  } else if (config.gateway.kind == "http") {
    const char* key = std::getenv(config.gateway.api_key_env.c_str());
    transport = std::make_unique<gateway::HttpTransport>(config.gateway.base_url,
                                                         key ? key : "",
                                                         config.gateway.timeout_ms);
  } else {
    transport = make_demo_mock(config.gateway, config.seed);
  }
  bool replaying = !replay_override.empty() || config.gateway.kind == "replay";
  if (record_trace && !replaying) {
    gw_cfg.trace_path = (fs::path(config.output_dir) / "trace.jsonl").string();
  }
  return std::make_unique<gateway::Gateway>(std::move(transport), gw_cfg);
}

// ---- pipeline ----

namespace {

struct Pipeline {
  const ExperimentConfig& cfg;
  bool force;
  std::string replay_override;
  fs::path dir;
  RunManifest manifest;
  corpus::SplitBundle splits;

  std::string path(const std::string& name) const { return (dir / name).string(); }

  bool have(const std::string& name) const { return fs::exists(dir / name); }

  void add_artifact(const std::string& name) {
    if (std::find(manifest.artifacts.begin(), manifest.artifacts.end(), name) ==
        manifest.artifacts.end()) {
      manifest.artifacts.push_back(name);
    }
  }

  void ingest() {
    corpus::Dataset kind = cfg.dataset_kind();
    bool cached = have("train.jsonl") && have("validation.jsonl") && have("test.jsonl") && !force;
    if (cached) {
      splits.train = corpus::read_taskset(path("train.jsonl"), kind);
      splits.validation = corpus::read_taskset(path("validation.jsonl"), kind);
      splits.test = corpus::read_taskset(path("test.jsonl"), kind);
      splits.train.split = corpus::Split::Train;
      splits.validation.split = corpus::Split::Validation;
      splits.test.split = corpus::Split::Test;
    } else {
      corpus::TaskSet all;
      if (cfg.dataset == "synthetic") {
        all = synthetic::generate_task(cfg.synthetic_task);
      } else if (cfg.dataset == "vk") {
        all = corpus::load_vk(cfg.dataset_path);
        manifest.input_digests[cfg.dataset_path] = sha256_file_hex(cfg.dataset_path);
      } else {
        all = corpus::load_opinionqa(cfg.dataset_path);
        manifest.input_digests[cfg.dataset_path] = sha256_file_hex(cfg.dataset_path);
      }
      splits = corpus::make_splits(all.instances, cfg.split_seed, cfg.fractions, kind);
      corpus::write_taskset(path("train.jsonl"), splits.train);
      corpus::write_taskset(path("validation.jsonl"), splits.validation);
      corpus::write_taskset(path("test.jsonl"), splits.test);
    }
    add_artifact("train.jsonl");
    add_artifact("validation.jsonl");
    add_artifact("test.jsonl");
    manifest.summary["n_train"] = std::to_string(splits.train.size());
    manifest.summary["n_validation"] = std::to_string(splits.validation.size());
    manifest.summary["n_test"] = std::to_string(splits.test.size());
  }

  std::vector<distill::CoTRecord> build_records(gateway::Gateway* gw) {
    std::vector<distill::CoTRecord> records;
    switch (cfg.method) {
      case Method::Sft:
        records = distill::build_sft_dataset(splits.train);
        break;
      case Method::HumanCot: {
        auto result = distill::build_human_cot_dataset(splits.train);
        manifest.summary["dropped_missing_justification"] =
            std::to_string(result.dropped_missing_justification);
        records = std::move(result.records);
        break;
      }
      case Method::SyntheticCot: {
        gateway::SamplingProfile profile;  // stochastic defaults (0.7 / 0.95)
        auto result = distill::generate_synthetic_cot(splits.train, *gw, profile);
        manifest.summary["synthetic_first_try_correct"] =
            std::to_string(result.stats.first_try_correct);
        manifest.summary["synthetic_rationalized"] = std::to_string(result.stats.rationalized);
        manifest.summary["synthetic_skipped"] = std::to_string(result.stats.skipped);
        records = std::move(result.records);
        break;
      }
      default:
        throw PipelineError("build_records: method has no training records");
    }
    return records;
  }

  policy::PolicyParams train_policy_on_records(const std::vector<distill::CoTRecord>& records) {
    std::map<std::string, const corpus::TaskInstance*> by_id;
    for (const auto& inst : splits.train.instances) by_id[inst.id] = &inst;
    corpus::TaskSet covered;
    covered.dataset = splits.train.dataset;
    for (const auto& rec : records) {
      auto it = by_id.find(rec.instance_id);
      if (it == by_id.end()) {
        throw PipelineError("training record for unknown instance " + rec.instance_id);
      }
      covered.instances.push_back(*it->second);
    }
    if (covered.instances.empty()) throw PipelineError("no training records to fit");
    auto examples = policy::make_sft_examples(covered, cfg.feature_map);
    int n_options = covered.instances.front().n_options();
    policy::SftSchedule schedule = cfg.sft;
    schedule.seed = mix64(cfg.seed, 0x5f7);
    auto result = policy::sft_train(
        policy::init_params(cfg.feature_map.dim, n_options + 1, mix64(cfg.seed, 0xa111), 0.01),
        examples, schedule);
    std::ostringstream csv;
    csv << "epoch,mean_loss\n";
    for (size_t e = 0; e < result.loss_curve.size(); ++e) {
      csv << e << "," << format_double(result.loss_curve[e]) << "\n";
    }
    write_file(path("loss_curve.csv"), csv.str());
    add_artifact("loss_curve.csv");
    return std::move(result.params);
  }

  std::vector<evalsuite::PredictionRecord> policy_predictions(
      const policy::PolicyParams& params, int decode_len, const std::string& method_name) {
    std::vector<evalsuite::PredictionRecord> out;
    out.reserve(splits.test.size());
    for (const auto& inst : splits.test.instances) {
      auto features = policy::featurize(inst, cfg.feature_map);
      auto traj = policy::greedy_response(params, features, decode_len);
      prompting::ParsedAnswer parsed;
      parsed.option = policy::trajectory_answer(traj, params);
      out.push_back(evalsuite::make_prediction(inst.id, method_name, "", parsed, inst.gold));
    }
    return out;
  }

  std::vector<evalsuite::PredictionRecord> gateway_predictions(gateway::Gateway& gw,
                                                               const std::string& method_name) {
    std::vector<prompting::PromptBundle> prompts;
    prompts.reserve(splits.test.size());
    for (const auto& inst : splits.test.instances) {
      prompts.push_back(prompting::render_task_prompt(inst, prompting::PromptMode::ZeroShotCot));
    }
    gateway::SamplingProfile profile;
    auto outcomes = gw.complete_batch(prompts, profile);
    std::vector<evalsuite::PredictionRecord> out;
    out.reserve(outcomes.size());
    for (size_t i = 0; i < outcomes.size(); ++i) {
      const auto& inst = splits.test.instances[i];
      if (!outcomes[i].ok) {
        throw PipelineError("zero-shot completion failed for " + inst.id + ": " +
                            outcomes[i].error);
      }
      const std::string& text = outcomes[i].record.raw_text;
      auto parsed = prompting::parse_answer(text, inst.n_options());
      std::string cot = parsed.marker_position >= 0
                            ? trim(text.substr(0, parsed.marker_position))
                            : trim(text);
      out.push_back(evalsuite::make_prediction(inst.id, method_name, cot, parsed, inst.gold));
    }
    return out;
  }

  void write_metrics(const std::vector<evalsuite::PredictionRecord>& predictions) {
    int n_classes = 2;
    for (const auto& inst : splits.test.instances) {
      n_classes = std::max(n_classes, inst.n_options());
    }
    json metrics = json::object();
    auto original = evalsuite::compute_metrics(predictions, n_classes,
                                               evalsuite::MetricsVariant::Original);
    metrics["original"] = evalsuite::metrics_to_json(original);

    std::ostringstream table;
    table << "method: " << to_string(cfg.method) << "\n";
    table << "variant    n      Acc     BAcc    MaF\n";
    auto row = [&](const char* name, const evalsuite::MetricsReport& r) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%-10s %-6d %-7.1f %-7.1f %-7.1f\n", name, r.n,
                    100.0 * r.accuracy, 100.0 * r.balanced_accuracy, 100.0 * r.macro_f1);
      table << buf;
    };
    row("original", original);

    if (cfg.dataset_kind() == corpus::Dataset::VK) {
      std::vector<evalsuite::PredictionRecord> binary;
      for (const auto& rec : predictions) {
        if (rec.gold == corpus::kVkSupport || rec.gold == corpus::kVkOppose) {
          binary.push_back(rec);
        }
      }
      if (!binary.empty()) {
        auto binary_report =
            evalsuite::compute_metrics(binary, n_classes, evalsuite::MetricsVariant::Binary);
        metrics["binary"] = evalsuite::metrics_to_json(binary_report);
        row("binary", binary_report);
      }
    }
    write_file(path("metrics.json"), metrics.dump(2) + "\n");
    write_file(path("metrics_table.txt"), table.str());
    add_artifact("metrics.json");
    add_artifact("metrics_table.txt");
  }

  std::vector<distill::CoTRecord> distill_stage() {
    if (cfg.method == Method::ZeroShotCot || cfg.method == Method::Rlvr) {
      throw UsageError("method " + to_string(cfg.method) + " has no distillation stage");
    }
    std::vector<distill::CoTRecord> records;
    if (have("records.jsonl") && !force) {
      records = distill::read_records(path("records.jsonl"));
    } else {
      std::unique_ptr<gateway::Gateway> gw;
      if (cfg.method == Method::SyntheticCot) {
        gw = make_gateway(cfg, replay_override);
        if (!gw->config().trace_path.empty()) add_artifact("trace.jsonl");
      }
      records = build_records(gw.get());
      distill::write_records(path("records.jsonl"), records);
    }
    add_artifact("records.jsonl");
    if (cfg.method != Method::Sft) {
      write_file(path("length_stats.json"),
                 distill::length_stats_to_json(distill::length_stats(records)).dump(2) + "\n");
      add_artifact("length_stats.json");
    }
    return records;
  }

  void execute() {
    ingest();

    std::vector<evalsuite::PredictionRecord> predictions;
    if (have("predictions.jsonl") && !force) {
      predictions = evalsuite::read_predictions(path("predictions.jsonl"));
    } else if (cfg.method == Method::ZeroShotCot) {
      auto gw = make_gateway(cfg, replay_override);
      if (!gw->config().trace_path.empty()) add_artifact("trace.jsonl");
      predictions = gateway_predictions(*gw, to_string(cfg.method));
      evalsuite::write_predictions(path("predictions.jsonl"), predictions);
    } else if (cfg.method == Method::Rlvr) {
      auto result = rlvr::rlvr_train(splits.train, splits.validation, cfg.feature_map, cfg.grpo,
                                     cfg.seed);
      policy::save_params(path("checkpoint.txt"), result.params);
      rlvr::save_curve_csv(path("curve.csv"), result.curve);
      add_artifact("checkpoint.txt");
      add_artifact("curve.csv");
      manifest.summary["final_val_accuracy"] = format_double(result.curve.back().val_accuracy);
      predictions = policy_predictions(result.params, cfg.grpo.max_len, to_string(cfg.method));
      evalsuite::write_predictions(path("predictions.jsonl"), predictions);
    } else {
      auto records = distill_stage();
      auto params = train_policy_on_records(records);
      policy::save_params(path("checkpoint.txt"), params);
      add_artifact("checkpoint.txt");
      // Directly supervised policies answer in one token.
      predictions = policy_predictions(params, 1, to_string(cfg.method));
      evalsuite::write_predictions(path("predictions.jsonl"), predictions);
    }
    add_artifact("predictions.jsonl");

    write_metrics(predictions);
  }
};

Pipeline make_pipeline(const ExperimentConfig& config, bool force,
                       const std::string& replay_override) {
  fs::path dir(config.output_dir);
  Pipeline pipeline{config, force, replay_override, dir, {}, {}};
  if (fs::exists(dir / "manifest.json")) pipeline.manifest = read_manifest(config.output_dir);
  pipeline.manifest.config = config.to_json();
  pipeline.manifest.tool_version = kToolVersion;
  return pipeline;
}

}  // namespace

RunManifest run(const ExperimentConfig& config, bool force, const std::string& replay_override) {
  config.validate();
  fs::create_directories(config.output_dir);
  DirLock lock(config.output_dir);

  fs::path dir(config.output_dir);
  if (!force && fs::exists(dir / "manifest.json") && fs::exists(dir / "metrics.json")) {
    return read_manifest(config.output_dir);
  }

  auto start = std::chrono::steady_clock::now();
  Pipeline pipeline = make_pipeline(config, force, replay_override);
  pipeline.execute();
  pipeline.manifest.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(config.output_dir, pipeline.manifest);
  verify_manifest_artifacts(config.output_dir);
  return pipeline.manifest;
}

RunManifest run_ingest(const ExperimentConfig& config, bool force) {
  config.validate();
  fs::create_directories(config.output_dir);
  DirLock lock(config.output_dir);
  Pipeline pipeline = make_pipeline(config, force, "");
  pipeline.ingest();
  write_manifest(config.output_dir, pipeline.manifest);
  return pipeline.manifest;
}

RunManifest run_distill(const ExperimentConfig& config, bool force,
                        const std::string& replay_override) {
  config.validate();
  fs::create_directories(config.output_dir);
  DirLock lock(config.output_dir);
  Pipeline pipeline = make_pipeline(config, force, replay_override);
  pipeline.ingest();
  pipeline.distill_stage();
  write_manifest(config.output_dir, pipeline.manifest);
  return pipeline.manifest;
}

namespace {

// Shared scaffolding for the post-hoc judge/moderation stages: both operate
// on a completed run's predictions.
struct PostHocStage {
  ExperimentConfig cfg;
  RunManifest manifest;
  std::vector<evalsuite::PredictionRecord> predictions;
  corpus::TaskSet test;

  explicit PostHocStage(const ExperimentConfig& config) : cfg(config) {
    fs::path dir(cfg.output_dir);
    if (!fs::exists(dir / "predictions.jsonl")) {
      throw PipelineError("no predictions.jsonl under " + cfg.output_dir +
                          "; run the evaluate stage first");
    }
    manifest = read_manifest(cfg.output_dir);
    predictions = evalsuite::read_predictions((dir / "predictions.jsonl").string());
    test = corpus::read_taskset((dir / "test.jsonl").string(), cfg.dataset_kind());
  }

  std::map<std::string, corpus::TaskInstance> task_index() const {
    std::map<std::string, corpus::TaskInstance> index;
    for (const auto& inst : test.instances) index[inst.id] = inst;
    return index;
  }

  void finish(const std::string& artifact, const json& report) {
    write_file((fs::path(cfg.output_dir) / artifact).string(), report.dump(2) + "\n");
    if (std::find(manifest.artifacts.begin(), manifest.artifacts.end(), artifact) ==
        manifest.artifacts.end()) {
      manifest.artifacts.push_back(artifact);
    }
  }
};

}  // namespace

json run_faithfulness_stage(const ExperimentConfig& config, const std::string& replay_override) {
  DirLock lock(config.output_dir);
  PostHocStage stage(config);
  auto gw = make_gateway(config, replay_override);
  bool recording = !gw->config().trace_path.empty();
  auto report = evalsuite::run_faithfulness(stage.predictions, stage.task_index(), *gw,
                                            config.faithfulness);
  json out = evalsuite::faithfulness_to_json(report);
  stage.finish("faithfulness.json", out);
  if (recording &&
      std::find(stage.manifest.artifacts.begin(), stage.manifest.artifacts.end(),
                "trace.jsonl") == stage.manifest.artifacts.end()) {
    stage.manifest.artifacts.push_back("trace.jsonl");
  }
  write_manifest(config.output_dir, stage.manifest);
  return out;
}

json run_moderation_stage(const ExperimentConfig& config, const std::string& replay_override) {
  DirLock lock(config.output_dir);
  PostHocStage stage(config);
  auto gw = make_gateway(config, replay_override);
  bool recording = !gw->config().trace_path.empty();
  auto report = evalsuite::run_moderation(stage.predictions, *gw, config.moderation);
  json out = evalsuite::moderation_to_json(report);
  stage.finish("moderation.json", out);
  if (recording &&
      std::find(stage.manifest.artifacts.begin(), stage.manifest.artifacts.end(),
                "trace.jsonl") == stage.manifest.artifacts.end()) {
    stage.manifest.artifacts.push_back("trace.jsonl");
  }
  write_manifest(config.output_dir, stage.manifest);
  return out;
}

evalsuite::SweepCurve run_sweep_stage(const ExperimentConfig& config, const std::string& trainer,
                                      const std::vector<double>& fractions) {
  if (trainer != "sft" && trainer != "rlvr") {
    throw UsageError("sweep trainer must be sft or rlvr");
  }
  if (fractions.empty()) throw UsageError("sweep requires at least one fraction");
  config.validate();
  fs::create_directories(config.output_dir);
  DirLock lock(config.output_dir);
  Pipeline pipeline = make_pipeline(config, false, "");
  pipeline.ingest();

  const corpus::TaskSet& validation = pipeline.splits.validation;
  auto train_fn = [&](const corpus::TaskSet& subset) -> double {
    if (trainer == "rlvr") {
      auto result = rlvr::rlvr_train(subset, validation, config.feature_map, config.grpo,
                                     config.seed);
      return result.curve.back().val_accuracy;
    }
    auto examples = policy::make_sft_examples(subset, config.feature_map);
    int n_options = subset.instances.front().n_options();
    policy::SftSchedule schedule = config.sft;
    schedule.seed = mix64(config.seed, 0x5f7);
    auto result = policy::sft_train(
        policy::init_params(config.feature_map.dim, n_options + 1, mix64(config.seed, 0xa111),
                            0.01),
        examples, schedule);
    return rlvr::policy_accuracy(result.params, validation, config.feature_map, 1);
  };

  auto curve = evalsuite::sample_efficiency_sweep(pipeline.splits.train, fractions,
                                                  mix64(config.seed, 0x5ee9), train_fn);
  evalsuite::save_sweep_csv((fs::path(config.output_dir) / "sweep.csv").string(), curve);
  pipeline.add_artifact("sweep.csv");
  write_manifest(config.output_dir, pipeline.manifest);
  return curve;
}

// ---- report ----

std::string render_report(const std::vector<std::string>& run_dirs,
                          const std::string& baseline_dir) {
  if (run_dirs.empty()) throw UsageError("report requires at least one run directory");

  struct RunData {
    std::string dir;
    std::string method;
    corpus::Dataset dataset;
    std::vector<evalsuite::PredictionRecord> predictions;
  };

  auto load_run = [](const std::string& dir) {
    RunData data;
    data.dir = dir;
    RunManifest manifest = read_manifest(dir);
    ExperimentConfig cfg = ExperimentConfig::from_json(manifest.config);
    data.method = to_string(cfg.method);
    data.dataset = cfg.dataset_kind();
    data.predictions = evalsuite::read_predictions((fs::path(dir) / "predictions.jsonl").string());
    return data;
  };

  RunData baseline = load_run(baseline_dir);
  std::vector<RunData> runs;
  bool baseline_in_list = false;
  for (const auto& dir : run_dirs) {
    runs.push_back(load_run(dir));
    if (fs::weakly_canonical(dir) == fs::weakly_canonical(baseline_dir)) baseline_in_list = true;
  }
  if (!baseline_in_list) runs.insert(runs.begin(), baseline);

  auto id_set = [](const std::vector<evalsuite::PredictionRecord>& records) {
    std::set<std::string> ids;
    for (const auto& rec : records) ids.insert(rec.instance_id);
    return ids;
  };
  std::set<std::string> base_ids = id_set(baseline.predictions);
  for (const auto& run : runs) {
    if (id_set(run.predictions) != base_ids) {
      throw EvalError("refusing to compare runs over different test splits (" + run.dir + ")");
    }
    if (run.dataset != baseline.dataset) {
      throw EvalError("refusing to compare runs over different datasets (" + run.dir + ")");
    }
  }

  int n_classes = 2;
  for (const auto& rec : baseline.predictions) n_classes = std::max(n_classes, rec.gold + 1);
  for (const auto& run : runs) {
    for (const auto& rec : run.predictions) {
      if (rec.parsed.option) n_classes = std::max(n_classes, *rec.parsed.option + 1);
      n_classes = std::max(n_classes, rec.gold + 1);
    }
  }

  bool vk = baseline.dataset == corpus::Dataset::VK;
  std::ostringstream out;
  out << "comparison over " << baseline.predictions.size() << " test instances; baseline: "
      << baseline.method << " (" << baseline.dir << ")\n\n";
  if (vk) {
    out << "                      |        Original        |         Binary\n";
    out << "method                |  Acc    BAcc   MaF     |  Acc    BAcc   MaF\n";
    out << "----------------------+------------------------+----------------------\n";
  } else {
    out << "method                |  Acc    BAcc   MaF\n";
    out << "----------------------+---------------------\n";
  }

  for (const auto& run : runs) {
    auto original = evalsuite::compute_metrics(run.predictions, n_classes,
                                               evalsuite::MetricsVariant::Original);
    std::string marker = " ";
    if (run.dir != baseline.dir) {
      auto mc = evalsuite::mcnemar(run.predictions, baseline.predictions);
      if (mc.p_value < 0.05) marker = "*";
    }
    char buf[160];
    if (vk) {
      std::vector<evalsuite::PredictionRecord> binary;
      for (const auto& rec : run.predictions) {
        if (rec.gold == corpus::kVkSupport || rec.gold == corpus::kVkOppose) binary.push_back(rec);
      }
      evalsuite::MetricsReport bin;
      if (!binary.empty()) {
        bin = evalsuite::compute_metrics(binary, n_classes, evalsuite::MetricsVariant::Binary);
      }
      std::snprintf(buf, sizeof(buf),
                    "%-21s | %5.1f%s %5.1f  %5.1f    | %5.1f  %5.1f  %5.1f\n", run.method.c_str(),
                    100.0 * original.accuracy, marker.c_str(), 100.0 * original.balanced_accuracy,
                    100.0 * original.macro_f1, 100.0 * bin.accuracy,
                    100.0 * bin.balanced_accuracy, 100.0 * bin.macro_f1);
    } else {
      std::snprintf(buf, sizeof(buf), "%-21s | %5.1f%s %5.1f  %5.1f\n", run.method.c_str(),
                    100.0 * original.accuracy, marker.c_str(), 100.0 * original.balanced_accuracy,
                    100.0 * original.macro_f1);
    }
    out << buf;
  }
  out << "\n* = McNemar p < 0.05 against the baseline on paired test predictions\n";
  out << "\nfull-scale reference (8B-model runs; not desk targets):\n";
  for (const auto& ref : evalsuite::kFullScaleReference) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "  %-10s %-18s %-26s %.2f\n", ref.dataset, ref.method,
                  ref.metric, ref.value);
    out << buf;
  }
  return out.str();
}

}  // namespace steerlab::orchestrator
