#pragma once

#include <optional>
#include <string>
#include <vector>

#include "steerlab/util.hpp"

namespace steerlab::corpus {

enum class Dataset { VK, OpinionQA };
enum class Split { Train, Validation, Test };
enum class PerspectiveKind { Value, Right, Duty, Demographic };

std::string to_string(Dataset d);
std::string to_string(Split s);
std::string to_string(PerspectiveKind k);
Split split_from_string(const std::string& s);
PerspectiveKind perspective_kind_from_string(const std::string& s);

// One (scenario, perspective) unit with its candidate options and gold index.
struct TaskInstance {
  std::string id;
  std::string scenario;     // VK situation or OpinionQA question
  std::string perspective;  // VK value/right/duty, or "{attribute} {demographic}"
  PerspectiveKind perspective_kind = PerspectiveKind::Value;
  std::vector<std::string> options;
  int gold = -1;
  std::string scenario_key;  // all instances of one scenario share this
  std::optional<std::vector<double>> distribution;  // OpinionQA response weights
  std::optional<std::string> justification;         // VK human-written rationale
  std::optional<Split> declared_split;              // official split label, if any
  json extras = json::object();                     // unknown fields, preserved

  int n_options() const { return static_cast<int>(options.size()); }
};

// Throws CorpusError if any TaskInstance invariant is violated.
void validate_instance(const TaskInstance& inst, Dataset dataset);

struct TaskSet {
  Dataset dataset = Dataset::VK;
  std::optional<Split> split;  // unset for freshly loaded corpora
  std::vector<TaskInstance> instances;

  size_t size() const { return instances.size(); }
};

struct SplitBundle {
  TaskSet train;
  TaskSet validation;
  TaskSet test;
};

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// VK option order is fixed.
inline const std::vector<std::string> kVkOptions = {"Support", "Oppose", "Either"};
constexpr int kVkSupport = 0;
constexpr int kVkOppose = 1;
constexpr int kVkEither = 2;

// VK source records: one JSON object per line with fields
//   situation, perspective, perspective_kind (value|right|duty),
//   label (supports|opposes|either, any letter case), justification?, split?, id?
// Labels map to 0=Support, 1=Oppose, 2=Either.
TaskSet load_vk(const std::string& path);

// OpinionQA source records: one JSON object per line with fields
//   question, attribute, demographic, options[], distribution[], split?, id?
// gold = argmax of distribution, ties broken by lowest option index.
TaskSet load_opinionqa(const std::string& path);

// Canonical line-delimited record format shared by all pipeline stages:
//   id, situation, perspective, perspective_kind, options[], gold,
//   distribution[]?, justification?, split?   (unknown fields preserved)
TaskSet read_taskset(const std::string& path, Dataset dataset);
void write_taskset(const std::string& path, const TaskSet& set);
json instance_to_json(const TaskInstance& inst);
TaskInstance instance_from_json(const json& obj, Dataset dataset, int line_no);

// Scenario-disjoint split assignment: all instances sharing a scenario_key
// land in the same split. Instances carrying a declared_split keep it;
// the rest are assigned pseudo-randomly, deterministic in (instances, seed,
// fractions). Throws if there are fewer distinct scenario_keys than splits.
SplitBundle make_splits(const std::vector<TaskInstance>& instances, uint64_t seed,
                        const SplitFractions& fractions, Dataset dataset);

// VK-only view restricted to gold in {Support, Oppose}.
TaskSet binary_view(const TaskSet& set);

int argmax_weight(const std::vector<double>& weights);

}  // namespace steerlab::corpus
