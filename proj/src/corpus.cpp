#include "steerlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace steerlab::corpus {

namespace {

std::string line_prefix(const std::string& path, int line_no) {
  return path + ": line " + std::to_string(line_no) + ": ";
}

const json* find_field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

std::string require_string(const json& obj, const char* name, const std::string& ctx) {
  const json* f = find_field(obj, name);
  if (!f || !f->is_string()) throw CorpusError(ctx + "missing or non-string field '" + name + "'");
  return f->get<std::string>();
}

// Field names every loader understands; anything else is carried in extras.
const std::set<std::string> kKnownFields = {
    "id",       "situation",   "perspective", "perspective_kind", "options",
    "gold",     "distribution", "justification", "split",
    "question", "attribute",   "demographic", "label"};

json collect_extras(const json& obj) {
  json extras = json::object();
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!kKnownFields.count(it.key())) extras[it.key()] = it.value();
  }
  return extras;
}

}  // namespace

std::string to_string(Dataset d) { return d == Dataset::VK ? "VK" : "OpinionQA"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

std::string to_string(PerspectiveKind k) {
  switch (k) {
    case PerspectiveKind::Value: return "value";
    case PerspectiveKind::Right: return "right";
    case PerspectiveKind::Duty: return "duty";
    case PerspectiveKind::Demographic: return "demographic";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  std::string v = lower_ascii(trim(s));
  if (v == "train") return Split::Train;
  if (v == "validation" || v == "val" || v == "dev") return Split::Validation;
  if (v == "test") return Split::Test;
  throw CorpusError("unknown split label: '" + s + "'");
}

PerspectiveKind perspective_kind_from_string(const std::string& s) {
  std::string v = lower_ascii(trim(s));
  if (v == "value") return PerspectiveKind::Value;
  if (v == "right") return PerspectiveKind::Right;
  if (v == "duty") return PerspectiveKind::Duty;
  if (v == "demographic") return PerspectiveKind::Demographic;
  throw CorpusError("unknown perspective kind: '" + s + "'");
}

void validate_instance(const TaskInstance& inst, Dataset dataset) {
  if (inst.options.size() < 2) {
    throw CorpusError("instance " + inst.id + ": needs at least 2 options");
  }
  std::set<std::string> uniq(inst.options.begin(), inst.options.end());
  if (uniq.size() != inst.options.size()) {
    throw CorpusError("instance " + inst.id + ": options not pairwise distinct");
  }
  if (inst.gold < 0 || inst.gold >= inst.n_options()) {
    throw CorpusError("instance " + inst.id + ": gold index out of range");
  }
  if (dataset == Dataset::VK && inst.options != kVkOptions) {
    throw CorpusError("instance " + inst.id + ": VK options must be Support/Oppose/Either");
  }
  if (inst.scenario_key.empty()) {
    throw CorpusError("instance " + inst.id + ": empty scenario_key");
  }
  if (inst.distribution) {
    const auto& w = *inst.distribution;
    if (w.size() != inst.options.size()) {
      throw CorpusError("instance " + inst.id + ": distribution length mismatch");
    }
    double sum = 0.0;
    for (double x : w) {
      if (x < 0.0) throw CorpusError("instance " + inst.id + ": negative weight");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw CorpusError("instance " + inst.id + ": distribution does not sum to 1");
    }
  }
}

int argmax_weight(const std::vector<double>& weights) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(weights.size()); ++i) {
    if (weights[i] > weights[best]) best = i;  // ties keep the lowest index
  }
  return best;
}

TaskSet load_vk(const std::string& path) {
  auto rows = read_jsonl(path, ErrorFamily::Corpus);
  if (rows.empty()) throw CorpusError(path + ": no records");
  TaskSet set;
  set.dataset = Dataset::VK;
  std::unordered_set<std::string> seen_ids;
  for (const auto& [line_no, obj] : rows) {
    std::string ctx = line_prefix(path, line_no);
    if (!obj.is_object()) throw CorpusError(ctx + "record is not an object");
    TaskInstance inst;
    inst.scenario = require_string(obj, "situation", ctx);
    inst.perspective = require_string(obj, "perspective", ctx);
    inst.perspective_kind = perspective_kind_from_string(require_string(obj, "perspective_kind", ctx));
    if (inst.perspective_kind == PerspectiveKind::Demographic) {
      throw CorpusError(ctx + "VK records cannot have demographic perspectives");
    }
    std::string label = lower_ascii(trim(require_string(obj, "label", ctx)));
    if (label == "supports") inst.gold = kVkSupport;
    else if (label == "opposes") inst.gold = kVkOppose;
    else if (label == "either") inst.gold = kVkEither;
    else throw CorpusError(ctx + "unknown label string: '" + label + "'");
    inst.options = kVkOptions;
    if (const json* f = find_field(obj, "justification")) {
      if (!f->is_string()) throw CorpusError(ctx + "non-string justification");
      inst.justification = f->get<std::string>();
    }
    if (const json* f = find_field(obj, "split")) {
      inst.declared_split = split_from_string(f->get<std::string>());
    }
    if (const json* f = find_field(obj, "id")) inst.id = f->get<std::string>();
    else inst.id = "vk-" + std::to_string(line_no);
    if (!seen_ids.insert(inst.id).second) throw CorpusError(ctx + "duplicate id '" + inst.id + "'");
    inst.scenario_key = inst.scenario;
    inst.extras = collect_extras(obj);
    validate_instance(inst, Dataset::VK);
    set.instances.push_back(std::move(inst));
  }
  return set;
}

TaskSet load_opinionqa(const std::string& path) {
  auto rows = read_jsonl(path, ErrorFamily::Corpus);
  if (rows.empty()) throw CorpusError(path + ": no records");
  TaskSet set;
  set.dataset = Dataset::OpinionQA;
  std::unordered_set<std::string> seen_ids;
  for (const auto& [line_no, obj] : rows) {
    std::string ctx = line_prefix(path, line_no);
    if (!obj.is_object()) throw CorpusError(ctx + "record is not an object");
    TaskInstance inst;
    inst.scenario = require_string(obj, "question", ctx);
    std::string attribute = require_string(obj, "attribute", ctx);
    std::string demographic = require_string(obj, "demographic", ctx);
    inst.perspective = attribute + " " + demographic;
    inst.perspective_kind = PerspectiveKind::Demographic;
    const json* opts = find_field(obj, "options");
    if (!opts || !opts->is_array() || opts->size() < 2) {
      throw CorpusError(ctx + "missing or short options array");
    }
    for (const auto& o : *opts) inst.options.push_back(o.get<std::string>());
    const json* dist = find_field(obj, "distribution");
    if (!dist || !dist->is_array()) throw CorpusError(ctx + "missing distribution");
    std::vector<double> weights;
    for (const auto& w : *dist) weights.push_back(w.get<double>());
    if (weights.size() != inst.options.size()) {
      throw CorpusError(ctx + "distribution length mismatch");
    }
    for (double w : weights) {
      if (w < 0.0) throw CorpusError(ctx + "negative weight");
    }
    inst.gold = argmax_weight(weights);
    inst.distribution = std::move(weights);
    if (const json* f = find_field(obj, "split")) {
      inst.declared_split = split_from_string(f->get<std::string>());
    }
    if (const json* f = find_field(obj, "id")) inst.id = f->get<std::string>();
    else inst.id = "oqa-" + std::to_string(line_no);
    if (!seen_ids.insert(inst.id).second) throw CorpusError(ctx + "duplicate id '" + inst.id + "'");
    inst.scenario_key = inst.scenario;
    inst.extras = collect_extras(obj);
    validate_instance(inst, Dataset::OpinionQA);
    set.instances.push_back(std::move(inst));
  }
  return set;
}

json instance_to_json(const TaskInstance& inst) {
  json obj = inst.extras.is_object() ? inst.extras : json::object();
  obj["id"] = inst.id;
  obj["situation"] = inst.scenario;
  obj["perspective"] = inst.perspective;
  obj["perspective_kind"] = to_string(inst.perspective_kind);
  obj["options"] = inst.options;
  obj["gold"] = inst.gold;
  if (inst.distribution) obj["distribution"] = *inst.distribution;
  if (inst.justification) obj["justification"] = *inst.justification;
  if (inst.declared_split) obj["split"] = to_string(*inst.declared_split);
  return obj;
}

TaskInstance instance_from_json(const json& obj, Dataset dataset, int line_no) {
  std::string ctx = "line " + std::to_string(line_no) + ": ";
  if (!obj.is_object()) throw CorpusError(ctx + "record is not an object");
  TaskInstance inst;
  inst.id = require_string(obj, "id", ctx);
  inst.scenario = require_string(obj, "situation", ctx);
  inst.perspective = require_string(obj, "perspective", ctx);
  inst.perspective_kind = perspective_kind_from_string(require_string(obj, "perspective_kind", ctx));
  const json* opts = find_field(obj, "options");
  if (!opts || !opts->is_array()) throw CorpusError(ctx + "missing options array");
  for (const auto& o : *opts) inst.options.push_back(o.get<std::string>());
  const json* gold = find_field(obj, "gold");
  if (!gold || !gold->is_number_integer()) throw CorpusError(ctx + "missing gold index");
  inst.gold = gold->get<int>();
  if (const json* f = find_field(obj, "distribution")) {
    inst.distribution = f->get<std::vector<double>>();
  }
  if (const json* f = find_field(obj, "justification")) {
    inst.justification = f->get<std::string>();
  }
  if (const json* f = find_field(obj, "split")) {
    inst.declared_split = split_from_string(f->get<std::string>());
  }
  inst.scenario_key = inst.scenario;
  inst.extras = collect_extras(obj);
  validate_instance(inst, dataset);
  return inst;
}

TaskSet read_taskset(const std::string& path, Dataset dataset) {
  auto rows = read_jsonl(path, ErrorFamily::Corpus);
  if (rows.empty()) throw CorpusError(path + ": no records");
  TaskSet set;
  set.dataset = dataset;
  std::unordered_set<std::string> seen_ids;
  for (const auto& [line_no, obj] : rows) {
    TaskInstance inst = instance_from_json(obj, dataset, line_no);
    if (!seen_ids.insert(inst.id).second) {
      throw CorpusError(line_prefix(path, line_no) + "duplicate id '" + inst.id + "'");
    }
    set.instances.push_back(std::move(inst));
  }
  return set;
}

void write_taskset(const std::string& path, const TaskSet& set) {
  std::vector<json> rows;
  rows.reserve(set.instances.size());
  for (const auto& inst : set.instances) rows.push_back(instance_to_json(inst));
  write_jsonl(path, rows);
}

SplitBundle make_splits(const std::vector<TaskInstance>& instances, uint64_t seed,
                        const SplitFractions& fractions, Dataset dataset) {
  const double fr[3] = {fractions.train, fractions.validation, fractions.test};
  double fsum = fr[0] + fr[1] + fr[2];
  for (double f : fr) {
    if (f <= 0.0) throw CorpusError("split fractions must be positive");
  }
  if (std::abs(fsum - 1.0) > 1e-9) throw CorpusError("split fractions must sum to 1");

  // Group instances by scenario_key, keeping first-appearance order.
  std::vector<std::string> keys;
  std::unordered_map<std::string, std::vector<size_t>> by_key;
  for (size_t i = 0; i < instances.size(); ++i) {
    const std::string& k = instances[i].scenario_key;
    auto [it, inserted] = by_key.try_emplace(k);
    if (inserted) keys.push_back(k);
    it->second.push_back(i);
  }
  if (keys.size() < 3) throw CorpusError("fewer distinct scenario keys than splits");

  // Declared split labels win; a scenario with conflicting labels is an error.
  std::unordered_map<std::string, int> forced;  // key -> split idx
  for (const auto& inst : instances) {
    if (!inst.declared_split) continue;
    int s = static_cast<int>(*inst.declared_split);
    auto [it, inserted] = forced.try_emplace(inst.scenario_key, s);
    if (!inserted && it->second != s) {
      throw CorpusError("scenario '" + inst.scenario_key + "' carries conflicting split labels");
    }
  }
  size_t total = instances.size();
  double assigned[3] = {0, 0, 0};
  std::unordered_map<std::string, int> assignment;
  std::vector<std::string> free_keys;
  for (const auto& k : keys) {
    auto it = forced.find(k);
    if (it != forced.end()) {
      assignment[k] = it->second;
      assigned[it->second] += static_cast<double>(by_key[k].size());
    } else {
      free_keys.push_back(k);
    }
  }

  // Deterministic order independent of input file order: sort free keys by
  // seeded hash, then fill the split with the largest remaining deficit.
  std::sort(free_keys.begin(), free_keys.end(), [&](const std::string& a, const std::string& b) {
    uint64_t ha = hash64(a, seed), hb = hash64(b, seed);
    if (ha != hb) return ha < hb;
    return a < b;
  });
  for (const auto& k : free_keys) {
    int best = 0;
    double best_deficit = -1e300;
    for (int s = 0; s < 3; ++s) {
      double deficit = fr[s] * static_cast<double>(total) - assigned[s];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    assignment[k] = best;
    assigned[best] += static_cast<double>(by_key[k].size());
  }

  SplitBundle bundle;
  TaskSet* sets[3] = {&bundle.train, &bundle.validation, &bundle.test};
  Split names[3] = {Split::Train, Split::Validation, Split::Test};
  for (int s = 0; s < 3; ++s) {
    sets[s]->dataset = dataset;
    sets[s]->split = names[s];
  }
  for (const auto& inst : instances) {
    int s = assignment.at(inst.scenario_key);
    TaskInstance copy = inst;
    copy.declared_split = names[s];
    sets[s]->instances.push_back(std::move(copy));
  }
  return bundle;
}

TaskSet binary_view(const TaskSet& set) {
  if (set.dataset != Dataset::VK) {
    throw CorpusError("binary view undefined for " + to_string(set.dataset));
  }
  TaskSet out;
  out.dataset = set.dataset;
  out.split = set.split;
  for (const auto& inst : set.instances) {
    if (inst.gold == kVkSupport || inst.gold == kVkOppose) out.instances.push_back(inst);
  }
  return out;
}

}  // namespace steerlab::corpus
