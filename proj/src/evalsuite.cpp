#include "steerlab/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

namespace steerlab::evalsuite {

PredictionRecord make_prediction(std::string instance_id, std::string method_name,
                                 std::string cot_text, prompting::ParsedAnswer parsed, int gold) {
  PredictionRecord rec;
  rec.instance_id = std::move(instance_id);
  rec.method_name = std::move(method_name);
  rec.cot_text = std::move(cot_text);
  rec.parsed = parsed;
  rec.gold = gold;
  rec.correct = parsed.option.has_value() && *parsed.option == gold;
  return rec;
}

json prediction_to_json(const PredictionRecord& rec) {
  json obj = {{"instance_id", rec.instance_id},
              {"method_name", rec.method_name},
              {"cot_text", rec.cot_text},
              {"gold", rec.gold},
              {"correct", rec.correct},
              {"marker_position", rec.parsed.marker_position}};
  if (rec.parsed.option) obj["parsed"] = *rec.parsed.option;
  else obj["parsed"] = nullptr;
  return obj;
}

PredictionRecord prediction_from_json(const json& obj, int line_no) {
  std::string ctx = "line " + std::to_string(line_no) + ": ";
  if (!obj.is_object()) throw EvalError(ctx + "record is not an object");
  try {
    prompting::ParsedAnswer parsed;
    if (obj.contains("parsed") && !obj.at("parsed").is_null()) {
      parsed.option = obj.at("parsed").get<int>();
    }
    parsed.marker_position = obj.value("marker_position", -1);
    return make_prediction(obj.at("instance_id").get<std::string>(),
                           obj.at("method_name").get<std::string>(),
                           obj.value("cot_text", std::string()), parsed,
                           obj.at("gold").get<int>());
  } catch (const json::exception& e) {
    throw EvalError(ctx + e.what());
  }
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  auto rows = read_jsonl(path, ErrorFamily::Eval);
  std::vector<PredictionRecord> records;
  records.reserve(rows.size());
  for (const auto& [line_no, obj] : rows) records.push_back(prediction_from_json(obj, line_no));
  return records;
}

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& rec : records) rows.push_back(prediction_to_json(rec));
  write_jsonl(path, rows);
}

std::string to_string(MetricsVariant v) {
  return v == MetricsVariant::Original ? "original" : "binary";
}

json metrics_to_json(const MetricsReport& report) {
  json per_class = json::array();
  for (const auto& c : report.per_class) {
    per_class.push_back({{"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"gold_support", c.gold_support},
                         {"predicted", c.predicted}});
  }
  return {{"accuracy", report.accuracy},
          {"balanced_accuracy", report.balanced_accuracy},
          {"macro_f1", report.macro_f1},
          {"per_class", per_class},
          {"n", report.n},
          {"variant", to_string(report.variant)}};
}

MetricsReport compute_metrics(const std::vector<PredictionRecord>& records, int n_classes,
                              MetricsVariant variant) {
  if (records.empty()) throw EvalError("compute_metrics: no records");
  if (n_classes < 2) throw EvalError("compute_metrics: need at least 2 classes");

  std::vector<long long> gold_count(n_classes, 0), pred_count(n_classes, 0),
      true_pos(n_classes, 0);
  long long correct = 0;
  for (const auto& rec : records) {
    if (rec.gold < 0 || rec.gold >= n_classes) {
      throw EvalError("record " + rec.instance_id + ": gold outside label space");
    }
    if (variant == MetricsVariant::Binary && rec.gold == corpus::kVkEither) {
      throw EvalError("binary variant contains an Either gold (record " + rec.instance_id + ")");
    }
    ++gold_count[rec.gold];
    if (rec.parsed.option) {
      int p = *rec.parsed.option;
      if (p < 0 || p >= n_classes) {
        throw EvalError("record " + rec.instance_id + ": prediction outside label space");
      }
      ++pred_count[p];
      if (p == rec.gold) {
        ++true_pos[p];
        ++correct;
      }
    }
    // Unparseable: wrong, and no class predicted.
  }

  MetricsReport report;
  report.n = static_cast<int>(records.size());
  report.variant = variant;
  report.accuracy = static_cast<double>(correct) / report.n;
  double recall_sum = 0.0, f1_sum = 0.0;
  int present = 0;
  for (int k = 0; k < n_classes; ++k) {
    ClassMetrics cm;
    cm.gold_support = static_cast<int>(gold_count[k]);
    cm.predicted = static_cast<int>(pred_count[k]);
    cm.precision = pred_count[k] > 0 ? static_cast<double>(true_pos[k]) / pred_count[k] : 0.0;
    cm.recall = gold_count[k] > 0 ? static_cast<double>(true_pos[k]) / gold_count[k] : 0.0;
    cm.f1 = (cm.precision + cm.recall) > 0.0
                ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall)
                : 0.0;
    report.per_class.push_back(cm);
    if (gold_count[k] > 0) {
      ++present;
      recall_sum += cm.recall;
      f1_sum += cm.f1;
    }
  }
  if (present == 0) throw EvalError("compute_metrics: no gold support in any class");
  report.balanced_accuracy = recall_sum / present;
  report.macro_f1 = f1_sum / present;
  return report;
}

namespace {

// log P(X = k) for X ~ Binomial(n, 1/2)
double log_binom_half(long long n, long long k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0) - static_cast<double>(n) * std::log(2.0);
}

double exact_binomial_p(long long b, long long c) {
  long long n = b + c;
  if (n == 0) return 1.0;
  long long m = std::min(b, c);
  // sum P(X <= m) in log space
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  logs.reserve(m + 1);
  for (long long k = 0; k <= m; ++k) {
    logs.push_back(log_binom_half(n, k));
    max_log = std::max(max_log, logs.back());
  }
  double sum = 0.0;
  for (double lg : logs) sum += std::exp(lg - max_log);
  double tail = std::exp(max_log) * sum;
  return std::min(1.0, 2.0 * tail);
}

}  // namespace

McNemarResult mcnemar(const std::vector<PredictionRecord>& method1,
                      const std::vector<PredictionRecord>& method2) {
  std::unordered_map<std::string, bool> correct2;
  correct2.reserve(method2.size());
  for (const auto& rec : method2) {
    if (!correct2.emplace(rec.instance_id, rec.correct).second) {
      throw EvalError("mcnemar: duplicate instance_id '" + rec.instance_id + "' in method2");
    }
  }
  if (method1.size() != method2.size()) {
    throw EvalError("mcnemar: methods cover different instance sets");
  }
  McNemarResult result;
  std::set<std::string> seen;
  for (const auto& rec : method1) {
    auto it = correct2.find(rec.instance_id);
    if (it == correct2.end()) {
      throw EvalError("mcnemar: instance '" + rec.instance_id + "' missing from method2");
    }
    if (!seen.insert(rec.instance_id).second) {
      throw EvalError("mcnemar: duplicate instance_id '" + rec.instance_id + "' in method1");
    }
    if (rec.correct && !it->second) ++result.b;
    if (!rec.correct && it->second) ++result.c;
  }
  long long n = result.b + result.c;
  if (n <= 1000) {
    result.variant = McNemarResult::Variant::ExactBinomial;
    result.p_value = exact_binomial_p(result.b, result.c);
  } else {
    result.variant = McNemarResult::Variant::Chi2Corrected;
    double num = std::abs(static_cast<double>(result.b) - static_cast<double>(result.c)) - 1.0;
    double stat = num * num / static_cast<double>(n);
    // survival function of chi-square with 1 dof
    result.p_value = std::erfc(std::sqrt(stat / 2.0));
  }
  return result;
}

json faithfulness_to_json(const FaithfulnessReport& report) {
  json hist = json::object();
  for (const auto& [option, frac] : report.stance_histogram_over_unfaithful) {
    std::string key = option == kUnparseableBucket ? "unparseable" : std::to_string(option);
    hist[key] = frac;
  }
  return {{"n_sampled", report.n_sampled},
          {"faithful_fraction", report.faithful_fraction},
          {"stance_histogram_over_unfaithful", hist},
          {"judge_unparseable", report.judge_unparseable}};
}

namespace {

// Seeded sample of `size` distinct indices (all of them when size >= n),
// in stable original order.
std::vector<size_t> sample_indices(size_t n, int size, uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  if (static_cast<size_t>(size) >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

FaithfulnessReport run_faithfulness(const std::vector<PredictionRecord>& records,
                                    const std::map<std::string, corpus::TaskInstance>& tasks,
                                    gateway::Gateway& judge, const FaithfulnessOptions& options) {
  std::vector<size_t> eligible;
  for (size_t i = 0; i < records.size(); ++i) {
    if (!records[i].cot_text.empty()) eligible.push_back(i);
  }
  if (eligible.empty()) throw EvalError("run_faithfulness: no records with CoT text");

  std::vector<size_t> chosen;
  for (size_t k : sample_indices(eligible.size(), options.sample_size, options.seed)) {
    chosen.push_back(eligible[k]);
  }

  std::vector<prompting::PromptBundle> prompts;
  prompts.reserve(chosen.size());
  std::vector<const corpus::TaskInstance*> instances;
  for (size_t i : chosen) {
    auto it = tasks.find(records[i].instance_id);
    if (it == tasks.end()) {
      throw EvalError("run_faithfulness: no task instance for '" + records[i].instance_id + "'");
    }
    prompting::PromptBundle bundle = prompting::render_judge_prompt(it->second,
                                                                    records[i].cot_text);
    // Withholding invariant, asserted per call: the perspective may only be
    // present if the CoT itself quoted it.
    if (!it->second.perspective.empty() && contains(bundle.text, it->second.perspective) &&
        !bundle.cot_quotes_perspective && !contains(it->second.scenario, it->second.perspective)) {
      throw EvalError("run_faithfulness: perspective leaked into judge prompt for '" +
                      records[i].instance_id + "'");
    }
    prompts.push_back(std::move(bundle));
    instances.push_back(&it->second);
  }

  auto outcomes = judge.complete_batch(prompts, gateway::greedy_profile());

  FaithfulnessReport report;
  report.n_sampled = static_cast<int>(chosen.size());
  int faithful = 0;
  std::map<int, int> unfaithful_by_stance;
  int unfaithful = 0;
  for (size_t k = 0; k < chosen.size(); ++k) {
    const PredictionRecord& rec = records[chosen[k]];
    std::optional<int> judge_option;
    if (outcomes[k].ok) {
      auto parsed = prompting::parse_answer(outcomes[k].record.raw_text,
                                            instances[k]->n_options());
      judge_option = parsed.option;
    }
    if (!judge_option.has_value()) ++report.judge_unparseable;
    bool is_faithful = judge_option.has_value() && rec.parsed.option.has_value() &&
                       *judge_option == *rec.parsed.option;
    if (is_faithful) {
      ++faithful;
    } else {
      ++unfaithful;
      int stance = rec.parsed.option.value_or(kUnparseableBucket);
      ++unfaithful_by_stance[stance];
    }
  }
  report.faithful_fraction = static_cast<double>(faithful) / report.n_sampled;
  for (const auto& [stance, count] : unfaithful_by_stance) {
    report.stance_histogram_over_unfaithful[stance] =
        static_cast<double>(count) / static_cast<double>(unfaithful);
  }
  return report;
}

json moderation_to_json(const ModerationReport& report) {
  json cats = json::object();
  for (const auto& [name, pct] : report.category_pct) cats[name] = pct;
  return {{"n_sampled", report.n_sampled},
          {"overall_pct", report.overall_pct},
          {"category_pct", cats},
          {"skipped", report.skipped}};
}

ModerationReport run_moderation(const std::vector<PredictionRecord>& records,
                                gateway::Gateway& gw, const ModerationOptions& options) {
  std::vector<size_t> eligible;
  for (size_t i = 0; i < records.size(); ++i) {
    if (!records[i].cot_text.empty()) eligible.push_back(i);
  }
  if (eligible.empty()) throw EvalError("run_moderation: no records with CoT text");

  std::vector<size_t> chosen;
  std::vector<std::string> texts;
  for (size_t k : sample_indices(eligible.size(), options.sample_size, options.seed)) {
    chosen.push_back(eligible[k]);
    texts.push_back(records[eligible[k]].cot_text);
  }

  auto outcomes = gw.moderate_batch(texts);

  ModerationReport report;
  int flagged_any = 0;
  std::map<std::string, int> flagged_by_cat;
  for (const auto& name : gateway::kCoreModerationCategories) flagged_by_cat[name] = 0;
  int scored = 0;
  for (const auto& outcome : outcomes) {
    if (!outcome.ok) {
      ++report.skipped;
      continue;
    }
    ++scored;
    if (outcome.verdict.flagged) ++flagged_any;
    for (const auto& name : gateway::kCoreModerationCategories) {
      auto it = outcome.verdict.categories.find(name);
      if (it != outcome.verdict.categories.end() && it->second.flagged) ++flagged_by_cat[name];
    }
  }
  double skip_rate = static_cast<double>(report.skipped) / static_cast<double>(outcomes.size());
  if (skip_rate > options.skip_abort_fraction) {
    throw EvalError("run_moderation: skip rate " + format_double(skip_rate) +
                    " exceeds abort threshold");
  }
  if (scored == 0) throw EvalError("run_moderation: no scored records");
  report.n_sampled = scored;
  report.overall_pct = 100.0 * flagged_any / scored;
  for (const auto& [name, count] : flagged_by_cat) {
    report.category_pct[name] = 100.0 * count / scored;
  }
  return report;
}

std::vector<std::vector<corpus::TaskInstance>> make_nested_subsets(
    const std::vector<corpus::TaskInstance>& instances, const std::vector<double>& fractions,
    uint64_t seed) {
  if (instances.empty()) throw EvalError("make_nested_subsets: no instances");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw EvalError("fractions must lie in (0, 1]");
  }
  // One seeded scenario order shared by all fractions makes subsets nested.
  std::vector<std::string> keys;
  std::unordered_map<std::string, std::vector<size_t>> by_key;
  for (size_t i = 0; i < instances.size(); ++i) {
    auto [it, inserted] = by_key.try_emplace(instances[i].scenario_key);
    if (inserted) keys.push_back(instances[i].scenario_key);
    it->second.push_back(i);
  }
  std::sort(keys.begin(), keys.end(), [&](const std::string& a, const std::string& b) {
    uint64_t ha = hash64(a, seed), hb = hash64(b, seed);
    if (ha != hb) return ha < hb;
    return a < b;
  });

  std::vector<std::vector<corpus::TaskInstance>> subsets;
  for (double fraction : fractions) {
    size_t target = static_cast<size_t>(std::ceil(fraction * static_cast<double>(instances.size())));
    std::vector<size_t> picked;
    for (const auto& key : keys) {
      if (picked.size() >= target) break;
      for (size_t i : by_key[key]) picked.push_back(i);
    }
    if (picked.empty()) throw EvalError("fraction yields zero instances");
    std::sort(picked.begin(), picked.end());
    std::vector<corpus::TaskInstance> subset;
    subset.reserve(picked.size());
    for (size_t i : picked) subset.push_back(instances[i]);
    subsets.push_back(std::move(subset));
  }
  return subsets;
}

void save_sweep_csv(const std::string& path, const SweepCurve& curve) {
  std::ostringstream out;
  out << "fraction,n_instances,val_accuracy\n";
  for (const auto& p : curve) {
    out << format_double(p.fraction) << "," << p.n_instances << ","
        << format_double(p.val_accuracy) << "\n";
  }
  write_file(path, out.str());
}

SweepCurve sample_efficiency_sweep(const corpus::TaskSet& train,
                                   const std::vector<double>& fractions, uint64_t seed,
                                   const std::function<double(const corpus::TaskSet&)>& trainer) {
  auto subsets = make_nested_subsets(train.instances, fractions, seed);
  SweepCurve curve;
  for (size_t i = 0; i < fractions.size(); ++i) {
    corpus::TaskSet subset;
    subset.dataset = train.dataset;
    subset.split = train.split;
    subset.instances = std::move(subsets[i]);
    SweepPoint point;
    point.fraction = fractions[i];
    point.n_instances = static_cast<int>(subset.instances.size());
    point.val_accuracy = trainer(subset);
    curve.push_back(point);
  }
  return curve;
}

const std::vector<ReferencePoint> kFullScaleReference = {
    {"VK", "Llama 3 8B RLVR", "accuracy", 81.1},
    {"VK", "Llama 3 8B RLVR", "macro_f1", 72.5},
    {"VK", "Llama 3 8B RLVR", "moderation_overall_pct", 10.05},
    {"VK", "Llama 3 8B RLVR", "moderation_violence_pct", 9.80},
    {"VK", "Llama 3 8B RLVR", "unfaithful_neither_pct", 58.6},
};

}  // namespace steerlab::evalsuite
