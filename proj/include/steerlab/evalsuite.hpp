#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/gateway.hpp"
#include "steerlab/prompting.hpp"

namespace steerlab::evalsuite {

struct PredictionRecord {
  std::string instance_id;
  std::string method_name;
  std::string cot_text;
  prompting::ParsedAnswer parsed;
  int gold = -1;
  bool correct = false;  // maintained as parsed == gold by make_prediction
};

PredictionRecord make_prediction(std::string instance_id, std::string method_name,
                                 std::string cot_text, prompting::ParsedAnswer parsed, int gold);

json prediction_to_json(const PredictionRecord& rec);
PredictionRecord prediction_from_json(const json& obj, int line_no);
std::vector<PredictionRecord> read_predictions(const std::string& path);
void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records);

enum class MetricsVariant { Original, Binary };

std::string to_string(MetricsVariant v);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int gold_support = 0;
  int predicted = 0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;  // mean recall over classes with gold support
  double macro_f1 = 0.0;           // mean F1 over classes with gold support
  std::vector<ClassMetrics> per_class;
  int n = 0;
  MetricsVariant variant = MetricsVariant::Original;
};

json metrics_to_json(const MetricsReport& report);

// Accuracy family over prediction records. Unparseable predictions count as
// wrong and predict no class; a class that is never predicted has precision
// 0. Binary variant refuses records with an Either gold.
MetricsReport compute_metrics(const std::vector<PredictionRecord>& records, int n_classes,
                              MetricsVariant variant);

struct McNemarResult {
  long long b = 0;  // method1 correct, method2 wrong
  long long c = 0;  // method2 correct, method1 wrong
  double p_value = 1.0;
  enum class Variant { ExactBinomial, Chi2Corrected } variant = Variant::ExactBinomial;
};

// Paired significance over discordant correctness counts, aligned by
// instance_id. Exact two-sided binomial p = min(1, 2 P(X <= min(b,c))) with
// X ~ Binomial(b+c, 1/2) for b+c <= 1000, else the continuity-corrected
// chi-square (|b-c|-1)^2 / (b+c).
McNemarResult mcnemar(const std::vector<PredictionRecord>& method1,
                      const std::vector<PredictionRecord>& method2);

// Original prediction of a record whose own parse failed, bucketed under -1
// in the unfaithful-stance histogram.
constexpr int kUnparseableBucket = -1;

struct FaithfulnessReport {
  int n_sampled = 0;
  double faithful_fraction = 0.0;
  std::map<int, double> stance_histogram_over_unfaithful;  // option index (or -1) -> fraction
  int judge_unparseable = 0;  // unfaithful via an unparseable judge reply
};

json faithfulness_to_json(const FaithfulnessReport& report);

struct FaithfulnessOptions {
  int sample_size = 1000;
  uint64_t seed = 0;
};

// Judge protocol: render the judge prompt with the perspective withheld,
// query greedily, and compare the judge's option with the record's own
// parsed option. The perspective-absence invariant is asserted per call.
FaithfulnessReport run_faithfulness(const std::vector<PredictionRecord>& records,
                                    const std::map<std::string, corpus::TaskInstance>& tasks,
                                    gateway::Gateway& judge,
                                    const FaithfulnessOptions& options = {});

struct ModerationReport {
  int n_sampled = 0;
  double overall_pct = 0.0;                   // percent with any category flagged
  std::map<std::string, double> category_pct;  // at least harassment/sexual/violence
  int skipped = 0;
};

json moderation_to_json(const ModerationReport& report);

struct ModerationOptions {
  int sample_size = 2000;
  uint64_t seed = 0;
  double skip_abort_fraction = 0.01;
};

ModerationReport run_moderation(const std::vector<PredictionRecord>& records,
                                gateway::Gateway& gw, const ModerationOptions& options = {});

// Nested scenario-disjoint subsets: smaller fractions are prefixes of larger
// ones under a seeded scenario order. Fraction targets count instances.
std::vector<std::vector<corpus::TaskInstance>> make_nested_subsets(
    const std::vector<corpus::TaskInstance>& instances, const std::vector<double>& fractions,
    uint64_t seed);

struct SweepPoint {
  double fraction = 0.0;
  int n_instances = 0;
  double val_accuracy = 0.0;
};

using SweepCurve = std::vector<SweepPoint>;

void save_sweep_csv(const std::string& path, const SweepCurve& curve);

// One training run per fraction on nested subsets; the trainer callback maps
// a training TaskSet to held-out accuracy.
SweepCurve sample_efficiency_sweep(const corpus::TaskSet& train, const std::vector<double>& fractions,
                                   uint64_t seed,
                                   const std::function<double(const corpus::TaskSet&)>& trainer);

// Full-scale reference results (8B-model runs; multi-thousand GPU-hour
// training). Report-only constants, never desk targets.
struct ReferencePoint {
  const char* dataset;
  const char* method;
  const char* metric;
  double value;
};

extern const std::vector<ReferencePoint> kFullScaleReference;

}  // namespace steerlab::evalsuite
