#pragma once

#include <map>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/gateway.hpp"
#include "steerlab/prompting.hpp"

namespace steerlab::distill {

enum class Provenance { None, Human, SyntheticFirstTry, SyntheticRationalized };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct CoTRecord {
  std::string instance_id;
  std::string prompt_text;
  std::string cot_text;     // empty iff provenance == None
  std::string answer_text;  // option letter, always the gold letter
  Provenance provenance = Provenance::None;
  int token_count = 0;      // whitespace tokens of cot_text
};

json record_to_json(const CoTRecord& rec);
CoTRecord record_from_json(const json& obj, int line_no);
std::vector<CoTRecord> read_records(const std::string& path);
void write_records(const std::string& path, const std::vector<CoTRecord>& records);

// Direct-answer training set: one record per instance, no CoT.
std::vector<CoTRecord> build_sft_dataset(const corpus::TaskSet& tasks);

struct HumanCotResult {
  std::vector<CoTRecord> records;
  int dropped_missing_justification = 0;
};

// VK human-written justifications as gold CoT traces. Instances without a
// justification are dropped and counted. OpinionQA has none, so it errors.
HumanCotResult build_human_cot_dataset(const corpus::TaskSet& tasks);

struct GenerationStats {
  int total = 0;
  int first_try_correct = 0;
  int rationalized = 0;
  int skipped = 0;

  double first_try_accuracy() const {
    int attempted = total - skipped;
    return attempted > 0 ? static_cast<double>(first_try_correct) / attempted : 0.0;
  }
};

struct SyntheticCotOptions {
  double skip_abort_fraction = 0.05;  // run aborts above this skip rate
};

struct SyntheticCotResult {
  std::vector<CoTRecord> records;
  GenerationStats stats;
};

// Bootstrap synthetic CoT: sample a CoT + answer per instance; keep first
// tries whose answer verifies against gold, otherwise request a single
// rationalization conditioned on the gold label and keep it unconditionally
// with the answer forced to the gold letter. At most 2 generation calls per
// instance.
SyntheticCotResult generate_synthetic_cot(const corpus::TaskSet& tasks,
                                          gateway::Gateway& gw,
                                          const gateway::SamplingProfile& profile,
                                          const SyntheticCotOptions& options = {});

struct LengthStats {
  int n = 0;
  double mean = 0.0;
  double median = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
};

// Whitespace-token statistics of cot_text grouped by provenance; records
// with empty CoT are excluded and empty groups omitted.
std::map<Provenance, LengthStats> length_stats(const std::vector<CoTRecord>& records);

json length_stats_to_json(const std::map<Provenance, LengthStats>& stats);

}  // namespace steerlab::distill
