#include "steerlab/distill.hpp"

#include <algorithm>
#include <cmath>

namespace steerlab::distill {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::None: return "none";
    case Provenance::Human: return "human";
    case Provenance::SyntheticFirstTry: return "synthetic_firsttry";
    case Provenance::SyntheticRationalized: return "synthetic_rationalized";
  }
  return "?";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "none") return Provenance::None;
  if (s == "human") return Provenance::Human;
  if (s == "synthetic_firsttry") return Provenance::SyntheticFirstTry;
  if (s == "synthetic_rationalized") return Provenance::SyntheticRationalized;
  throw DistillError("unknown provenance: '" + s + "'");
}

namespace {

CoTRecord make_record(const corpus::TaskInstance& inst, std::string prompt_text,
                      std::string cot_text, Provenance provenance) {
  CoTRecord rec;
  rec.instance_id = inst.id;
  rec.prompt_text = std::move(prompt_text);
  rec.cot_text = std::move(cot_text);
  rec.answer_text = std::string(1, prompting::option_letter(inst.gold));
  rec.provenance = provenance;
  rec.token_count = whitespace_token_count(rec.cot_text);
  if ((rec.provenance == Provenance::None) != rec.cot_text.empty()) {
    throw DistillError("record " + rec.instance_id + ": provenance/cot consistency violated");
  }
  return rec;
}

}  // namespace

json record_to_json(const CoTRecord& rec) {
  return {{"instance_id", rec.instance_id},
          {"prompt_text", rec.prompt_text},
          {"cot_text", rec.cot_text},
          {"answer_text", rec.answer_text},
          {"provenance", to_string(rec.provenance)},
          {"token_count", rec.token_count}};
}

CoTRecord record_from_json(const json& obj, int line_no) {
  std::string ctx = "line " + std::to_string(line_no) + ": ";
  if (!obj.is_object()) throw DistillError(ctx + "record is not an object");
  CoTRecord rec;
  try {
    rec.instance_id = obj.at("instance_id").get<std::string>();
    rec.prompt_text = obj.at("prompt_text").get<std::string>();
    rec.cot_text = obj.at("cot_text").get<std::string>();
    rec.answer_text = obj.at("answer_text").get<std::string>();
    rec.provenance = provenance_from_string(obj.at("provenance").get<std::string>());
    rec.token_count = obj.at("token_count").get<int>();
  } catch (const json::exception& e) {
    throw DistillError(ctx + e.what());
  }
  return rec;
}

std::vector<CoTRecord> read_records(const std::string& path) {
  auto rows = read_jsonl(path, ErrorFamily::Distill);
  std::vector<CoTRecord> records;
  records.reserve(rows.size());
  for (const auto& [line_no, obj] : rows) records.push_back(record_from_json(obj, line_no));
  return records;
}

void write_records(const std::string& path, const std::vector<CoTRecord>& records) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& rec : records) rows.push_back(record_to_json(rec));
  write_jsonl(path, rows);
}

std::vector<CoTRecord> build_sft_dataset(const corpus::TaskSet& tasks) {
  std::vector<CoTRecord> records;
  records.reserve(tasks.instances.size());
  for (const auto& inst : tasks.instances) {
    if (inst.gold < 0) throw DistillError("instance " + inst.id + " has no gold label");
    auto prompt = prompting::render_task_prompt(inst, prompting::PromptMode::SftDirect);
    records.push_back(make_record(inst, prompt.text, "", Provenance::None));
  }
  return records;
}

HumanCotResult build_human_cot_dataset(const corpus::TaskSet& tasks) {
  if (tasks.dataset != corpus::Dataset::VK) {
    throw DistillError("human CoT requires VK; " + corpus::to_string(tasks.dataset) +
                       " lacks human-written justifications");
  }
  HumanCotResult result;
  for (const auto& inst : tasks.instances) {
    if (!inst.justification || trim(*inst.justification).empty()) {
      ++result.dropped_missing_justification;
      continue;
    }
    auto prompt = prompting::render_task_prompt(inst, prompting::PromptMode::CotSft);
    result.records.push_back(make_record(inst, prompt.text, *inst.justification,
                                         Provenance::Human));
  }
  return result;
}

SyntheticCotResult generate_synthetic_cot(const corpus::TaskSet& tasks, gateway::Gateway& gw,
                                          const gateway::SamplingProfile& profile,
                                          const SyntheticCotOptions& options) {
  SyntheticCotResult result;
  result.stats.total = static_cast<int>(tasks.instances.size());

  // Phase 1: one zero-shot attempt per instance, fan-out through the gateway.
  std::vector<prompting::PromptBundle> attempts;
  attempts.reserve(tasks.instances.size());
  for (const auto& inst : tasks.instances) {
    attempts.push_back(prompting::render_task_prompt(inst, prompting::PromptMode::ZeroShotCot));
  }
  auto outcomes = gw.complete_batch(attempts, profile);

  // Phase 2: rationalize the misses, conditioned on the gold label.
  std::vector<size_t> needs_rationalization;
  std::vector<prompting::PromptBundle> rat_prompts;
  std::vector<std::pair<size_t, CoTRecord>> kept;  // (instance index, record)
  for (size_t i = 0; i < tasks.instances.size(); ++i) {
    const auto& inst = tasks.instances[i];
    if (!outcomes[i].ok) {
      ++result.stats.skipped;
      continue;
    }
    const std::string& text = outcomes[i].record.raw_text;
    auto parsed = prompting::parse_answer(text, inst.n_options());
    if (parsed.option && *parsed.option == inst.gold) {
      // Keep the model's own reasoning: everything before the final marker.
      std::string cot = trim(text.substr(0, parsed.marker_position));
      if (cot.empty()) cot = trim(text);
      kept.emplace_back(i, make_record(inst, attempts[i].text, cot,
                                       Provenance::SyntheticFirstTry));
      ++result.stats.first_try_correct;
    } else {
      needs_rationalization.push_back(i);
      rat_prompts.push_back(prompting::render_rationalization_prompt(inst));
    }
  }

  auto rat_outcomes = gw.complete_batch(rat_prompts, profile);
  for (size_t k = 0; k < needs_rationalization.size(); ++k) {
    size_t i = needs_rationalization[k];
    const auto& inst = tasks.instances[i];
    if (!rat_outcomes[k].ok) {
      ++result.stats.skipped;
      continue;
    }
    // Accepted unconditionally; the answer is forced to the gold letter.
    std::string cot = trim(rat_outcomes[k].record.raw_text);
    if (cot.empty()) {  // an empty rationalization is a failed generation
      ++result.stats.skipped;
      continue;
    }
    kept.emplace_back(i, make_record(inst, rat_prompts[k].text, cot,
                                     Provenance::SyntheticRationalized));
    ++result.stats.rationalized;
  }

  double skip_rate = result.stats.total == 0
                         ? 0.0
                         : static_cast<double>(result.stats.skipped) / result.stats.total;
  if (skip_rate > options.skip_abort_fraction) {
    throw DistillError("synthetic CoT skip rate " + format_double(skip_rate) +
                       " exceeds abort threshold " +
                       format_double(options.skip_abort_fraction));
  }

  // Deterministic output order by instance position, independent of gateway
  // completion order.
  std::sort(kept.begin(), kept.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  result.records.reserve(kept.size());
  for (auto& [idx, rec] : kept) result.records.push_back(std::move(rec));
  return result;
}

std::map<Provenance, LengthStats> length_stats(const std::vector<CoTRecord>& records) {
  if (records.empty()) throw DistillError("length_stats: no records");
  std::map<Provenance, std::vector<double>> counts;
  for (const auto& rec : records) {
    if (rec.cot_text.empty()) continue;  // direct-SFT records carry no CoT
    counts[rec.provenance].push_back(static_cast<double>(rec.token_count));
  }
  auto quantile = [](const std::vector<double>& sorted, double q) {
    // linear interpolation between closest ranks
    if (sorted.size() == 1) return sorted[0];
    double pos = q * static_cast<double>(sorted.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  };
  std::map<Provenance, LengthStats> out;
  for (auto& [prov, values] : counts) {
    std::sort(values.begin(), values.end());
    LengthStats s;
    s.n = static_cast<int>(values.size());
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    s.median = quantile(values, 0.5);
    s.p10 = quantile(values, 0.1);
    s.p90 = quantile(values, 0.9);
    out[prov] = s;
  }
  return out;
}

json length_stats_to_json(const std::map<Provenance, LengthStats>& stats) {
  json out = json::object();
  for (const auto& [prov, s] : stats) {
    out[to_string(prov)] = {{"n", s.n},     {"mean", s.mean}, {"median", s.median},
                            {"p10", s.p10}, {"p90", s.p90}};
  }
  return out;
}

}  // namespace steerlab::distill
