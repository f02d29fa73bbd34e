#pragma once

#include <optional>
#include <set>
#include <string>

#include "steerlab/corpus.hpp"

namespace steerlab::prompting {

enum class PromptMode { ZeroShotCot, SftDirect, CotSft, Rationalize, Judge };

std::string to_string(PromptMode m);

struct PromptBundle {
  std::string text;
  PromptMode mode = PromptMode::ZeroShotCot;
  std::string instance_id;
  std::set<std::string> withheld_fields;
  // Judge bundles only: the CoT itself quoted the withheld perspective, so
  // the rendered text contains it anyway. Flagged, never censored.
  bool cot_quotes_perspective = false;
};

struct ParsedAnswer {
  std::optional<int> option;      // unset = Unparseable
  int marker_position = -1;       // byte offset of the matched "Answer:" marker

  bool unparseable() const { return !option.has_value(); }
};

// 0 -> 'A', 1 -> 'B', ... Throws PromptError past 'Z'.
char option_letter(int index);
// VK stance word injected into the rationalization template.
std::string vk_stance_word(int gold);

// Task prompts in the three generation modes. The "Reasoning:" slot carries
// `explanation` (empty in generation contexts); SftDirect has no such slot.
PromptBundle render_task_prompt(const corpus::TaskInstance& inst, PromptMode mode,
                                const std::string& explanation = "");

// Rationalization prompt conditioned on the gold label. `gold_label_text` is
// the VK stance word or the OpinionQA gold option text; the overload derives
// it from inst.gold.
PromptBundle render_rationalization_prompt(const corpus::TaskInstance& inst,
                                           const std::string& gold_label_text);
PromptBundle render_rationalization_prompt(const corpus::TaskInstance& inst);

// Faithfulness judge prompt: scenario + options + the CoT as "Rationale:",
// with the perspective/demographic withheld.
PromptBundle render_judge_prompt(const corpus::TaskInstance& inst, const std::string& cot_text);

// Scans for the last "Answer:" marker (case-insensitive, optional whitespace
// around the colon), reads the first letter token after it, maps A->0...
// Anything else is Unparseable; letters at or past n_options do not clamp.
ParsedAnswer parse_answer(std::string_view text, int n_options);

}  // namespace steerlab::prompting
