#include "steerlab/prompting.hpp"

#include <cctype>

#include <steerlab/templates_gen.hpp>

namespace steerlab::prompting {

namespace {

using Replacements = std::vector<std::pair<std::string_view, std::string_view>>;

// Single left-to-right pass; substituted values are appended verbatim and
// never re-scanned, so braces inside field values cannot trigger another
// substitution.
std::string subst(std::string_view tpl, const Replacements& repl) {
  std::string out;
  out.reserve(tpl.size() + 256);
  size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      bool matched = false;
      for (const auto& [key, value] : repl) {
        if (tpl.compare(i, key.size(), key) == 0) {
          out.append(value);
          i += key.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out.push_back(tpl[i]);
    ++i;
  }
  return out;
}

bool is_vk(const corpus::TaskInstance& inst) {
  return inst.perspective_kind != corpus::PerspectiveKind::Demographic;
}

std::string options_block(const corpus::TaskInstance& inst) {
  std::string out;
  for (int i = 0; i < inst.n_options(); ++i) {
    if (i > 0) out += "\n\n";
    out += option_letter(i);
    out += ". ";
    out += inst.options[i];
  }
  return out;
}

}  // namespace

std::string to_string(PromptMode m) {
  switch (m) {
    case PromptMode::ZeroShotCot: return "zero_shot_cot";
    case PromptMode::SftDirect: return "sft_direct";
    case PromptMode::CotSft: return "cot_sft";
    case PromptMode::Rationalize: return "rationalize";
    case PromptMode::Judge: return "judge";
  }
  return "?";
}

char option_letter(int index) {
  if (index < 0 || index >= 26) {
    throw PromptError("option index " + std::to_string(index) + " beyond letter range A-Z");
  }
  return static_cast<char>('A' + index);
}

std::string vk_stance_word(int gold) {
  switch (gold) {
    case corpus::kVkSupport: return "support";
    case corpus::kVkOppose: return "oppose";
    case corpus::kVkEither: return "either";
  }
  throw PromptError("VK gold index out of range: " + std::to_string(gold));
}

PromptBundle render_task_prompt(const corpus::TaskInstance& inst, PromptMode mode,
                                const std::string& explanation) {
  if (mode != PromptMode::ZeroShotCot && mode != PromptMode::SftDirect &&
      mode != PromptMode::CotSft) {
    throw PromptError("render_task_prompt: invalid mode " + to_string(mode));
  }
  if (inst.n_options() > 26) {
    throw PromptError("instance " + inst.id + ": option count exceeds letter range");
  }
  bool direct = mode == PromptMode::SftDirect;
  std::string_view tpl;
  Replacements repl;
  std::string options = options_block(inst);
  if (is_vk(inst)) {
    tpl = direct ? templates::vk_task_direct : templates::vk_task_cot;
    repl = {{"{situation}", inst.scenario},
            {"{Given perspective}", inst.perspective},
            {"{explanation}", explanation}};
  } else {
    tpl = direct ? templates::oqa_task_direct : templates::oqa_task_cot;
    repl = {{"{attribute} {demographic}", inst.perspective},
            {"{question}", inst.scenario},
            {"{A list of options}", options},
            {"{explanation}", explanation}};
  }
  PromptBundle bundle;
  bundle.text = subst(tpl, repl);
  bundle.mode = mode;
  bundle.instance_id = inst.id;
  return bundle;
}

PromptBundle render_rationalization_prompt(const corpus::TaskInstance& inst,
                                           const std::string& gold_label_text) {
  if (inst.gold < 0 || inst.gold >= inst.n_options()) {
    throw PromptError("instance " + inst.id + ": gold label required for rationalization");
  }
  std::string_view tpl;
  Replacements repl;
  std::string options = options_block(inst);
  if (is_vk(inst)) {
    tpl = templates::vk_rationalize;
    repl = {{"{support/oppose/either}", gold_label_text},
            {"{situation}", inst.scenario},
            {"{Given perspective}", inst.perspective}};
  } else {
    tpl = templates::oqa_rationalize;
    repl = {{"{attribute} {demographic}", inst.perspective},
            {"{question}", inst.scenario},
            {"{A list of options}", options},
            {"{Correct Option}", gold_label_text}};
  }
  PromptBundle bundle;
  bundle.text = subst(tpl, repl);
  bundle.mode = PromptMode::Rationalize;
  bundle.instance_id = inst.id;
  return bundle;
}

PromptBundle render_rationalization_prompt(const corpus::TaskInstance& inst) {
  std::string gold_text = is_vk(inst) ? vk_stance_word(inst.gold) : inst.options.at(inst.gold);
  return render_rationalization_prompt(inst, gold_text);
}

PromptBundle render_judge_prompt(const corpus::TaskInstance& inst, const std::string& cot_text) {
  if (cot_text.empty()) throw PromptError("instance " + inst.id + ": empty CoT for judge");
  if (inst.n_options() > 26) {
    throw PromptError("instance " + inst.id + ": option count exceeds letter range");
  }
  std::string_view tpl;
  Replacements repl;
  std::string options = options_block(inst);
  // The perspective is never passed to the substitution: the judge templates
  // have no slot for it.
  if (is_vk(inst)) {
    tpl = templates::vk_judge;
    repl = {{"{situation}", inst.scenario}, {"{explanation}", cot_text}};
  } else {
    tpl = templates::oqa_judge;
    repl = {{"{question}", inst.scenario},
            {"{A list of options}", options},
            {"{explanation}", cot_text}};
  }
  PromptBundle bundle;
  bundle.text = subst(tpl, repl);
  bundle.mode = PromptMode::Judge;
  bundle.instance_id = inst.id;
  bundle.withheld_fields = {"perspective", "demographic"};
  if (!inst.perspective.empty() && contains(bundle.text, inst.perspective)) {
    bundle.cot_quotes_perspective = contains(cot_text, inst.perspective);
  }
  return bundle;
}

ParsedAnswer parse_answer(std::string_view text, int n_options) {
  if (n_options < 2 || n_options > 26) {
    throw PromptError("parse_answer: n_options must be in [2, 26]");
  }
  constexpr std::string_view kMarker = "answer";
  // Find the last "Answer:" (case-insensitive, optional space before the
  // colon) starting at a word boundary.
  ParsedAnswer parsed;
  size_t after_colon = std::string_view::npos;
  for (size_t i = 0; i + kMarker.size() < text.size() + 1; ++i) {
    if (i > 0 && std::isalnum(static_cast<unsigned char>(text[i - 1]))) continue;
    bool word = true;
    for (size_t k = 0; k < kMarker.size(); ++k) {
      if (std::tolower(static_cast<unsigned char>(text[i + k])) != kMarker[k]) {
        word = false;
        break;
      }
    }
    if (!word) continue;
    size_t j = i + kMarker.size();
    while (j < text.size() && (text[j] == ' ' || text[j] == '\t')) ++j;
    if (j >= text.size() || text[j] != ':') continue;
    parsed.marker_position = static_cast<int>(i);
    after_colon = j + 1;
  }
  if (after_colon == std::string_view::npos) return parsed;

  size_t p = after_colon;
  while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
  if (p >= text.size()) return parsed;
  char c = text[p];
  if (!std::isalpha(static_cast<unsigned char>(c))) return parsed;
  // single-letter token only: "Answer: Because" is not an answer
  if (p + 1 < text.size() && std::isalnum(static_cast<unsigned char>(text[p + 1]))) return parsed;
  int idx = std::toupper(static_cast<unsigned char>(c)) - 'A';
  if (idx >= 0 && idx < n_options) parsed.option = idx;
  return parsed;
}

}  // namespace steerlab::prompting
