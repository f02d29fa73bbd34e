#include <doctest.h>

#include "steerlab/prompting.hpp"
#include "steerlab/synthetic.hpp"

using namespace steerlab;
using namespace steerlab::prompting;

namespace {

corpus::TaskInstance vk_instance() {
  corpus::TaskInstance inst;
  inst.id = "vk-1";
  inst.scenario = "stealing food to feed orphans";
  inst.perspective = "the right to life and wellbeing";
  inst.perspective_kind = corpus::PerspectiveKind::Right;
  inst.options = corpus::kVkOptions;
  inst.gold = corpus::kVkSupport;
  inst.scenario_key = inst.scenario;
  return inst;
}

corpus::TaskInstance oqa_instance() {
  corpus::TaskInstance inst;
  inst.id = "oqa-1";
  inst.scenario = "How worried are you about the availability of affordable housing?";
  inst.perspective = "AGE 65+";
  inst.perspective_kind = corpus::PerspectiveKind::Demographic;
  inst.options = {"Very worried", "Somewhat worried", "Not worried"};
  inst.gold = 1;
  inst.scenario_key = inst.scenario;
  return inst;
}

}  // namespace

TEST_SUITE_BEGIN("prompting");

TEST_CASE("VK task prompt matches the template layout") {
  auto bundle = render_task_prompt(vk_instance(), PromptMode::ZeroShotCot);
  CHECK(contains(bundle.text, "Given a situation and a relevant value, right, or duty"));
  CHECK(contains(bundle.text, "Approach this problem step by step"));
  CHECK(contains(bundle.text, "(e.g Answer: A)"));
  CHECK(contains(bundle.text, "Situation: stealing food to feed orphans"));
  CHECK(contains(bundle.text, "Value/Right/Duty: the right to life and wellbeing"));
  CHECK(contains(bundle.text, "A. Support\n\nB. Oppose\n\nC. Either"));
  CHECK(contains(bundle.text, "Reasoning:"));
  CHECK(bundle.text.ends_with("Answer:"));
  CHECK(bundle.instance_id == "vk-1");
}

TEST_CASE("OpinionQA task prompt carries the demographic line and options") {
  auto bundle = render_task_prompt(oqa_instance(), PromptMode::ZeroShotCot);
  CHECK(contains(bundle.text, "Adopt the perspective of a person with the following demographics:"));
  CHECK(contains(bundle.text, "- AGE 65+"));
  CHECK(contains(bundle.text, "How worried are you about the availability of affordable housing?"));
  CHECK(contains(bundle.text, "A. Very worried\n\nB. Somewhat worried\n\nC. Not worried"));
  CHECK(bundle.text.ends_with("Answer:"));
}

TEST_CASE("sft_direct drops the reasoning scaffolding") {
  for (const auto& inst : {vk_instance(), oqa_instance()}) {
    auto cot = render_task_prompt(inst, PromptMode::ZeroShotCot);
    auto direct = render_task_prompt(inst, PromptMode::SftDirect);
    CHECK(contains(cot.text, "step by step"));
    CHECK(contains(cot.text, "Reasoning:"));
    CHECK(!contains(direct.text, "step by step"));
    CHECK(!contains(direct.text, "Reasoning:"));
    CHECK(direct.text.ends_with("Answer:"));
  }
}

TEST_CASE("rendering is pure: same instance, same mode, same bytes") {
  auto a = render_task_prompt(vk_instance(), PromptMode::ZeroShotCot);
  auto b = render_task_prompt(vk_instance(), PromptMode::ZeroShotCot);
  CHECK(a.text == b.text);
  auto c = render_task_prompt(oqa_instance(), PromptMode::CotSft, "some explanation");
  auto d = render_task_prompt(oqa_instance(), PromptMode::CotSft, "some explanation");
  CHECK(c.text == d.text);
  CHECK(contains(c.text, "Reasoning: some explanation"));
}

TEST_CASE("option letters stop at Z") {
  corpus::TaskInstance inst = oqa_instance();
  inst.options.clear();
  for (int i = 0; i < 27; ++i) inst.options.push_back("opt " + std::to_string(i));
  inst.gold = 0;
  CHECK_THROWS_AS(render_task_prompt(inst, PromptMode::ZeroShotCot), PromptError);
  CHECK(option_letter(0) == 'A');
  CHECK(option_letter(25) == 'Z');
  CHECK_THROWS_AS(option_letter(26), PromptError);
}

TEST_CASE("VK rationalization injects the gold stance") {
  auto inst = vk_instance();
  inst.gold = corpus::kVkOppose;
  auto bundle = render_rationalization_prompt(inst);
  CHECK(bundle.mode == PromptMode::Rationalize);
  CHECK(contains(bundle.text, "**oppose**"));
  CHECK(contains(bundle.text, "(oppose)"));
  CHECK(contains(bundle.text, "should not state the conclusion"));
  CHECK(contains(bundle.text, "Right, Value, or duty: the right to life and wellbeing"));
  CHECK(bundle.text.ends_with("Your Justification:"));
}

TEST_CASE("OpinionQA rationalization names the most popular option") {
  auto bundle = render_rationalization_prompt(oqa_instance());
  CHECK(contains(bundle.text, "Most Popular Option: Somewhat worried"));
  CHECK(contains(bundle.text, "Survey Demographic:"));
  CHECK(contains(bundle.text, "- AGE 65+"));
  CHECK(bundle.text.ends_with("Your Explanation:"));
}

TEST_CASE("template braces inside field values are inert") {
  auto inst = vk_instance();
  inst.perspective = "justice {situation} for {Given perspective} all";
  auto bundle = render_task_prompt(inst, PromptMode::ZeroShotCot);
  // the injected placeholder text must survive literally, not re-substitute
  CHECK(contains(bundle.text, "Value/Right/Duty: justice {situation} for {Given perspective} all"));
  auto rat = render_rationalization_prompt(inst, "support");
  CHECK(contains(rat.text, "justice {situation} for {Given perspective} all"));
}

TEST_CASE("judge prompt withholds the perspective") {
  auto inst = vk_instance();
  auto bundle = render_judge_prompt(inst, "the act protects children in need");
  CHECK(bundle.mode == PromptMode::Judge);
  CHECK(contains(bundle.text, "Rationale: the act protects children in need"));
  CHECK(contains(bundle.text, "A. Support\n\nB. Oppose\n\nC. Either"));
  CHECK(contains(bundle.text, "rather than your own opinion"));
  CHECK(bundle.text.ends_with("Answer:"));
  CHECK(!contains(bundle.text, inst.perspective));
  CHECK(bundle.withheld_fields.count("perspective") == 1);
  CHECK(bundle.withheld_fields.count("demographic") == 1);
  CHECK(!bundle.cot_quotes_perspective);
}

TEST_CASE("judge prompt flags a CoT that quotes the perspective") {
  auto inst = vk_instance();
  auto bundle = render_judge_prompt(inst, "invoking the right to life and wellbeing directly");
  CHECK(contains(bundle.text, inst.perspective));  // rendered, not censored
  CHECK(bundle.cot_quotes_perspective);
}

TEST_CASE("judge prompt allows coincidental scenario text") {
  auto inst = oqa_instance();
  // "65+" also occurs in the question body; only the header is withheld
  inst.scenario = "Should transit passes be free for riders 65+ across the city?";
  inst.scenario_key = inst.scenario;
  auto bundle = render_judge_prompt(inst, "older riders benefit most");
  CHECK(contains(bundle.text, "65+"));
  CHECK(!contains(bundle.text, "AGE 65+"));
  CHECK(!bundle.cot_quotes_perspective);
}

TEST_CASE("judge prompts over the full synthetic set never leak the perspective") {
  auto task = synthetic::generate_task({.n_scenarios = 50});
  for (const auto& inst : task.instances) {
    auto bundle = render_judge_prompt(inst, "a rationale that argues both sides");
    CHECK(!contains(bundle.text, inst.perspective));
  }
}

TEST_CASE("judge prompt requires a CoT") {
  CHECK_THROWS_AS(render_judge_prompt(vk_instance(), ""), PromptError);
}

TEST_CASE("parse_answer round-trips every letter appended to a render") {
  for (const auto& inst : {vk_instance(), oqa_instance()}) {
    auto bundle = render_task_prompt(inst, PromptMode::ZeroShotCot);
    for (int k = 0; k < inst.n_options(); ++k) {
      std::string text = bundle.text + " " + option_letter(k);
      auto parsed = parse_answer(text, inst.n_options());
      REQUIRE(parsed.option.has_value());
      CHECK(*parsed.option == k);
    }
  }
}

TEST_CASE("parse_answer regression corpus (hand-labeled)") {
  struct Case {
    const char* text;
    int expected;  // -1 = Unparseable
    int n_options = 3;
  };
  // 50 hand-written completions; labels assigned by hand against the
  // declared rule (last marker, single-letter token, no clamping).
  const Case cases[] = {
      {"Answer: A", 0},
      {"Answer: B", 1},
      {"Answer: C", 2},
      {"answer: a", 0},
      {"ANSWER: B", 1},
      {"Answer:C", 2},
      {"Answer :  B", 1},
      {"Answer\t: C", 2},
      {"The perspective clearly favors this.\nAnswer: B", 1},
      {"Answer: A ... wait, reconsidering ... Answer: C", 2},
      {"Answer: C\nAnswer: A", 0},
      {"the answer is B", -1},
      {"", -1},
      {"B", -1},
      {"Answer: D", -1},
      {"Answer: d", -1},
      {"Answer: 1", -1},
      {"Answer: Because it supports the value", -1},
      {"Answer: B.", 1},
      {"Answer: (B)", -1},
      {"Answer: B)", 1},
      {"Answer: **B**", -1},
      {"Answer:", -1},
      {"Answer:   ", -1},
      {"Answer:\nB", 1},
      {"Final Answer: C", 2},
      {"final answer: b", 1},
      {"My final ANSWER : A", 0},
      {"Disanswer: B", -1},
      {"cleanser: B", -1},
      {"Answer: A regardless of the rest", 0},
      {"Answer: AB", -1},
      {"Answer: A1", -1},
      {"Answer: a)", 0},
      {"So my Answer:\n\n  C", 2},
      {"Answers: B", -1},
      {"answering: B", -1},
      {"Answer: C, final", 2},
      {"Answer: B\nAnswer: garbage", -1},
      {"Answer: B Answer:", -1},
      {"I think Answer: b is right", 1},
      {"ANSWER:A", 0},
      {" Answer: C", 2},
      {"Answer: c\n", 2},
      {"Answer:  B  ", 1},
      {"Answer: e", 4, 5},
      {"Answer: E", -1, 3},
      {"Answer: Z", 25, 26},
      {"Option B seems best for them.\nAnswer: B\nThanks.", 1},
      {"Answer : ", -1},
  };
  int case_no = 0;
  for (const Case& c : cases) {
    CAPTURE(case_no);
    CAPTURE(c.text);
    auto parsed = parse_answer(c.text, c.n_options);
    if (c.expected < 0) {
      CHECK(!parsed.option.has_value());
    } else {
      REQUIRE(parsed.option.has_value());
      CHECK(*parsed.option == c.expected);
    }
    ++case_no;
  }
  // exactly 50 cases in the corpus
  CHECK(sizeof(cases) / sizeof(cases[0]) == 50);
}

TEST_CASE("parse_answer reports the marker offset") {
  std::string text = "Reasoning text.\nAnswer: B";
  auto parsed = parse_answer(text, 3);
  REQUIRE(parsed.option.has_value());
  CHECK(parsed.marker_position == static_cast<int>(text.find("Answer:")));
  CHECK(text.substr(0, parsed.marker_position) == "Reasoning text.\n");

  auto last = parse_answer("Answer: A then Answer: C", 3);
  CHECK(last.marker_position == 15);
  CHECK(*last.option == 2);

  CHECK(parse_answer("no marker here", 3).marker_position == -1);
}

TEST_CASE("parse_answer validates n_options") {
  CHECK_THROWS_AS(parse_answer("Answer: A", 1), PromptError);
  CHECK_THROWS_AS(parse_answer("Answer: A", 27), PromptError);
}

TEST_CASE("stance words cover the three VK golds") {
  CHECK(vk_stance_word(corpus::kVkSupport) == "support");
  CHECK(vk_stance_word(corpus::kVkOppose) == "oppose");
  CHECK(vk_stance_word(corpus::kVkEither) == "either");
  CHECK_THROWS_AS(vk_stance_word(3), PromptError);
}

TEST_SUITE_END();
