#include "steerlab/synthetic.hpp"

#include <array>

namespace steerlab::synthetic {

namespace {

// Small neutral word list for label-irrelevant scenario text.
constexpr std::array<const char*, 24> kFiller = {
    "river",  "lantern", "meadow", "harbor", "stone",  "orchard", "valley", "bridge",
    "copper", "willow",  "market", "garden", "tower",  "meadowlark", "mill", "ridge",
    "cedar",  "harvest", "quarry", "ferry",  "barley", "anvil",   "grove", "beacon"};

std::string two_digits(int n) {
  std::string s = std::to_string(n);
  return s.size() < 2 ? "0" + s : s;
}

}  // namespace

int perspective_gold(int perspective_index, int n_options) {
  return perspective_index % n_options;
}

corpus::TaskSet generate_task(const SyntheticTaskConfig& cfg) {
  if (cfg.n_scenarios < 3 || cfg.n_perspectives < 1 || cfg.n_options < 2 ||
      cfg.perspectives_per_scenario < 1 || cfg.perspectives_per_scenario > cfg.n_perspectives) {
    throw CorpusError("synthetic task config out of range");
  }
  // 3 options -> VK-shaped (fixed Support/Oppose/Either, value perspectives,
  // synthetic justifications); otherwise OpinionQA-shaped with enumerated
  // options and demographic-style perspectives.
  bool vk_shaped = cfg.n_options == 3;
  std::vector<std::string> options;
  if (vk_shaped) {
    options = corpus::kVkOptions;
  } else {
    for (int i = 0; i < cfg.n_options; ++i) options.push_back("Option " + std::to_string(i + 1));
  }

  corpus::TaskSet set;
  set.dataset = vk_shaped ? corpus::Dataset::VK : corpus::Dataset::OpinionQA;
  Rng rng(cfg.seed);
  for (int s = 0; s < cfg.n_scenarios; ++s) {
    std::string scenario = "scenario" + std::to_string(s);
    for (int w = 0; w < cfg.filler_words; ++w) {
      scenario += " ";
      scenario += kFiller[rng.index(kFiller.size())];
    }
    // distinct perspectives per scenario, drawn without replacement
    std::vector<int> pool(cfg.n_perspectives);
    for (int p = 0; p < cfg.n_perspectives; ++p) pool[p] = p;
    rng.shuffle(pool);
    for (int k = 0; k < cfg.perspectives_per_scenario; ++k) {
      int p = pool[k];
      corpus::TaskInstance inst;
      inst.id = "syn-" + std::to_string(s) + "-" + std::to_string(p);
      inst.scenario = scenario;
      inst.scenario_key = "scenario" + std::to_string(s);
      inst.gold = perspective_gold(p, cfg.n_options);
      inst.options = options;
      if (vk_shaped) {
        inst.perspective = "persp" + two_digits(p);
        inst.perspective_kind = corpus::PerspectiveKind::Value;
        inst.justification = "Seen from the persp" + two_digits(p) +
                             " standpoint, the scenario details weigh toward option " +
                             std::string(1, static_cast<char>('A' + inst.gold)) + ".";
      } else {
        inst.perspective = "SYNTH persp" + two_digits(p);
        inst.perspective_kind = corpus::PerspectiveKind::Demographic;
      }
      set.instances.push_back(std::move(inst));
    }
  }
  return set;
}

}  // namespace steerlab::synthetic
