#pragma once

#include "steerlab/corpus.hpp"

namespace steerlab::synthetic {

// Bundled steerable task so the full pipeline runs with zero external data:
// each scenario pairs with several perspectives and the gold option is a
// deterministic function of the perspective token alone. Linearly realizable
// by the hashed-feature policy by construction.
struct SyntheticTaskConfig {
  int n_scenarios = 650;
  int perspectives_per_scenario = 4;
  int n_perspectives = 12;
  int n_options = 3;
  int filler_words = 6;  // label-irrelevant scenario words
  uint64_t seed = 7;
};

// VK-shaped instances (Support/Oppose/Either) when n_options == 3, generic
// option texts otherwise. scenario_key groups all pairs of one scenario.
corpus::TaskSet generate_task(const SyntheticTaskConfig& cfg);

// Gold option for a perspective token, the ground truth the generator uses.
int perspective_gold(int perspective_index, int n_options);

}  // namespace steerlab::synthetic
