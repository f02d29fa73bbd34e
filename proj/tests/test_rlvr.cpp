#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "steerlab/rlvr.hpp"
#include "steerlab/synthetic.hpp"

using namespace steerlab;
using namespace steerlab::rlvr;

namespace {

corpus::TaskSet tiny_task(int n_scenarios = 40) {
  synthetic::SyntheticTaskConfig cfg;
  cfg.n_scenarios = n_scenarios;
  cfg.perspectives_per_scenario = 3;
  return synthetic::generate_task(cfg);
}

GRPOConfig small_cfg() {
  GRPOConfig cfg;
  cfg.group_size = 4;
  cfg.batch_size = 4;
  cfg.minibatch_size = 2;
  cfg.max_len = 3;
  return cfg;
}

std::vector<RolloutGroup> sample_groups(const policy::PolicyParams& params,
                                        const corpus::TaskSet& tasks,
                                        const policy::FeatureMap& fmap, const GRPOConfig& cfg,
                                        int n_groups, uint64_t seed) {
  std::vector<RolloutGroup> groups;
  for (int k = 0; k < n_groups; ++k) {
    const auto& inst = tasks.instances[k % tasks.instances.size()];
    groups.push_back(make_rollout_group(params, inst, policy::featurize(inst, fmap),
                                        mix64(seed, k), cfg));
  }
  return groups;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("rlvr");

TEST_CASE("reward is the exact correctness indicator") {
  // exhaustive grid: parsed in {A, B, C, Unparseable} x gold in {A, B, C}
  for (int gold = 0; gold < 3; ++gold) {
    for (int parsed = 0; parsed < 3; ++parsed) {
      CHECK(reward(std::optional<int>(parsed), gold) == (parsed == gold ? 1 : 0));
    }
    CHECK(reward(std::optional<int>(), gold) == 0);  // Unparseable scores 0
  }
  prompting::ParsedAnswer unparsed;
  CHECK(reward(unparsed, 0) == 0);
}

TEST_CASE("group advantages match the direct arithmetic oracle") {
  const double eps = 1e-8;
  SUBCASE("[1,0,0,1]") {
    auto adv = group_advantages({1, 0, 0, 1}, eps);
    // mean 0.5, population std 0.5
    CHECK(adv[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(adv[1] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(adv[2] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(adv[3] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("[1,0]") {
    auto adv = group_advantages({1, 0}, eps);
    CHECK(adv[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(adv[1] == doctest::Approx(-1.0).epsilon(1e-6));
  }
  SUBCASE("all-equal groups short-circuit to exact zeros") {
    for (double r : {0.0, 1.0}) {
      auto adv = group_advantages(std::vector<double>(4, r), eps);
      for (double a : adv) CHECK(a == 0.0);
    }
  }
  SUBCASE("independent oracle over random binary groups") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      size_t g = 2 + rng.index(15);
      std::vector<double> rewards(g);
      for (double& r : rewards) r = rng.uniform() < 0.5 ? 0.0 : 1.0;
      auto adv = group_advantages(rewards, eps);
      bool all_equal = std::all_of(rewards.begin(), rewards.end(),
                                   [&](double r) { return r == rewards[0]; });
      double mean = 0.0;
      for (double r : rewards) mean += r;
      mean /= g;
      double var = 0.0;
      for (double r : rewards) var += (r - mean) * (r - mean);
      var /= g;
      double sum = 0.0;
      for (size_t i = 0; i < g; ++i) {
        double expect = all_equal ? 0.0 : (rewards[i] - mean) / (std::sqrt(var) + eps);
        CHECK(adv[i] == doctest::Approx(expect).epsilon(1e-12));
        sum += adv[i];
      }
      CHECK(std::abs(sum) < 1e-12);  // advantages sum to zero per group
    }
  }
  SUBCASE("groups below size 2 are rejected") {
    CHECK_THROWS_AS(group_advantages({1.0}, eps), TrainError);
    CHECK_THROWS_AS(group_advantages({}, eps), TrainError);
  }
}

TEST_CASE("make_rollout_group draws exactly G trajectories per visit") {
  auto tasks = tiny_task(5);
  policy::FeatureMap fmap{.dim = 128};
  GRPOConfig cfg;
  cfg.group_size = 16;
  auto params = policy::init_params(fmap.dim, 4, 0, 0.01);
  auto group = make_rollout_group(params, tasks.instances[0],
                                  policy::featurize(tasks.instances[0], fmap), 9, cfg);
  CHECK(group.trajectories.size() == 16);
  CHECK(group.rewards.size() == 16);
  CHECK(group.advantages.size() == 16);
  for (double r : group.rewards) CHECK((r == 0.0 || r == 1.0));
  for (const auto& traj : group.trajectories) {
    CHECK(traj.sampled_version == params.version);
    CHECK(traj.tokens.size() >= 1);
    CHECK(traj.tokens.size() <= static_cast<size_t>(cfg.max_len));
  }
}

TEST_CASE("at rho=1 the clipped gradient equals REINFORCE-with-advantage") {
  auto tasks = tiny_task(6);
  policy::FeatureMap fmap{.dim = 64};
  auto params = policy::init_params(fmap.dim, 4, 3, 0.05);
  GRPOConfig cfg = small_cfg();
  cfg.kl_coeff = 0.0;
  auto groups = sample_groups(params, tasks, fmap, cfg, 3, 11);

  auto clipped_grad = grpo_gradient(params, params, groups, cfg);

  // REINFORCE side: sum_i A_i * grad(sum_t log pi(tokens_i)) / N_tokens
  std::vector<double> reinforce(params.w.size(), 0.0);
  long long n_tokens = 0;
  for (const auto& group : groups) {
    for (const auto& traj : group.trajectories) n_tokens += traj.tokens.size();
  }
  for (const auto& group : groups) {
    for (size_t j = 0; j < group.trajectories.size(); ++j) {
      auto lg = policy::logprobs_and_grads(params, group.features, group.trajectories[j].tokens);
      for (size_t k = 0; k < reinforce.size(); ++k) {
        reinforce[k] += group.advantages[j] * lg.grad[k] / static_cast<double>(n_tokens);
      }
    }
  }
  CHECK(max_abs_diff(clipped_grad, reinforce) < 1e-10);
}

TEST_CASE("KL value and gradient vanish at theta = ref") {
  auto tasks = tiny_task(6);
  policy::FeatureMap fmap{.dim = 64};
  auto params = policy::init_params(fmap.dim, 4, 5, 0.05);
  GRPOConfig cfg = small_cfg();
  cfg.kl_coeff = 0.5;
  auto groups = sample_groups(params, tasks, fmap, cfg, 3, 13);
  // zero out the advantages so only the KL term remains
  for (auto& group : groups) {
    std::fill(group.advantages.begin(), group.advantages.end(), 0.0);
  }
  CHECK(grpo_objective(params, params, groups, cfg) == doctest::Approx(0.0).epsilon(1e-15));
  auto grad = grpo_gradient(params, params, groups, cfg);
  for (double g : grad) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("a clipped high-advantage trajectory contributes zero gradient") {
  auto tasks = tiny_task(3);
  policy::FeatureMap fmap{.dim = 32};
  auto params = policy::init_params(fmap.dim, 4, 7, 0.05);
  GRPOConfig cfg = small_cfg();
  cfg.kl_coeff = 0.0;
  cfg.clip_ratio = 0.2;

  RolloutGroup group;
  group.instance_id = "x";
  group.features = policy::featurize(tasks.instances[0], fmap);
  group.gold = 0;
  Rng rng(2);
  for (int j = 0; j < 2; ++j) {
    group.trajectories.push_back(policy::sample_response(params, group.features, rng, 3));
  }
  group.rewards = {1, 0};
  // first trajectory: recorded logprobs shifted down so rho = e > 1.2
  for (double& lp : group.trajectories[0].logprobs) lp -= 1.0;
  group.advantages = {1.0, 0.0};  // the clipped one is the only active trajectory

  auto grad = grpo_gradient(params, params, {group}, cfg);
  for (double g : grad) CHECK(g == 0.0);  // min() selects the constant clipped branch

  // the same trajectory with rho = 1 does produce a gradient
  for (double& lp : group.trajectories[0].logprobs) lp += 1.0;
  auto grad2 = grpo_gradient(params, params, {group}, cfg);
  double mass = 0.0;
  for (double g : grad2) mass += std::abs(g);
  CHECK(mass > 0.0);
}

TEST_CASE("zero advantages with beta>0: update follows -beta grad KL; KL shrinks") {
  auto tasks = tiny_task(4);
  policy::FeatureMap fmap{.dim = 32};
  auto ref = policy::init_params(fmap.dim, 4, 9, 0.05);
  GRPOConfig cfg = small_cfg();
  cfg.kl_coeff = 0.05;

  // start away from the reference
  auto params = ref;
  Rng noise(21);
  for (double& w : params.w) w += 0.3 * noise.normal();

  auto groups = sample_groups(params, tasks, fmap, cfg, 3, 15);
  for (auto& group : groups) {
    std::fill(group.advantages.begin(), group.advantages.end(), 0.0);
  }

  // with zero advantages the whole objective is -beta * mean KL
  auto mean_kl = [&](const policy::PolicyParams& p) {
    return -grpo_objective(p, ref, groups, cfg) / cfg.kl_coeff;
  };
  double kl = mean_kl(params);
  CHECK(kl > 0.0);
  for (int step = 0; step < 30; ++step) {
    auto grad = grpo_gradient(params, ref, groups, cfg);
    for (size_t k = 0; k < params.w.size(); ++k) params.w[k] += 0.5 * grad[k];
    double next = mean_kl(params);
    CHECK(next <= kl + 1e-12);
    kl = next;
  }
}

TEST_CASE("GRPO objective gradient matches central finite differences") {
  const double h = 1e-5;
  Rng rng(31415);
  for (bool sequence_level : {false, true}) {
    CAPTURE(sequence_level);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      auto tasks = tiny_task(4);
      policy::FeatureMap fmap{.dim = 8};
      auto params = policy::init_params(fmap.dim, 4, rng.bits(), 0.1);
      GRPOConfig cfg = small_cfg();
      cfg.kl_coeff = 0.01;
      cfg.sequence_level_ratio = sequence_level;
      auto ref = policy::init_params(fmap.dim, 4, rng.bits(), 0.1);
      auto groups = sample_groups(params, tasks, fmap, cfg, 2, rng.bits());

      // move away from the sampling snapshot so rho != 1 (still inside clip)
      for (double& w : params.w) w += 0.02 * rng.normal();

      auto analytic = grpo_gradient(params, ref, groups, cfg);
      for (size_t k = 0; k < params.w.size(); ++k) {
        auto plus = params, minus = params;
        plus.w[k] += h;
        minus.w[k] -= h;
        double fd = (grpo_objective(plus, ref, groups, cfg) -
                     grpo_objective(minus, ref, groups, cfg)) /
                    (2 * h);
        double scale = std::max({std::abs(fd), std::abs(analytic[k]), 1e-6});
        worst = std::max(worst, std::abs(fd - analytic[k]) / scale);
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("grpo_step rejects stale rollouts and tracks versions") {
  auto tasks = tiny_task(4);
  policy::FeatureMap fmap{.dim = 32};
  auto params = policy::init_params(fmap.dim, 4, 2, 0.01);
  auto ref = params;
  GRPOConfig cfg = small_cfg();
  auto groups = sample_groups(params, tasks, fmap, cfg, cfg.batch_size, 77);

  SUBCASE("fresh rollouts update and bump the version per minibatch") {
    auto stats = grpo_step(params, ref, groups, cfg, 0.5);
    CHECK(params.version == cfg.batch_size / cfg.minibatch_size);
    CHECK(stats.mean_reward >= 0.0);
    CHECK(stats.mean_reward <= 1.0);
    CHECK(stats.grad_norm > 0.0);
  }
  SUBCASE("rollouts sampled under other parameters are stale") {
    params.version = 12;
    CHECK_THROWS_WITH_AS(grpo_step(params, ref, groups, cfg, 0.5),
                         doctest::Contains("stale rollouts"), TrainError);
  }
}

TEST_CASE("first minibatch after rollout has clip fraction zero") {
  auto tasks = tiny_task(4);
  policy::FeatureMap fmap{.dim = 32};
  auto params = policy::init_params(fmap.dim, 4, 4, 0.01);
  auto ref = params;
  GRPOConfig cfg = small_cfg();
  cfg.minibatch_size = cfg.batch_size;  // single minibatch: rho = 1 throughout
  auto groups = sample_groups(params, tasks, fmap, cfg, cfg.batch_size, 78);
  auto stats = grpo_step(params, ref, groups, cfg, 0.1);
  CHECK(stats.clip_fraction == 0.0);
}

TEST_CASE("config validation catches out-of-range values") {
  GRPOConfig cfg;
  cfg.group_size = 1;
  CHECK_THROWS_AS(cfg.validate(), TrainError);
  cfg = GRPOConfig{};
  cfg.clip_ratio = 1.5;
  CHECK_THROWS_AS(cfg.validate(), TrainError);
  cfg = GRPOConfig{};
  cfg.kl_coeff = -0.1;
  CHECK_THROWS_AS(cfg.validate(), TrainError);
  cfg = GRPOConfig{};
  cfg.batch_size = 10;
  cfg.minibatch_size = 4;  // does not divide
  CHECK_THROWS_AS(cfg.validate(), TrainError);
  CHECK_NOTHROW(GRPOConfig{}.validate());
}

TEST_CASE("lr schedule: warmup ramps linearly; cosine decays to the floor") {
  LrSchedule lr;
  lr.max_lr = 2.0;
  lr.warmup_steps = 10;
  CHECK(lr.at(0) == doctest::Approx(0.2));
  CHECK(lr.at(4) == doctest::Approx(1.0));
  CHECK(lr.at(9) == doctest::Approx(2.0));
  CHECK(lr.at(200) == doctest::Approx(2.0));

  lr.kind = LrSchedule::Kind::Cosine;
  lr.min_lr = 0.2;
  lr.total_steps = 110;
  CHECK(lr.at(9) == doctest::Approx(2.0));
  CHECK(lr.at(60) == doctest::Approx(0.5 * (2.0 + 0.2)).epsilon(1e-9));
  CHECK(lr.at(109) == doctest::Approx(0.2).epsilon(1e-3));
}

TEST_CASE("rlvr_train lifts a small synthetic task and is seed-deterministic") {
  auto all = tiny_task(60);
  auto splits = corpus::make_splits(all.instances, 4, {0.8, 0.1, 0.1}, all.dataset);
  policy::FeatureMap fmap{.dim = 512};
  GRPOConfig cfg;
  cfg.group_size = 8;
  cfg.batch_size = 16;
  cfg.minibatch_size = 4;
  cfg.steps = 60;
  cfg.val_interval = 10;
  cfg.rollout_threads = 4;

  auto a = rlvr_train(splits.train, splits.validation, fmap, cfg, 99);
  CHECK(a.curve.front().val_accuracy < 0.6);
  CHECK(a.curve.back().val_accuracy >= 0.9);
  CHECK(a.curve.size() == static_cast<size_t>(cfg.steps) + 1);

  // the reference stays frozen at the initial parameters
  auto fresh = policy::init_params(fmap.dim, 4, mix64(99, 0xa111), 0.01);
  CHECK(a.ref_params.w == fresh.w);

  auto b = rlvr_train(splits.train, splits.validation, fmap, cfg, 99);
  REQUIRE(a.curve.size() == b.curve.size());
  for (size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].mean_reward == b.curve[i].mean_reward);
    CHECK(a.curve[i].val_accuracy == b.curve[i].val_accuracy);
    CHECK(a.curve[i].mean_kl == b.curve[i].mean_kl);
  }
  CHECK(a.params.w == b.params.w);

  // a different seed gives a different trajectory through parameter space
  auto c = rlvr_train(splits.train, splits.validation, fmap, cfg, 100);
  CHECK(a.params.w != c.params.w);
}

TEST_CASE("rollout parallelism does not change the result") {
  auto all = tiny_task(20);
  auto splits = corpus::make_splits(all.instances, 4, {0.8, 0.1, 0.1}, all.dataset);
  policy::FeatureMap fmap{.dim = 128};
  GRPOConfig cfg;
  cfg.group_size = 4;
  cfg.batch_size = 8;
  cfg.minibatch_size = 4;
  cfg.steps = 10;
  cfg.rollout_threads = 1;
  auto serial = rlvr_train(splits.train, splits.validation, fmap, cfg, 7);
  cfg.rollout_threads = 8;
  auto parallel = rlvr_train(splits.train, splits.validation, fmap, cfg, 7);
  CHECK(serial.params.w == parallel.params.w);
}

TEST_CASE("training curve CSV round-trips the recorded points") {
  TrainingCurve curve = {{0, 0.0, 0.25, 0.0, 0.0}, {1, 0.5, 0.25, 0.01, 0.125}};
  std::string path = "/tmp/steerlab_rlvr_curve.csv";
  save_curve_csv(path, curve);
  std::string content = read_file(path);
  CHECK(contains(content, "step,mean_reward,val_accuracy,mean_kl,clip_fraction"));
  CHECK(contains(content, "1,0.5,0.25,0.01,0.125"));
}

TEST_SUITE_END();
