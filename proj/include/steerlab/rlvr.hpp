#pragma once

#include <optional>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/policy.hpp"
#include "steerlab/prompting.hpp"

namespace steerlab::rlvr {

struct LrSchedule {
  enum class Kind { ConstantWithWarmup, Cosine };
  Kind kind = Kind::ConstantWithWarmup;
  double max_lr = 6.0;
  double min_lr = 0.6;  // cosine floor
  int warmup_steps = 10;
  int total_steps = 300;

  double at(int step) const;  // step is 0-based
};

struct GRPOConfig {
  int group_size = 16;
  double clip_ratio = 0.2;
  double kl_coeff = 0.001;
  int grpo_iterations = 1;
  // Desk-scale defaults; the full-scale runs used batch 256 / minibatch 64.
  int batch_size = 64;
  int minibatch_size = 16;
  double advantage_eps = 1e-8;
  LrSchedule lr;
  int max_len = 4;
  bool sequence_level_ratio = false;
  int steps = 300;
  int val_interval = 10;
  int patience = 20;  // consecutive zero-reward steps before warning
  int rollout_threads = 4;

  void validate() const;
};

// Binary verifiable reward: 1 iff the parsed option equals gold. Unparseable
// scores 0. No partial credit for formatting or CoT quality.
int reward(const std::optional<int>& parsed, int gold);
int reward(const prompting::ParsedAnswer& parsed, int gold);

// Group-relative advantages: (r_i - mean) / (population std + eps).
// All-equal groups short-circuit to exact zeros. Requires G >= 2.
std::vector<double> group_advantages(const std::vector<double>& rewards, double eps);

struct RolloutGroup {
  std::string instance_id;
  policy::SparseVec features;
  int gold = -1;
  std::vector<policy::Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

// Samples G trajectories for one instance from the current params snapshot,
// scores them against gold, and normalizes advantages.
RolloutGroup make_rollout_group(const policy::PolicyParams& params,
                                const corpus::TaskInstance& inst,
                                const policy::SparseVec& features, uint64_t rollout_seed,
                                const GRPOConfig& cfg);

struct StepStats {
  double mean_reward = 0.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  double grad_norm = 0.0;
  double objective = 0.0;
};

// Objective value / exact gradient over a frozen minibatch of groups, with
// no parameter update. The gradient is the derivative of exactly the value
// grpo_objective returns (finite-difference checkable).
double grpo_objective(const policy::PolicyParams& params,
                      const policy::PolicyParams& ref_params,
                      const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg);
std::vector<double> grpo_gradient(const policy::PolicyParams& params,
                                  const policy::PolicyParams& ref_params,
                                  const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg);

// One GRPO batch update: ascends the clipped surrogate
//   mean_{i,t} [ min(rho_{i,t} A_i, clip(rho_{i,t}, 1-eps, 1+eps) A_i) - beta KL_t ]
// with rho from the recorded rollout logprobs and KL the exact categorical
// KL(pi_theta || pi_ref) per position. grpo_iterations passes over
// minibatches of minibatch_size groups. Rollouts must carry the entry
// params.version; anything else is a stale-rollout error.
StepStats grpo_step(policy::PolicyParams& params, const policy::PolicyParams& ref_params,
                    const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg,
                    double learning_rate);

struct CurvePoint {
  int step = 0;
  double mean_reward = 0.0;
  double val_accuracy = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
};

using TrainingCurve = std::vector<CurvePoint>;

void save_curve_csv(const std::string& path, const TrainingCurve& curve);

struct RlvrResult {
  policy::PolicyParams params;
  policy::PolicyParams ref_params;  // frozen snapshot of the initial policy
  TrainingCurve curve;
};

// Full RLVR loop: batched rollouts, verifiable rewards, group-normalized
// advantages, GRPO updates, periodic held-out accuracy. Deterministic for a
// fixed seed; rollout parallelism does not change results (per-instance rng
// streams, reduction in instance order).
RlvrResult rlvr_train(const corpus::TaskSet& train, const corpus::TaskSet& validation,
                      const policy::FeatureMap& fmap, const GRPOConfig& cfg, uint64_t seed);

// Greedy-decoding accuracy of a policy on a task set.
double policy_accuracy(const policy::PolicyParams& params, const corpus::TaskSet& tasks,
                       const policy::FeatureMap& fmap, int max_len);

}  // namespace steerlab::rlvr
