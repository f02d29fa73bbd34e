#include "steerlab/rlvr.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace steerlab::rlvr {

double LrSchedule::at(int step) const {
  double warm = 1.0;
  if (warmup_steps > 0 && step < warmup_steps) {
    warm = static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (kind == Kind::ConstantWithWarmup) return max_lr * warm;
  // one-cycle cosine with linear warmup
  if (step < warmup_steps) return max_lr * warm;
  int span = std::max(1, total_steps - warmup_steps);
  double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return min_lr + 0.5 * (max_lr - min_lr) * (1.0 + std::cos(M_PI * t));
}

void GRPOConfig::validate() const {
  if (group_size < 2) throw TrainError("group_size must be >= 2");
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw TrainError("clip_ratio must be in (0, 1)");
  if (kl_coeff < 0.0) throw TrainError("kl_coeff must be >= 0");
  if (grpo_iterations < 1) throw TrainError("grpo_iterations must be >= 1");
  if (batch_size < 1 || minibatch_size < 1 || batch_size % minibatch_size != 0) {
    throw TrainError("minibatch_size must divide batch_size");
  }
  if (advantage_eps <= 0.0) throw TrainError("advantage_eps must be > 0");
  if (max_len < 1) throw TrainError("max_len must be >= 1");
}

int reward(const std::optional<int>& parsed, int gold) {
  return parsed.has_value() && *parsed == gold ? 1 : 0;
}

int reward(const prompting::ParsedAnswer& parsed, int gold) {
  return reward(parsed.option, gold);
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double eps) {
  size_t g = rewards.size();
  if (g < 2) throw TrainError("group_advantages needs a group of at least 2");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  bool all_equal = std::all_of(rewards.begin(), rewards.end(),
                               [&](double r) { return r == rewards[0]; });
  std::vector<double> adv(g, 0.0);
  if (all_equal) return adv;  // degenerate group: exact zeros
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);  // population variance
  double denom = std::sqrt(var) + eps;
  for (size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

RolloutGroup make_rollout_group(const policy::PolicyParams& params,
                                const corpus::TaskInstance& inst,
                                const policy::SparseVec& features, uint64_t rollout_seed,
                                const GRPOConfig& cfg) {
  RolloutGroup group;
  group.instance_id = inst.id;
  group.features = features;
  group.gold = inst.gold;
  group.trajectories.reserve(cfg.group_size);
  group.rewards.reserve(cfg.group_size);
  Rng rng(rollout_seed);
  for (int i = 0; i < cfg.group_size; ++i) {
    policy::Trajectory traj = policy::sample_response(params, features, rng, cfg.max_len);
    traj.instance_id = inst.id;
    group.rewards.push_back(reward(policy::trajectory_answer(traj, params), inst.gold));
    group.trajectories.push_back(std::move(traj));
  }
  group.advantages = group_advantages(group.rewards, cfg.advantage_eps);
  return group;
}

namespace {

struct MinibatchGrad {
  std::vector<double> grad;  // d(objective)/dW, already mean-normalized
  double objective = 0.0;
  double kl_sum = 0.0;
  long long tokens = 0;
  long long clipped = 0;
};

// Objective and exact gradient over one minibatch of groups. Shared by the
// update path and the finite-difference acceptance check (with grad skipped).
MinibatchGrad minibatch_objective(const policy::PolicyParams& params,
                                  const policy::PolicyParams& ref_params,
                                  const std::vector<const RolloutGroup*>& groups,
                                  const GRPOConfig& cfg, bool want_grad) {
  MinibatchGrad out;
  if (want_grad) out.grad.assign(params.w.size(), 0.0);
  long long n_tokens = 0;
  long long n_responses = 0;
  for (const RolloutGroup* group : groups) {
    for (const auto& traj : group->trajectories) {
      n_tokens += static_cast<long long>(traj.tokens.size());
      ++n_responses;
    }
  }
  if (n_tokens == 0) throw TrainError("grpo: empty minibatch");
  double inv_tokens = 1.0 / static_cast<double>(n_tokens);
  double inv_resp = 1.0 / static_cast<double>(n_responses);

  double surrogate = 0.0;
  double kl_total = 0.0;
  std::vector<double> dlogits(params.vocab_size);
  const double lo = 1.0 - cfg.clip_ratio;
  const double hi = 1.0 + cfg.clip_ratio;

  for (const RolloutGroup* group : groups) {
    for (size_t j = 0; j < group->trajectories.size(); ++j) {
      const policy::Trajectory& traj = group->trajectories[j];
      double adv = group->advantages[j];

      // Pass 1 (sequence-level ratio only): total logprob under theta.
      double seq_lp_theta = 0.0;
      if (cfg.sequence_level_ratio) {
        int prev = -1;
        for (int tok : traj.tokens) {
          policy::TokenDist dist = policy::token_dist(params, group->features, prev);
          seq_lp_theta += dist.logprobs[tok];
          prev = tok;
        }
      }
      double seq_lp_old = 0.0;
      for (double lp : traj.logprobs) seq_lp_old += lp;

      double seq_rho = 0.0, seq_coef = 0.0;
      if (cfg.sequence_level_ratio) {
        seq_rho = std::exp(seq_lp_theta - seq_lp_old);
        double unclipped = seq_rho * adv;
        double clipped = std::clamp(seq_rho, lo, hi) * adv;
        surrogate += inv_resp * std::min(unclipped, clipped);
        bool clip_binds = clipped < unclipped;
        if (clip_binds) ++out.clipped;
        seq_coef = clip_binds ? 0.0 : adv * seq_rho;
      }

      int prev = -1;
      for (size_t t = 0; t < traj.tokens.size(); ++t) {
        int tok = traj.tokens[t];
        policy::TokenDist dist = policy::token_dist(params, group->features, prev);
        policy::TokenDist ref = policy::token_dist(ref_params, group->features, prev);

        double kl = 0.0;
        for (int v = 0; v < params.vocab_size; ++v) {
          kl += dist.probs[v] * (dist.logprobs[v] - ref.logprobs[v]);
        }
        kl_total += kl;

        double coef;  // weight on (onehot(tok) - pi) in the gradient
        if (cfg.sequence_level_ratio) {
          coef = seq_coef * inv_resp;
        } else {
          double rho = std::exp(dist.logprobs[tok] - traj.logprobs[t]);
          double unclipped = rho * adv;
          double clipped = std::clamp(rho, lo, hi) * adv;
          surrogate += inv_tokens * std::min(unclipped, clipped);
          bool clip_binds = clipped < unclipped;
          if (clip_binds) ++out.clipped;
          coef = clip_binds ? 0.0 : adv * rho * inv_tokens;
        }

        if (want_grad) {
          for (int v = 0; v < params.vocab_size; ++v) {
            double pg = coef * ((v == tok ? 1.0 : 0.0) - dist.probs[v]);
            double dkl = dist.probs[v] * (dist.logprobs[v] - ref.logprobs[v] - kl);
            dlogits[v] = pg - cfg.kl_coeff * inv_tokens * dkl;
          }
          policy::add_context_outer(out.grad, params, group->features, prev, dlogits);
        }
        prev = tok;
      }
    }
  }
  out.objective = surrogate - cfg.kl_coeff * kl_total * inv_tokens;
  out.kl_sum = kl_total;
  out.tokens = n_tokens;
  return out;
}

std::vector<const RolloutGroup*> group_ptrs(const std::vector<RolloutGroup>& groups) {
  std::vector<const RolloutGroup*> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(&g);
  return out;
}

}  // namespace

double grpo_objective(const policy::PolicyParams& params,
                      const policy::PolicyParams& ref_params,
                      const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg) {
  return minibatch_objective(params, ref_params, group_ptrs(groups), cfg, false).objective;
}

std::vector<double> grpo_gradient(const policy::PolicyParams& params,
                                  const policy::PolicyParams& ref_params,
                                  const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg) {
  return minibatch_objective(params, ref_params, group_ptrs(groups), cfg, true).grad;
}

StepStats grpo_step(policy::PolicyParams& params, const policy::PolicyParams& ref_params,
                    const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg,
                    double learning_rate) {
  cfg.validate();
  if (groups.empty()) throw TrainError("grpo_step: no rollout groups");
  for (const auto& group : groups) {
    if (static_cast<int>(group.trajectories.size()) != cfg.group_size ||
        group.rewards.size() != group.trajectories.size() ||
        group.advantages.size() != group.trajectories.size()) {
      throw TrainError("grpo_step: malformed rollout group " + group.instance_id);
    }
    for (const auto& traj : group.trajectories) {
      if (traj.sampled_version != params.version) {
        throw TrainError("grpo_step: stale rollouts (sampled at version " +
                         std::to_string(traj.sampled_version) + ", params at version " +
                         std::to_string(params.version) + ")");
      }
    }
  }

  StepStats stats;
  double reward_sum = 0.0;
  long long reward_n = 0;
  for (const auto& group : groups) {
    for (double r : group.rewards) {
      reward_sum += r;
      ++reward_n;
    }
  }
  stats.mean_reward = reward_sum / static_cast<double>(reward_n);

  size_t mb_groups = static_cast<size_t>(cfg.minibatch_size);
  double kl_sum = 0.0, obj_sum = 0.0, grad_norm_sum = 0.0;
  long long token_sum = 0, clip_sum = 0;
  int n_minibatches = 0;

  for (int iter = 0; iter < cfg.grpo_iterations; ++iter) {
    for (size_t start = 0; start < groups.size(); start += mb_groups) {
      size_t stop = std::min(groups.size(), start + mb_groups);
      std::vector<const RolloutGroup*> mb;
      for (size_t i = start; i < stop; ++i) mb.push_back(&groups[i]);
      MinibatchGrad g = minibatch_objective(params, ref_params, mb, cfg, true);
      if (!std::isfinite(g.objective)) throw TrainError("grpo_step: non-finite objective");
      double norm = 0.0;
      for (double x : g.grad) norm += x * x;
      norm = std::sqrt(norm);
      if (!std::isfinite(norm)) throw TrainError("grpo_step: non-finite gradient");
      for (size_t k = 0; k < params.w.size(); ++k) params.w[k] += learning_rate * g.grad[k];
      ++params.version;
      kl_sum += g.kl_sum;
      token_sum += g.tokens;
      clip_sum += g.clipped;
      obj_sum += g.objective;
      grad_norm_sum += norm;
      ++n_minibatches;
    }
  }
  stats.mean_kl = kl_sum / static_cast<double>(token_sum);
  stats.clip_fraction = static_cast<double>(clip_sum) / static_cast<double>(token_sum);
  stats.objective = obj_sum / n_minibatches;
  stats.grad_norm = grad_norm_sum / n_minibatches;
  return stats;
}

void save_curve_csv(const std::string& path, const TrainingCurve& curve) {
  std::ostringstream out;
  out << "step,mean_reward,val_accuracy,mean_kl,clip_fraction\n";
  for (const auto& p : curve) {
    out << p.step << "," << format_double(p.mean_reward) << "," << format_double(p.val_accuracy)
        << "," << format_double(p.mean_kl) << "," << format_double(p.clip_fraction) << "\n";
  }
  write_file(path, out.str());
}

double policy_accuracy(const policy::PolicyParams& params, const corpus::TaskSet& tasks,
                       const policy::FeatureMap& fmap, int max_len) {
  if (tasks.instances.empty()) throw TrainError("policy_accuracy: empty task set");
  long long correct = 0;
  for (const auto& inst : tasks.instances) {
    policy::SparseVec features = policy::featurize(inst, fmap);
    policy::Trajectory traj = policy::greedy_response(params, features, max_len);
    correct += reward(policy::trajectory_answer(traj, params), inst.gold);
  }
  return static_cast<double>(correct) / static_cast<double>(tasks.instances.size());
}

RlvrResult rlvr_train(const corpus::TaskSet& train, const corpus::TaskSet& validation,
                      const policy::FeatureMap& fmap, const GRPOConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (train.instances.empty()) throw TrainError("rlvr_train: empty training set");
  int n_options = train.instances.front().n_options();
  for (const auto& inst : train.instances) {
    if (inst.n_options() != n_options) {
      throw TrainError("rlvr_train: mixed option counts in training set");
    }
    if (inst.gold < 0) throw TrainError("rlvr_train: instance without gold label");
  }

  std::vector<policy::SparseVec> features(train.instances.size());
  for (size_t i = 0; i < train.instances.size(); ++i) {
    features[i] = policy::featurize(train.instances[i], fmap);
  }

  RlvrResult result;
  result.params = policy::init_params(fmap.dim, n_options + 1, mix64(seed, 0xa111), 0.01);
  result.ref_params = result.params;  // frozen reference for the whole run

  std::vector<size_t> order(train.instances.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = 0;
  uint64_t epoch = 0;
  Rng shuffle_rng(mix64(seed, 0x0e0c));
  shuffle_rng.shuffle(order);

  auto eval_val = [&]() {
    return validation.instances.empty()
               ? 0.0
               : policy_accuracy(result.params, validation, fmap, cfg.max_len);
  };

  double last_val = eval_val();
  result.curve.push_back({0, 0.0, last_val, 0.0, 0.0});

  int zero_reward_streak = 0;
  bool warned = false;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<size_t> batch;
    batch.reserve(cfg.batch_size);
    for (int k = 0; k < cfg.batch_size; ++k) {
      if (cursor == order.size()) {
        cursor = 0;
        ++epoch;
        Rng r(mix64(seed, 0x0e0c + epoch));
        r.shuffle(order);
      }
      batch.push_back(order[cursor++]);
    }

    std::vector<RolloutGroup> groups(batch.size());
    parallel_for(batch.size(), cfg.rollout_threads, [&](size_t k) {
      size_t idx = batch[k];
      const auto& inst = train.instances[idx];
      uint64_t rollout_seed = mix64(mix64(seed, hash64(inst.id)), static_cast<uint64_t>(step));
      groups[k] = make_rollout_group(result.params, inst, features[idx], rollout_seed, cfg);
    });

    double lr = cfg.lr.at(step - 1);
    StepStats stats = grpo_step(result.params, result.ref_params, groups, cfg, lr);

    if (stats.mean_reward == 0.0) {
      if (++zero_reward_streak >= cfg.patience && !warned) {
        std::cerr << "rlvr_train: mean reward has been 0 for " << zero_reward_streak
                  << " consecutive steps\n";
        warned = true;
      }
    } else {
      zero_reward_streak = 0;
    }

    if (step % cfg.val_interval == 0 || step == cfg.steps) last_val = eval_val();
    result.curve.push_back({step, stats.mean_reward, last_val, stats.mean_kl,
                            stats.clip_fraction});
  }
  return result;
}

}  // namespace steerlab::rlvr
