#include "steerlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace steerlab::policy {

double SparseVec::l2_norm() const {
  double s = 0.0;
  for (const auto& [idx, val] : entries) s += val * val;
  return std::sqrt(s);
}

SparseVec featurize_text(std::string_view text, const FeatureMap& map) {
  if (map.dim <= 0) throw TrainError("feature dim must be positive");
  std::vector<std::string> tokens = word_tokens(text);
  std::unordered_map<int, double> acc;
  std::string key;
  for (int order : map.ngram_orders) {
    if (order <= 0 || tokens.size() < static_cast<size_t>(order)) continue;
    for (size_t i = 0; i + order <= tokens.size(); ++i) {
      key.clear();
      for (int k = 0; k < order; ++k) {
        if (k > 0) key.push_back('\x1f');
        key += tokens[i + k];
      }
      int idx = static_cast<int>(hash64(key, map.seed) % static_cast<uint64_t>(map.dim));
      acc[idx] += 1.0;
    }
  }
  SparseVec vec;
  vec.entries.assign(acc.begin(), acc.end());
  std::sort(vec.entries.begin(), vec.entries.end());
  double norm = vec.l2_norm();
  if (norm > 0.0) {
    for (auto& [idx, val] : vec.entries) val /= norm;
  }
  return vec;
}

SparseVec featurize(const corpus::TaskInstance& inst, const FeatureMap& map) {
  return featurize_text(inst.scenario + " " + inst.perspective, map);
}

void PolicyParams::check_finite() const {
  for (double x : w) {
    if (!std::isfinite(x)) throw TrainError("non-finite policy weight");
  }
}

PolicyParams init_params(int feature_dim, int vocab_size, uint64_t seed, double noise_scale) {
  if (feature_dim <= 0 || vocab_size < 3) {
    throw TrainError("policy needs feature_dim > 0 and vocab_size >= 3 (2 options + END)");
  }
  PolicyParams params;
  params.feature_dim = feature_dim;
  params.vocab_size = vocab_size;
  params.w.assign(static_cast<size_t>(params.rows()) * vocab_size, 0.0);
  if (noise_scale > 0.0) {
    Rng rng(seed);
    for (double& x : params.w) x = noise_scale * rng.normal();
  }
  return params;
}

void save_params(const std::string& path, const PolicyParams& params) {
  std::ostringstream out;
  out << "steerlab-policy 1\n";
  out << params.feature_dim << " " << params.vocab_size << " " << params.version << "\n";
  for (int r = 0; r < params.rows(); ++r) {
    for (int c = 0; c < params.vocab_size; ++c) {
      if (c > 0) out << " ";
      out << format_double(params.at(r, c));
    }
    out << "\n";
  }
  write_file(path, out.str());
}

PolicyParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainError("cannot open checkpoint: " + path);
  std::string magic;
  int fmt = 0;
  in >> magic >> fmt;
  if (magic != "steerlab-policy" || fmt != 1) {
    throw TrainError("unrecognized checkpoint header in " + path);
  }
  PolicyParams params;
  in >> params.feature_dim >> params.vocab_size >> params.version;
  if (!in || params.feature_dim <= 0 || params.vocab_size < 3) {
    throw TrainError("corrupt checkpoint shape in " + path);
  }
  size_t n = static_cast<size_t>(params.rows()) * params.vocab_size;
  params.w.resize(n);
  for (size_t i = 0; i < n; ++i) {
    if (!(in >> params.w[i])) throw TrainError("truncated checkpoint: " + path);
  }
  params.check_finite();
  return params;
}

std::optional<int> trajectory_answer(const Trajectory& traj, const PolicyParams& params) {
  for (auto it = traj.tokens.rbegin(); it != traj.tokens.rend(); ++it) {
    if (*it != params.end_token()) return *it;
  }
  return std::nullopt;
}

TokenDist token_dist(const PolicyParams& params, const SparseVec& features, int prev) {
  int v_count = params.vocab_size;
  std::vector<double> logits(v_count, 0.0);
  for (const auto& [idx, val] : features.entries) {
    const double* row = &params.w[static_cast<size_t>(idx) * v_count];
    for (int v = 0; v < v_count; ++v) logits[v] += val * row[v];
  }
  if (prev >= 0) {
    const double* row = &params.w[static_cast<size_t>(params.feature_dim + prev) * v_count];
    for (int v = 0; v < v_count; ++v) logits[v] += row[v];
  }
  double max_logit = *std::max_element(logits.begin(), logits.end());
  TokenDist dist;
  dist.probs.resize(v_count);
  dist.logprobs.resize(v_count);
  double z = 0.0;
  for (int v = 0; v < v_count; ++v) z += std::exp(logits[v] - max_logit);
  double log_z = std::log(z) + max_logit;
  for (int v = 0; v < v_count; ++v) {
    dist.logprobs[v] = logits[v] - log_z;
    dist.probs[v] = std::exp(dist.logprobs[v]);
  }
  return dist;
}

void add_context_outer(std::vector<double>& grad, const PolicyParams& params,
                       const SparseVec& features, int prev,
                       const std::vector<double>& dlogits) {
  int v_count = params.vocab_size;
  for (const auto& [idx, val] : features.entries) {
    double* row = &grad[static_cast<size_t>(idx) * v_count];
    for (int v = 0; v < v_count; ++v) row[v] += val * dlogits[v];
  }
  if (prev >= 0) {
    double* row = &grad[static_cast<size_t>(params.feature_dim + prev) * v_count];
    for (int v = 0; v < v_count; ++v) row[v] += dlogits[v];
  }
}

Trajectory sample_response(const PolicyParams& params, const SparseVec& features, Rng& rng,
                           int max_len) {
  Trajectory traj;
  traj.sampled_version = params.version;
  int prev = -1;
  for (int t = 0; t < max_len; ++t) {
    TokenDist dist = token_dist(params, features, prev);
    double u = rng.uniform();
    double cum = 0.0;
    int tok = params.vocab_size - 1;
    for (int v = 0; v < params.vocab_size; ++v) {
      cum += dist.probs[v];
      if (u < cum) {
        tok = v;
        break;
      }
    }
    traj.tokens.push_back(tok);
    traj.logprobs.push_back(dist.logprobs[tok]);
    if (tok == params.end_token()) break;
    prev = tok;
  }
  return traj;
}

Trajectory greedy_response(const PolicyParams& params, const SparseVec& features, int max_len) {
  Trajectory traj;
  traj.sampled_version = params.version;
  int prev = -1;
  for (int t = 0; t < max_len; ++t) {
    TokenDist dist = token_dist(params, features, prev);
    int tok = static_cast<int>(std::max_element(dist.probs.begin(), dist.probs.end()) -
                               dist.probs.begin());
    traj.tokens.push_back(tok);
    traj.logprobs.push_back(dist.logprobs[tok]);
    if (tok == params.end_token()) break;
    prev = tok;
  }
  return traj;
}

LogprobGrad logprobs_and_grads(const PolicyParams& params, const SparseVec& features,
                               const std::vector<int>& tokens) {
  LogprobGrad out;
  out.grad.assign(params.w.size(), 0.0);
  out.logprobs.reserve(tokens.size());
  int prev = -1;
  std::vector<double> dlogits(params.vocab_size);
  for (int tok : tokens) {
    if (tok < 0 || tok >= params.vocab_size) throw TrainError("token id out of vocabulary");
    TokenDist dist = token_dist(params, features, prev);
    out.logprobs.push_back(dist.logprobs[tok]);
    for (int v = 0; v < params.vocab_size; ++v) dlogits[v] = -dist.probs[v];
    dlogits[tok] += 1.0;
    add_context_outer(out.grad, params, features, prev, dlogits);
    prev = tok == params.end_token() ? -1 : tok;
    if (tok == params.end_token()) break;
  }
  return out;
}

std::vector<SftExample> make_sft_examples(const corpus::TaskSet& tasks, const FeatureMap& map) {
  std::vector<SftExample> examples;
  examples.reserve(tasks.instances.size());
  for (const auto& inst : tasks.instances) {
    SftExample ex;
    ex.features = featurize(inst, map);
    ex.target = inst.gold;
    examples.push_back(std::move(ex));
  }
  return examples;
}

SftResult sft_train(PolicyParams init, const std::vector<SftExample>& examples,
                    const SftSchedule& schedule) {
  if (examples.empty()) throw TrainError("sft_train: no examples");
  for (const auto& ex : examples) {
    if (ex.target < 0 || ex.target >= init.n_options()) {
      throw TrainError("sft_train: target token out of option range");
    }
  }
  SftResult result;
  result.params = std::move(init);
  PolicyParams& params = result.params;
  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> grad(params.w.size());
  std::vector<double> dlogits(params.vocab_size);

  int batch = std::max(1, schedule.batch_size);
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    Rng rng(mix64(schedule.seed, static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += batch) {
      size_t stop = std::min(order.size(), start + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (size_t i = start; i < stop; ++i) {
        const SftExample& ex = examples[order[i]];
        TokenDist dist = token_dist(params, ex.features, -1);
        batch_loss -= dist.logprobs[ex.target];
        for (int v = 0; v < params.vocab_size; ++v) dlogits[v] = -dist.probs[v];
        dlogits[ex.target] += 1.0;
        add_context_outer(grad, params, ex.features, -1, dlogits);
      }
      double inv = 1.0 / static_cast<double>(stop - start);
      batch_loss *= inv;
      if (!std::isfinite(batch_loss)) {
        throw TrainError("sft_train: non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += batch_loss * static_cast<double>(stop - start);
      // ascend mean log-likelihood == descend mean cross-entropy
      double step = schedule.learning_rate * inv;
      for (size_t k = 0; k < params.w.size(); ++k) params.w[k] += step * grad[k];
      if (schedule.learning_rate != 0.0) ++params.version;
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

}  // namespace steerlab::policy
