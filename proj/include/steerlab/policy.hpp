#pragma once

#include <optional>
#include <string>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/util.hpp"

namespace steerlab::policy {

// Hashed n-gram featurization of (scenario, perspective) text.
struct FeatureMap {
  int dim = 4096;
  uint64_t seed = 0x5eedf00d;
  std::vector<int> ngram_orders = {1, 2};
};

// Sparse L2-normalized feature vector; entries sorted by index.
struct SparseVec {
  std::vector<std::pair<int, double>> entries;

  size_t nnz() const { return entries.size(); }
  double l2_norm() const;
};

SparseVec featurize_text(std::string_view text, const FeatureMap& map);
SparseVec featurize(const corpus::TaskInstance& inst, const FeatureMap& map);

// Autoregressive categorical policy over a vocabulary of answer letters plus
// a final END token. Token t is drawn from softmax(W^T ctx_t) with
// ctx_t = concat(features, one-hot of previous token), the one-hot block all
// zero at t = 0. W has (feature_dim + vocab_size) rows and vocab_size columns.
struct PolicyParams {
  int feature_dim = 0;
  int vocab_size = 0;  // n_options + 1; END is the last token id
  int64_t version = 0;
  std::vector<double> w;  // row-major (feature_dim + vocab_size) x vocab_size

  int rows() const { return feature_dim + vocab_size; }
  int end_token() const { return vocab_size - 1; }
  int n_options() const { return vocab_size - 1; }
  double at(int r, int c) const { return w[static_cast<size_t>(r) * vocab_size + c]; }
  double& at(int r, int c) { return w[static_cast<size_t>(r) * vocab_size + c]; }
  void check_finite() const;
};

// Zero weights plus optional seeded gaussian noise.
PolicyParams init_params(int feature_dim, int vocab_size, uint64_t seed,
                         double noise_scale = 0.0);

void save_params(const std::string& path, const PolicyParams& params);
PolicyParams load_params(const std::string& path);

struct Trajectory {
  std::string instance_id;
  std::vector<int> tokens;       // length in [1, max_len]; END may terminate it
  std::vector<double> logprobs;  // per token, under the sampling parameters
  int64_t sampled_version = 0;
};

// Last non-END token if present, else Unparseable.
std::optional<int> trajectory_answer(const Trajectory& traj, const PolicyParams& params);

struct TokenDist {
  std::vector<double> probs;
  std::vector<double> logprobs;
};

// Softmax distribution for one position. prev = -1 at t = 0.
TokenDist token_dist(const PolicyParams& params, const SparseVec& features, int prev);

// grad += ctx (x) dlogits, touching only the context's nonzero rows.
void add_context_outer(std::vector<double>& grad, const PolicyParams& params,
                       const SparseVec& features, int prev,
                       const std::vector<double>& dlogits);

Trajectory sample_response(const PolicyParams& params, const SparseVec& features, Rng& rng,
                           int max_len = 4);
Trajectory greedy_response(const PolicyParams& params, const SparseVec& features,
                           int max_len = 4);

struct LogprobGrad {
  std::vector<double> logprobs;  // per token
  std::vector<double> grad;      // d(sum logprobs)/dW, same shape as w
};

// Teacher-forced log-probabilities of `tokens` and the exact gradient of
// their sum: sum_t ctx_t (x) (onehot(tok_t) - softmax(W^T ctx_t)).
LogprobGrad logprobs_and_grads(const PolicyParams& params, const SparseVec& features,
                               const std::vector<int>& tokens);

// ---- SFT baseline trainer ----

struct SftExample {
  SparseVec features;
  int target;  // answer token id
};

struct SftSchedule {
  int epochs = 200;
  double learning_rate = 1.0;
  int batch_size = 32;
  uint64_t seed = 0;
};

struct SftResult {
  PolicyParams params;
  std::vector<double> loss_curve;  // mean cross-entropy per epoch
};

// Minimizes mean cross-entropy of the gold answer token as a length-1
// response via mini-batch gradient descent. Deterministic given the seed.
SftResult sft_train(PolicyParams init, const std::vector<SftExample>& examples,
                    const SftSchedule& schedule);

std::vector<SftExample> make_sft_examples(const corpus::TaskSet& tasks, const FeatureMap& map);

}  // namespace steerlab::policy
