#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rivalpll/errors.hpp"

namespace rivalpll {

struct ArchitectureSpec {
  int input_dim = 0;
  std::vector<int> hidden = {64, 64};  // encoder widths, ReLU after each
  int embed_dim = 128;                 // projection output, L2-normalized
  int label_count = 0;

  void validate() const;
};

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

// Encoder trunk feeding two heads: a linear classifier over the last hidden
// activation and a two-layer projection whose output is L2-normalized.
struct NetworkParams {
  ArchitectureSpec arch;
  std::vector<DenseLayer> encoder;
  DenseLayer proj_hidden;
  DenseLayer proj_out;
  DenseLayer classifier;

  // Weights U(-1/sqrt(fan_in), +1/sqrt(fan_in)) from counter-keyed draws,
  // biases zero. Same (arch, seed) gives bit-identical parameters.
  static NetworkParams init(const ArchitectureSpec& arch, std::uint64_t seed);
  static NetworkParams zeros_like(const NetworkParams& other);
};

struct ParamView {
  std::string name;
  double* data;
  Eigen::Index rows, cols;
  Eigen::Index size() const { return rows * cols; }
};
struct ConstParamView {
  std::string name;
  const double* data;
  Eigen::Index rows, cols;
  Eigen::Index size() const { return rows * cols; }
};

// Stable traversal order; optimizer state, EMA, checkpoints, and the
// finite-difference checks all index parameters through this.
std::vector<ParamView> param_views(NetworkParams& p);
std::vector<ConstParamView> param_views(const NetworkParams& p);

struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> enc_pre;   // pre-activation per encoder layer
  std::vector<Eigen::MatrixXd> enc_act;   // post-ReLU
  Eigen::MatrixXd proj_hidden_pre, proj_hidden_act;
  Eigen::MatrixXd proj_pre;      // embeddings before normalization
  Eigen::VectorXd proj_norm;     // row norms, floored at 1e-12
  Eigen::MatrixXd embeddings;    // unit rows
  Eigen::MatrixXd logits;        // batch x label_count
  Eigen::MatrixXd probs;         // softmax rows
};

// Rejects non-finite inputs.
ForwardCache forward_batch(const NetworkParams& p, const Eigen::MatrixXd& x);

struct ForwardResult {
  Eigen::VectorXd logits, probs, embedding;
};
ForwardResult forward(const NetworkParams& p, const Eigen::VectorXd& x);

// d_logits is the loss gradient at the logits; d_embeddings the gradient at
// the normalized embeddings (pass an empty matrix when unused). Returns
// parameter gradients shaped like the network.
NetworkParams backward_batch(const NetworkParams& p, const ForwardCache& cache,
                             const Eigen::MatrixXd& d_logits,
                             const Eigen::MatrixXd& d_embeddings);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  int total_epochs = 300;  // cosine horizon

  void validate() const;
};

// velocity <- momentum * velocity + grad + weight_decay * param
// param    <- param - lr(epoch) * velocity
class SgdOptimizer {
 public:
  SgdOptimizer(const NetworkParams& params, SgdConfig cfg);
  double learning_rate(int epoch) const;  // lr * 0.5 * (1 + cos(pi * epoch / T))
  void step(NetworkParams& params, const NetworkParams& grads, int epoch);

 private:
  SgdConfig cfg_;
  std::vector<Eigen::VectorXd> velocity_;
};

// key <- m * key + (1 - m) * query, per tensor
void ema_update(NetworkParams& key, const NetworkParams& query, double momentum);

struct AugmentationSpec {
  double noise_sigma = 0.1;
  double mask_prob = 0.1;
  void validate() const;
};

enum class AugView : std::uint64_t { kQuery = 0, kKey = 1 };

// Additive Gaussian noise then coordinate masking (masked entries become 0).
// Draws are keyed by (seed, view, epoch, instance, coordinate), so the two
// views of one instance are independent and reruns are bit-identical.
Eigen::VectorXd augment(const Eigen::VectorXd& x, const AugmentationSpec& spec,
                        std::uint64_t seed, std::int64_t epoch, std::int64_t instance,
                        AugView view);

}  // namespace rivalpll
