#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <vector>

#include "rivalpll/labelgen.hpp"

namespace rivalpll {

inline constexpr double kDegenerateUpdateTol = 1e-12;

// Normalized inter-prototype margins from unit rows: raw margin
// exp(-v_i . v_j), each row divided by its off-diagonal sum, diagonal 0.
Eigen::MatrixXd compute_margins(const Eigen::MatrixXd& unit_rows);

// One unit-norm prototype per class plus a cached margin matrix that is
// refreshed after every accepted update.
class PrototypeBank {
 public:
  PrototypeBank(int class_count, int dim, std::uint64_t seed);  // random unit rows
  explicit PrototypeBank(Eigen::MatrixXd vectors);              // rows must be unit

  int class_count() const { return static_cast<int>(vectors_.rows()); }
  int dim() const { return static_cast<int>(vectors_.cols()); }
  const Eigen::MatrixXd& vectors() const { return vectors_; }
  const Eigen::MatrixXd& margins() const { return margins_; }
  std::int64_t skipped_updates() const { return skipped_; }

  // v <- sqrt(1 - alpha^2) v + alpha g/||g|| with g = u - beta * sum of
  // margin-weighted other prototypes, then renormalized. Returns false and
  // counts a skip when ||g|| < 1e-12. u must be unit within 1e-9.
  bool update(const Eigen::VectorXd& u, int class_index, double alpha, double beta);

  // argmax over candidate labels of u . v_j; ties go to the smallest label.
  int restricted_argmax(const Eigen::VectorXd& u, const CandidateSet& candidates) const;

 private:
  Eigen::MatrixXd vectors_;
  Eigen::MatrixXd margins_;
  std::int64_t skipped_ = 0;
};

// Per-instance soft targets on the simplex, moved by exponential averaging
// toward the one-hot prototype assignment restricted to the candidate set.
class PseudoLabelStore {
 public:
  PseudoLabelStore(int instance_count, int label_count, double momentum);

  double momentum() const { return momentum_; }
  const Eigen::MatrixXd& targets() const { return targets_; }
  Eigen::VectorXd row(int instance) const;

  void update(int instance, const Eigen::VectorXd& u, const PrototypeBank& bank,
              const CandidateSet& candidates);

 private:
  double momentum_;
  Eigen::MatrixXd targets_;
};

// argmax of classifier outputs restricted to the candidate set.
int predict_label(const Eigen::VectorXd& probs, const CandidateSet& candidates);

// FIFO of (unit key embedding, label frozen at insertion).
class EmbeddingQueue {
 public:
  EmbeddingQueue(int capacity, int dim);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int size() const { return static_cast<int>(entries_.size()); }

  // Rows must be unit within 1e-6; oldest entries are evicted first.
  void push(const Eigen::MatrixXd& keys, const std::vector<int>& labels);

  Eigen::MatrixXd embeddings() const;  // oldest first
  std::vector<int> labels() const;

 private:
  int capacity_, dim_;
  std::deque<std::pair<Eigen::VectorXd, int>> entries_;
};

// Rows 0..B-1 are the query embeddings, rows B..2B-1 the key embeddings,
// the rest the queue snapshot; `labels` aligns with the rows.
struct ContrastPool {
  Eigen::MatrixXd embeddings;
  std::vector<int> labels;
  int batch = 0;

  int rows() const { return static_cast<int>(embeddings.rows()); }
};

ContrastPool build_contrast_pool(const Eigen::MatrixXd& query_embeddings,
                                 const Eigen::MatrixXd& key_embeddings,
                                 const std::vector<int>& predictions,
                                 const EmbeddingQueue& queue);

// Pool rows sharing the query's predicted label, excluding the query row
// itself. May be empty.
std::vector<int> build_positive_set(const ContrastPool& pool, int query_index);

}  // namespace rivalpll
