#include "rivalpll/atm.hpp"

#include <cmath>

#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"

namespace rivalpll {

Eigen::MatrixXd compute_margins(const Eigen::MatrixXd& unit_rows) {
  const Eigen::Index k = unit_rows.rows();
  if (k < 2) throw ValidationError("compute_margins: needs at least 2 prototypes");
  for (Eigen::Index i = 0; i < k; ++i)
    if (std::abs(unit_rows.row(i).norm() - 1.0) > kStructuralTol)
      throw ValidationError("compute_margins: row " + std::to_string(i) + " is not unit");
  Eigen::MatrixXd m = (-(unit_rows * unit_rows.transpose()).array()).exp();
  m.diagonal().setZero();
  for (Eigen::Index i = 0; i < k; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

PrototypeBank::PrototypeBank(int class_count, int dim, std::uint64_t seed) {
  if (class_count < 2 || dim < 1) throw ValidationError("PrototypeBank: bad shape");
  vectors_.resize(class_count, dim);
  const rng::Key key(seed, rng::Stream::kPrototypeInit);
  for (int i = 0; i < class_count; ++i) {
    Eigen::VectorXd v(dim);
    for (int j = 0; j < dim; ++j)
      v[j] = key.with(static_cast<std::uint64_t>(i)).with(static_cast<std::uint64_t>(j)).gaussian();
    vectors_.row(i) = (v / v.norm()).transpose();
  }
  margins_ = compute_margins(vectors_);
}

PrototypeBank::PrototypeBank(Eigen::MatrixXd vectors) : vectors_(std::move(vectors)) {
  if (vectors_.rows() < 2 || vectors_.cols() < 1)
    throw ValidationError("PrototypeBank: bad shape");
  margins_ = compute_margins(vectors_);  // also enforces unit rows
}

bool PrototypeBank::update(const Eigen::VectorXd& u, int class_index, double alpha,
                           double beta) {
  if (class_index < 0 || class_index >= class_count())
    throw ValidationError("PrototypeBank: class index out of range");
  if (u.size() != dim()) throw ValidationError("PrototypeBank: embedding dim mismatch");
  if (std::abs(u.norm() - 1.0) > kStructuralTol)
    throw ValidationError("PrototypeBank: update embedding is not unit norm");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("PrototypeBank: alpha must lie in (0, 1)");
  if (beta < 0.0) throw ValidationError("PrototypeBank: beta must be >= 0");

  Eigen::VectorXd repulsion = Eigen::VectorXd::Zero(dim());
  for (int j = 0; j < class_count(); ++j)
    if (j != class_index)
      repulsion += margins_(class_index, j) * vectors_.row(j).transpose();
  const Eigen::VectorXd g = u - beta * repulsion;
  const double g_norm = g.norm();
  if (g_norm < kDegenerateUpdateTol) {
    ++skipped_;
    return false;
  }
  Eigen::VectorXd v = std::sqrt(1.0 - alpha * alpha) * vectors_.row(class_index).transpose() +
                      alpha * (g / g_norm);
  // The combined vector can drift off the sphere; renormalize so unit norm
  // is an exact invariant rather than an approximate one.
  vectors_.row(class_index) = (v / std::max(v.norm(), kNormFloor)).transpose();
  margins_ = compute_margins(vectors_);
  return true;
}

int PrototypeBank::restricted_argmax(const Eigen::VectorXd& u,
                                     const CandidateSet& candidates) const {
  if (u.size() != dim()) throw ValidationError("PrototypeBank: embedding dim mismatch");
  if (candidates.label_count() != class_count())
    throw ValidationError("PrototypeBank: candidate set label count mismatch");
  int best = -1;
  double best_score = 0.0;
  for (int j = 0; j < class_count(); ++j) {
    if (!candidates.contains(j)) continue;
    const double score = u.dot(vectors_.row(j).transpose());
    if (best < 0 || score > best_score) {
      best = j;
      best_score = score;
    }
  }
  if (best < 0) throw ValidationError("PrototypeBank: empty candidate set");
  return best;
}

PseudoLabelStore::PseudoLabelStore(int instance_count, int label_count, double momentum)
    : momentum_(momentum) {
  if (instance_count < 1 || label_count < 2)
    throw ValidationError("PseudoLabelStore: bad shape");
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw ValidationError("PseudoLabelStore: momentum must lie in [0, 1]");
  targets_ = Eigen::MatrixXd::Constant(instance_count, label_count, 1.0 / label_count);
}

Eigen::VectorXd PseudoLabelStore::row(int instance) const {
  if (instance < 0 || instance >= targets_.rows())
    throw ValidationError("PseudoLabelStore: instance out of range");
  return targets_.row(instance).transpose();
}

void PseudoLabelStore::update(int instance, const Eigen::VectorXd& u,
                              const PrototypeBank& bank, const CandidateSet& candidates) {
  if (instance < 0 || instance >= targets_.rows())
    throw ValidationError("PseudoLabelStore: instance out of range");
  const int r = bank.restricted_argmax(u, candidates);
  targets_.row(instance) *= momentum_;
  targets_(instance, r) += 1.0 - momentum_;
}

int predict_label(const Eigen::VectorXd& probs, const CandidateSet& candidates) {
  if (probs.size() != candidates.label_count())
    throw ValidationError("predict_label: size mismatch");
  int best = -1;
  double best_score = 0.0;
  for (int j = 0; j < probs.size(); ++j) {
    if (!candidates.contains(j)) continue;
    if (best < 0 || probs[j] > best_score) {
      best = j;
      best_score = probs[j];
    }
  }
  if (best < 0) throw ValidationError("predict_label: empty candidate set");
  return best;
}

EmbeddingQueue::EmbeddingQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
  if (capacity < 1) throw ValidationError("EmbeddingQueue: capacity must be >= 1");
  if (dim < 1) throw ValidationError("EmbeddingQueue: dim must be >= 1");
}

void EmbeddingQueue::push(const Eigen::MatrixXd& keys, const std::vector<int>& labels) {
  if (keys.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ValidationError("EmbeddingQueue: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(keys.rows()) + " keys");
  if (keys.cols() != dim_) throw ValidationError("EmbeddingQueue: key dim mismatch");
  for (Eigen::Index i = 0; i < keys.rows(); ++i)
    if (std::abs(keys.row(i).norm() - 1.0) > 1e-6)
      throw ValidationError("EmbeddingQueue: key row " + std::to_string(i) +
                            " is not unit norm");
  for (Eigen::Index i = 0; i < keys.rows(); ++i) {
    entries_.emplace_back(keys.row(i).transpose(), labels[static_cast<std::size_t>(i)]);
    if (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }
}

Eigen::MatrixXd EmbeddingQueue::embeddings() const {
  Eigen::MatrixXd out(size(), dim_);
  for (int i = 0; i < size(); ++i)
    out.row(i) = entries_[static_cast<std::size_t>(i)].first.transpose();
  return out;
}

std::vector<int> EmbeddingQueue::labels() const {
  std::vector<int> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

ContrastPool build_contrast_pool(const Eigen::MatrixXd& query_embeddings,
                                 const Eigen::MatrixXd& key_embeddings,
                                 const std::vector<int>& predictions,
                                 const EmbeddingQueue& queue) {
  const int batch = static_cast<int>(query_embeddings.rows());
  if (batch < 1) throw ValidationError("build_contrast_pool: empty batch");
  if (key_embeddings.rows() != batch)
    throw ValidationError("build_contrast_pool: query/key batch mismatch");
  if (query_embeddings.cols() != key_embeddings.cols() ||
      query_embeddings.cols() != queue.dim())
    throw ValidationError("build_contrast_pool: embedding dim mismatch");
  if (static_cast<int>(predictions.size()) != batch)
    throw ValidationError("build_contrast_pool: predictions size mismatch");

  ContrastPool pool;
  pool.batch = batch;
  pool.embeddings.resize(2 * batch + queue.size(), query_embeddings.cols());
  pool.embeddings.topRows(batch) = query_embeddings;
  pool.embeddings.middleRows(batch, batch) = key_embeddings;
  if (queue.size() > 0) pool.embeddings.bottomRows(queue.size()) = queue.embeddings();
  pool.labels = predictions;
  pool.labels.insert(pool.labels.end(), predictions.begin(), predictions.end());
  const auto queued = queue.labels();
  pool.labels.insert(pool.labels.end(), queued.begin(), queued.end());
  return pool;
}

std::vector<int> build_positive_set(const ContrastPool& pool, int query_index) {
  if (query_index < 0 || query_index >= pool.batch)
    throw ValidationError("build_positive_set: query index outside batch");
  std::vector<int> out;
  const int label = pool.labels[static_cast<std::size_t>(query_index)];
  for (int r = 0; r < pool.rows(); ++r)
    if (r != query_index && pool.labels[static_cast<std::size_t>(r)] == label)
      out.push_back(r);
  return out;
}

}  // namespace rivalpll
