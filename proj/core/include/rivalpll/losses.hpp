#pragma once

#include <Eigen/Dense>
#include <vector>

#include "rivalpll/atm.hpp"
#include "rivalpll/transition.hpp"

namespace rivalpll {

struct CorrectedCeResult {
  double value = 0.0;
  Eigen::VectorXd grad_probs;   // d value / d f
  Eigen::VectorXd grad_logits;  // chained through the softmax
};

// -sum_i q_i log((M f)_i) with the log floored at 1e-12; the floored
// coordinates contribute zero gradient. Throws if any (M f)_i exceeds 2,
// the ceiling a rival-augmented correction of a distribution can reach.
CorrectedCeResult adversary_aware_ce(const Eigen::VectorXd& probs,
                                     const Eigen::VectorXd& targets,
                                     const AdversaryAwareMatrix& m);

struct ContrastiveResult {
  double value = 0.0;
  Eigen::VectorXd grad_query;
  Eigen::MatrixXd grad_pool;
  bool skipped = false;  // empty positive set
};

// log-sum-exp of u.z_j/tau over the pool minus the mean similarity to the
// positive rows. Gradients flow to the query and to every pool row.
ContrastiveResult contrastive_loss(const Eigen::VectorXd& query,
                                   const std::vector<int>& positives,
                                   const Eigen::MatrixXd& pool, double tau);

struct BatchContrastiveResult {
  double value = 0.0;            // mean over queries with nonempty positives
  Eigen::MatrixXd grad_queries;  // batch x dim; query-role and pool-role parts
  int skipped_queries = 0;
  int active_queries = 0;
};

// Every query scores against all other pool rows (self excluded). Only the
// query embeddings (pool rows 0..B-1) receive gradient; key and queue rows
// are detached by construction.
BatchContrastiveResult contrastive_batch(const ContrastPool& pool, double tau);

struct LossBreakdown {
  double classification = 0.0;
  double contrastive = 0.0;
  double combined = 0.0;  // classification + lambda * contrastive
  int skipped_queries = 0;
};

struct CombinedLossResult {
  LossBreakdown breakdown;
  Eigen::MatrixXd grad_logits;      // batch x c, mean-scaled
  Eigen::MatrixXd grad_embeddings;  // batch x dim, lambda-scaled; empty when lambda = 0
};

// Batch objective: mean corrected cross entropy plus lambda times the batch
// contrastive term. pool may be null only when lambda is 0.
CombinedLossResult combined_loss(const Eigen::MatrixXd& probs,
                                 const Eigen::MatrixXd& targets,
                                 const AdversaryAwareMatrix& m,
                                 const ContrastPool* pool, double lambda, double tau);

}  // namespace rivalpll
