#include "rivalpll/losses.hpp"

#include <cmath>

#include "rivalpll/numeric.hpp"

namespace rivalpll {

namespace {

void check_distribution(const Eigen::VectorXd& v, const char* who) {
  if ((v.array() < -1e-9).any() || std::abs(v.sum() - 1.0) > 1e-6)
    throw ValidationError(std::string(who) + ": vector is not a probability distribution");
}

}  // namespace

CorrectedCeResult adversary_aware_ce(const Eigen::VectorXd& probs,
                                     const Eigen::VectorXd& targets,
                                     const AdversaryAwareMatrix& m) {
  const int c = m.label_count();
  if (probs.size() != c || targets.size() != c)
    throw ValidationError("adversary_aware_ce: size mismatch");
  check_distribution(probs, "adversary_aware_ce probs");
  check_distribution(targets, "adversary_aware_ce targets");

  const Eigen::VectorXd s = m.entries() * probs;
  CorrectedCeResult out;
  Eigen::VectorXd ds = Eigen::VectorXd::Zero(c);
  for (int i = 0; i < c; ++i) {
    if (s[i] > 2.0 + kStructuralTol)
      throw ValidationError("adversary_aware_ce: corrected mass " + format_double(s[i]) +
                            " exceeds 2; correction matrix is malformed");
    const double si = std::max(s[i], kProbFloor);
    out.value -= targets[i] * std::log(si);
    if (s[i] > kProbFloor) ds[i] = -targets[i] / si;
  }
  out.grad_probs = m.entries().transpose() * ds;
  out.grad_logits =
      probs.array() * (out.grad_probs.array() - probs.dot(out.grad_probs));
  return out;
}

ContrastiveResult contrastive_loss(const Eigen::VectorXd& query,
                                   const std::vector<int>& positives,
                                   const Eigen::MatrixXd& pool, double tau) {
  if (!(tau > 0.0)) throw ValidationError("contrastive_loss: tau must be positive");
  if (pool.rows() < 1) throw ValidationError("contrastive_loss: empty pool");
  if (pool.cols() != query.size())
    throw ValidationError("contrastive_loss: embedding dim mismatch");
  ContrastiveResult out;
  out.grad_query = Eigen::VectorXd::Zero(query.size());
  out.grad_pool = Eigen::MatrixXd::Zero(pool.rows(), pool.cols());
  if (positives.empty()) {
    out.skipped = true;
    return out;
  }
  for (int j : positives)
    if (j < 0 || j >= pool.rows())
      throw ValidationError("contrastive_loss: positive index out of range");

  const Eigen::VectorXd k = pool * query / tau;
  const double lse = log_sum_exp(k);
  const Eigen::VectorXd w = (k.array() - lse).exp();

  const double inv = 1.0 / static_cast<double>(positives.size());
  double pos_mean = 0.0;
  Eigen::VectorXd coef = w;
  for (int j : positives) {
    pos_mean += k[j] * inv;
    coef[j] -= inv;
  }
  out.value = lse - pos_mean;
  out.grad_query = (pool.transpose() * coef) / tau;
  out.grad_pool = (coef / tau) * query.transpose();
  return out;
}

BatchContrastiveResult contrastive_batch(const ContrastPool& pool, double tau) {
  if (!(tau > 0.0)) throw ValidationError("contrastive_batch: tau must be positive");
  const int batch = pool.batch;
  const int rows = pool.rows();
  if (batch < 1 || rows < 2)
    throw ValidationError("contrastive_batch: pool too small");

  BatchContrastiveResult out;
  out.grad_queries = Eigen::MatrixXd::Zero(batch, pool.embeddings.cols());
  const Eigen::MatrixXd sims =
      pool.embeddings.topRows(batch) * pool.embeddings.transpose() / tau;

  for (int i = 0; i < batch; ++i) {
    const std::vector<int> positives = build_positive_set(pool, i);
    if (positives.empty()) {
      ++out.skipped_queries;
      continue;
    }
    ++out.active_queries;
    // log-sum-exp over every pool row except the query itself
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < rows; ++j)
      if (j != i && sims(i, j) > mx) mx = sims(i, j);
    double z = 0.0;
    for (int j = 0; j < rows; ++j)
      if (j != i) z += std::exp(sims(i, j) - mx);
    const double lse = mx + std::log(z);

    const double inv = 1.0 / static_cast<double>(positives.size());
    Eigen::VectorXd coef(rows);
    for (int j = 0; j < rows; ++j)
      coef[j] = j == i ? 0.0 : std::exp(sims(i, j) - lse);
    double pos_mean = 0.0;
    for (int j : positives) {
      pos_mean += sims(i, j) * inv;
      coef[j] -= inv;
    }
    out.value += lse - pos_mean;

    out.grad_queries.row(i) += (pool.embeddings.transpose() * coef).transpose() / tau;
    const Eigen::RowVectorXd query = pool.embeddings.row(i);
    for (int j = 0; j < batch; ++j)
      if (j != i && coef[j] != 0.0) out.grad_queries.row(j) += (coef[j] / tau) * query;
  }

  if (out.active_queries > 0) {
    out.value /= out.active_queries;
    out.grad_queries /= static_cast<double>(out.active_queries);
  }
  return out;
}

CombinedLossResult combined_loss(const Eigen::MatrixXd& probs,
                                 const Eigen::MatrixXd& targets,
                                 const AdversaryAwareMatrix& m,
                                 const ContrastPool* pool, double lambda, double tau) {
  const Eigen::Index batch = probs.rows();
  if (batch < 1) throw ValidationError("combined_loss: empty batch");
  if (targets.rows() != batch || targets.cols() != probs.cols())
    throw ValidationError("combined_loss: targets shape mismatch");
  if (lambda < 0.0) throw ValidationError("combined_loss: lambda must be >= 0");
  if (lambda > 0.0 && pool == nullptr)
    throw ValidationError("combined_loss: contrastive term needs a pool");
  if (pool && pool->batch != batch)
    throw ValidationError("combined_loss: pool batch mismatch");

  CombinedLossResult out;
  out.grad_logits.resize(batch, probs.cols());
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const CorrectedCeResult ce =
        adversary_aware_ce(probs.row(i).transpose(), targets.row(i).transpose(), m);
    out.breakdown.classification += ce.value * inv_batch;
    out.grad_logits.row(i) = ce.grad_logits.transpose() * inv_batch;
  }

  if (lambda > 0.0) {
    const BatchContrastiveResult con = contrastive_batch(*pool, tau);
    out.breakdown.contrastive = con.value;
    out.breakdown.skipped_queries = con.skipped_queries;
    out.grad_embeddings = lambda * con.grad_queries;
  }
  out.breakdown.combined =
      out.breakdown.classification + lambda * out.breakdown.contrastive;
  return out;
}

}  // namespace rivalpll
