#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rivalpll/atm.hpp"
#include "rivalpll/losses.hpp"
#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"
#include "rivalpll/transition.hpp"

using namespace rivalpll;

namespace {

Eigen::VectorXd random_simplex(int n, std::uint64_t seed) {
  const rng::Key key(seed, rng::Stream::kGeneric);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = -std::log(key.with(i).uniform_open());
  return v / v.sum();
}

Eigen::MatrixXd random_unit_rows(int rows, int dim, std::uint64_t seed) {
  const rng::Key key(seed, rng::Stream::kGeneric);
  Eigen::MatrixXd m(rows, dim);
  std::uint64_t draw = 0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < dim; ++j) m(i, j) = key.with(draw++).gaussian();
    m.row(i).normalize();
  }
  return m;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("identity correction reduces to cross entropy") {
  const int c = 4;
  const Eigen::VectorXd f = random_simplex(c, 1);
  const Eigen::VectorXd t = random_simplex(c, 2);
  const CorrectedCeResult res =
      adversary_aware_ce(f, t, AdversaryAwareMatrix::identity(c));

  double expected = 0.0;
  for (int i = 0; i < c; ++i) expected -= t[i] * std::log(f[i]);
  CHECK(res.value == doctest::Approx(expected).epsilon(1e-14));

  // with M = I the logit gradient is the softmax classic f - t
  CHECK((res.grad_logits - (f - t)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("corrected mass worked example") {
  Eigen::VectorXd f(3);
  f << 0.5, 0.3, 0.2;
  Eigen::VectorXd t = Eigen::VectorXd::Zero(3);
  t[0] = 1.0;
  const AdversaryAwareMatrix m =
      adversary_aware_matrix(build_rival_matrix(3, 2, 0.5));
  const CorrectedCeResult res = adversary_aware_ce(f, t, m);
  // row 0 of the corrected output: 0.5 + 0.5*0.3 + 0.5*0.2 = 0.75
  CHECK(res.value == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
}

TEST_CASE("corrected ce gradient matches finite differences over logits") {
  const int c = 5;
  const rng::Key key(7, rng::Stream::kGeneric);
  Eigen::VectorXd logits(c);
  for (int i = 0; i < c; ++i) logits[i] = 2.0 * key.with(i).gaussian();
  const Eigen::VectorXd t = random_simplex(c, 8);
  const AdversaryAwareMatrix m =
      adversary_aware_matrix(build_rival_matrix(c, 2, 0.5));

  const CorrectedCeResult res = adversary_aware_ce(softmax(logits), t, m);
  const double h = 1e-6;
  for (int i = 0; i < c; ++i) {
    Eigen::VectorXd p = logits, q = logits;
    p[i] += h;
    q[i] -= h;
    const double fd = (adversary_aware_ce(softmax(p), t, m).value -
                       adversary_aware_ce(softmax(q), t, m).value) /
                      (2.0 * h);
    CHECK(std::abs(fd - res.grad_logits[i]) /
              std::max({1.0, std::abs(fd), std::abs(res.grad_logits[i])}) <
          1e-6);
  }
}

TEST_CASE("corrected ce rejects malformed corrections") {
  Eigen::MatrixXd big = Eigen::MatrixXd::Constant(3, 3, 3.0);
  big.diagonal().setZero();
  const AdversaryAwareMatrix m =
      adversary_aware_matrix(RivalMatrix::unchecked(big));
  // (M f)_i = f_i + 3 (1 - f_i) = 3 - 2 f_i > 2 for any simplex coordinate
  const Eigen::VectorXd f = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  CHECK_THROWS_AS(adversary_aware_ce(f, random_simplex(3, 10), m),
                  ValidationError);
}

TEST_CASE("corrected ce validates distributions") {
  const AdversaryAwareMatrix m = AdversaryAwareMatrix::identity(3);
  Eigen::VectorXd f = random_simplex(3, 11);
  Eigen::VectorXd bad = f * 1.5;
  CHECK_THROWS_AS(adversary_aware_ce(bad, random_simplex(3, 12), m),
                  ValidationError);
  CHECK_THROWS_AS(adversary_aware_ce(f, bad, m), ValidationError);
  Eigen::VectorXd negative(3);
  negative << -0.2, 0.6, 0.6;
  CHECK_THROWS_AS(adversary_aware_ce(negative, f, m), ValidationError);
}

TEST_CASE("floored coordinates contribute no gradient") {
  Eigen::VectorXd f(3);
  f << 1.0 - 2e-13, 1e-13, 1e-13;
  Eigen::VectorXd t(3);
  t << 0.5, 0.5, 0.0;
  const CorrectedCeResult res =
      adversary_aware_ce(f, t, AdversaryAwareMatrix::identity(3));
  CHECK(std::isfinite(res.value));
  CHECK(res.value >= -std::log(1e-12) * 0.5 * 0.999);  // floor engaged
  CHECK(res.grad_probs[1] == 0.0);
  CHECK(res.grad_probs[0] != 0.0);
}

TEST_CASE("uniform similarities price the pool size") {
  const int d = 4;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  z[0] = 1.0;
  for (const int pool_rows : {2, 5, 9}) {
    const Eigen::MatrixXd pool = z.transpose().replicate(pool_rows, 1);
    const ContrastiveResult res =
        contrastive_loss(z, std::vector<int>{0}, pool, 0.07);
    CHECK(res.value ==
          doctest::Approx(std::log(pool_rows)).epsilon(1e-12));
  }
}

TEST_CASE("pulling the positive closer lowers the loss") {
  const int d = 3;
  Eigen::MatrixXd pool(3, d);
  pool << 1, 0, 0,
          0, 1, 0,
          0, 0, 1;
  Eigen::VectorXd near(d), far(d);
  near << 0.9, 0.3589, 0.0;
  far << 0.3589, 0.9, 0.0;
  near.normalize();
  far.normalize();
  const std::vector<int> positives{0};
  const double close_value =
      contrastive_loss(near, positives, pool, 0.07).value;
  const double far_value = contrastive_loss(far, positives, pool, 0.07).value;
  CHECK(close_value < far_value);
}

TEST_CASE("empty positive set is skipped") {
  const Eigen::MatrixXd pool = random_unit_rows(4, 3, 20);
  const Eigen::VectorXd u = random_unit_rows(1, 3, 21).row(0).transpose();
  const ContrastiveResult res = contrastive_loss(u, {}, pool, 0.07);
  CHECK(res.skipped);
  CHECK(res.value == 0.0);
  CHECK(res.grad_query.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("batch contrastive matches a straight-line recomputation") {
  const int b = 2, d = 4;
  const double tau = 0.07;
  ContrastPool pool;
  pool.embeddings = random_unit_rows(2 * b + 2, d, 22);
  pool.labels = {0, 1, 0, 1, 0, 1};
  pool.batch = b;

  const BatchContrastiveResult res = contrastive_batch(pool, tau);

  double expected = 0.0;
  int active = 0;
  for (int q = 0; q < b; ++q) {
    std::vector<int> pos;
    for (int r = 0; r < pool.rows(); ++r)
      if (r != q && pool.labels[r] == pool.labels[q]) pos.push_back(r);
    if (pos.empty()) continue;
    ++active;
    double denom = 0.0;
    for (int r = 0; r < pool.rows(); ++r) {
      if (r == q) continue;
      denom += std::exp(pool.embeddings.row(q).dot(pool.embeddings.row(r)) / tau);
    }
    double mean_pos = 0.0;
    for (int r : pos)
      mean_pos += std::log(
          std::exp(pool.embeddings.row(q).dot(pool.embeddings.row(r)) / tau) /
          denom);
    expected -= mean_pos / static_cast<double>(pos.size());
  }
  expected /= active;

  CHECK(res.active_queries == active);
  CHECK(res.value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("single query helper agrees with the batch form") {
  const int b = 1, d = 5;
  const double tau = 0.1;
  ContrastPool pool;
  pool.embeddings = random_unit_rows(5, d, 23);
  pool.labels = {2, 0, 2, 2, 1};
  pool.batch = b;

  std::vector<int> positives;
  for (int r = 1; r < pool.rows(); ++r)
    if (pool.labels[r] == pool.labels[0]) positives.push_back(r);

  // the single-query form scores against every non-self pool row
  Eigen::MatrixXd others(pool.rows() - 1, d);
  std::vector<int> remap;
  for (int r = 1; r < pool.rows(); ++r) {
    others.row(r - 1) = pool.embeddings.row(r);
    if (pool.labels[r] == pool.labels[0]) remap.push_back(r - 1);
  }
  const ContrastiveResult single = contrastive_loss(
      pool.embeddings.row(0).transpose(), remap, others, tau);
  const BatchContrastiveResult batch = contrastive_batch(pool, tau);
  CHECK(single.value == doctest::Approx(batch.value).epsilon(1e-12));
}

TEST_CASE("batch contrastive gradients match finite differences") {
  const int b = 3, d = 4;
  const double tau = 0.07;
  ContrastPool pool;
  pool.embeddings = random_unit_rows(2 * b + 2, d, 24);
  pool.labels = {0, 1, 0, 0, 1, 0, 1, 0};
  pool.batch = b;

  const BatchContrastiveResult res = contrastive_batch(pool, tau);
  const double h = 1e-6;
  for (int q = 0; q < b; ++q)
    for (int j = 0; j < d; ++j) {
      ContrastPool plus = pool, minus = pool;
      plus.embeddings(q, j) += h;
      minus.embeddings(q, j) -= h;
      const double fd =
          (contrastive_batch(plus, tau).value - contrastive_batch(minus, tau).value) /
          (2.0 * h);
      CHECK(std::abs(fd - res.grad_queries(q, j)) /
                std::max({1.0, std::abs(fd), std::abs(res.grad_queries(q, j))}) <
            1e-6);
    }
}

TEST_CASE("combined loss endpoints and linearity") {
  const int b = 4, c = 3, d = 4;
  Eigen::MatrixXd probs(b, c);
  Eigen::MatrixXd targets(b, c);
  for (int i = 0; i < b; ++i) {
    probs.row(i) = random_simplex(c, 30 + i).transpose();
    targets.row(i) = random_simplex(c, 40 + i).transpose();
  }
  const AdversaryAwareMatrix m =
      adversary_aware_matrix(build_rival_matrix(c, 2, 0.5));

  ContrastPool pool;
  pool.embeddings = random_unit_rows(2 * b, d, 50);
  pool.labels = {0, 1, 0, 2, 0, 1, 0, 2};
  pool.batch = b;

  const CombinedLossResult zero =
      combined_loss(probs, targets, m, nullptr, 0.0, 0.07);
  CHECK(zero.breakdown.combined == zero.breakdown.classification);
  CHECK(zero.breakdown.contrastive == 0.0);
  CHECK(zero.grad_embeddings.size() == 0);

  const CombinedLossResult one =
      combined_loss(probs, targets, m, &pool, 1.0, 0.07);
  const CombinedLossResult two =
      combined_loss(probs, targets, m, &pool, 2.0, 0.07);
  CHECK(two.breakdown.combined - zero.breakdown.combined ==
        doctest::Approx(2.0 * (one.breakdown.combined - zero.breakdown.combined))
            .epsilon(1e-12));
  CHECK((two.grad_embeddings - 2.0 * one.grad_embeddings).cwiseAbs().maxCoeff() <=
        1e-12);

  // classification part is the batch mean of the per-row corrected loss
  double mean_ce = 0.0;
  for (int i = 0; i < b; ++i)
    mean_ce += adversary_aware_ce(probs.row(i).transpose(),
                                  targets.row(i).transpose(), m)
                   .value;
  mean_ce /= b;
  CHECK(one.breakdown.classification == doctest::Approx(mean_ce).epsilon(1e-12));

  CHECK_THROWS_AS(combined_loss(probs, targets, m, nullptr, 0.5, 0.07),
                  ValidationError);
}

TEST_CASE("combined loss counts lonely queries") {
  const int b = 3, c = 3, d = 4;
  Eigen::MatrixXd probs(b, c), targets(b, c);
  for (int i = 0; i < b; ++i) {
    probs.row(i) = random_simplex(c, 60 + i).transpose();
    targets.row(i) = random_simplex(c, 70 + i).transpose();
  }
  ContrastPool pool;
  pool.embeddings = random_unit_rows(2 * b, d, 80);
  pool.labels = {0, 0, 1, 2, 0, 2};  // query 2's label 1 appears nowhere else
  pool.batch = b;

  const CombinedLossResult res = combined_loss(
      probs, targets, AdversaryAwareMatrix::identity(c), &pool, 0.5, 0.07);
  CHECK(res.breakdown.skipped_queries == 1);
  // the skipped row still serves as a pool row for the active queries,
  // so it keeps its pool-role gradient
  CHECK(std::isfinite(res.breakdown.combined));
}

TEST_CASE("all queries lonely yields a zero contrastive term") {
  const int b = 3, c = 3, d = 4;
  Eigen::MatrixXd probs(b, c), targets(b, c);
  for (int i = 0; i < b; ++i) {
    probs.row(i) = random_simplex(c, 100 + i).transpose();
    targets.row(i) = random_simplex(c, 110 + i).transpose();
  }
  ContrastPool pool;
  pool.embeddings = random_unit_rows(2 * b, d, 120);
  pool.labels = {0, 1, 2, 3, 4, 5};
  pool.batch = b;

  const CombinedLossResult res = combined_loss(
      probs, targets, AdversaryAwareMatrix::identity(c), &pool, 0.5, 0.07);
  CHECK(res.breakdown.skipped_queries == b);
  CHECK(res.breakdown.contrastive == 0.0);
  CHECK(res.breakdown.combined == res.breakdown.classification);
  CHECK(res.grad_embeddings.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("invariance to pool row order") {
  const int d = 4;
  const Eigen::MatrixXd pool = random_unit_rows(5, d, 90);
  const Eigen::VectorXd u = random_unit_rows(1, d, 91).row(0).transpose();
  const double v1 = contrastive_loss(u, {0, 3}, pool, 0.07).value;

  Eigen::MatrixXd shuffled(5, d);
  const int order[5] = {4, 0, 2, 1, 3};
  for (int r = 0; r < 5; ++r) shuffled.row(r) = pool.row(order[r]);
  // positions of old rows 0 and 3 in the shuffled pool
  const double v2 = contrastive_loss(u, {1, 4}, shuffled, 0.07).value;
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-13));
}

}  // TEST_SUITE
