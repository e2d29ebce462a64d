#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rivalpll/atm.hpp"
#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"

using namespace rivalpll;

namespace {

Eigen::VectorXd random_unit(int dim, std::uint64_t seed) {
  const rng::Key key(seed, rng::Stream::kGeneric);
  Eigen::VectorXd v(dim);
  for (int j = 0; j < dim; ++j) v[j] = key.with(j).gaussian();
  return v / v.norm();
}

Eigen::MatrixXd random_unit_rows(int rows, int dim, std::uint64_t seed) {
  Eigen::MatrixXd m(rows, dim);
  for (int i = 0; i < rows; ++i)
    m.row(i) = random_unit(dim, seed * 1000 + static_cast<std::uint64_t>(i))
                   .transpose();
  return m;
}

CandidateSet set_of(std::initializer_list<int> labels, int c) {
  CandidateSet s(c);
  for (int b : labels) s.add(b);
  return s;
}

}  // namespace

TEST_SUITE("atm") {

TEST_CASE("margins for two prototypes collapse to one") {
  Eigen::MatrixXd v(2, 3);
  v << 1, 0, 0,
       0, 1, 0;
  const Eigen::MatrixXd m = compute_margins(v);
  CHECK(m(0, 0) == 0.0);
  CHECK(m(1, 1) == 0.0);
  CHECK(m(0, 1) == 1.0);
  CHECK(m(1, 0) == 1.0);
}

TEST_CASE("margins for orthonormal prototypes are uniform") {
  const Eigen::MatrixXd m = compute_margins(Eigen::MatrixXd::Identity(3, 3));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(m(i, j) == (i == j ? 0.0 : doctest::Approx(0.5).epsilon(1e-12)));
}

TEST_CASE("margins weight aligned prototypes down") {
  Eigen::MatrixXd v(3, 2);
  v << 1, 0,
       1, 0,
       -1, 0;
  const Eigen::MatrixXd m = compute_margins(v);
  const double expected = std::exp(-1.0) / (std::exp(-1.0) + std::exp(1.0));
  CHECK(m(0, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(m(0, 2) == doctest::Approx(1.0 - expected).epsilon(1e-12));
  CHECK(m.row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("margins reject non-unit rows") {
  Eigen::MatrixXd v(2, 2);
  v << 2, 0,
       0, 1;
  CHECK_THROWS_AS(compute_margins(v), ValidationError);
}

TEST_CASE("prototype bank init is unit and margin-consistent") {
  const PrototypeBank bank(5, 8, 42);
  for (int i = 0; i < 5; ++i)
    CHECK(std::abs(bank.vectors().row(i).norm() - 1.0) <= 1e-9);
  CHECK((bank.margins() - compute_margins(bank.vectors())).cwiseAbs().maxCoeff() <=
        1e-15);
}

TEST_CASE("tiny step leaves the prototype almost unchanged") {
  PrototypeBank bank(3, 4, 1);
  const Eigen::VectorXd before = bank.vectors().row(0).transpose();
  CHECK(bank.update(random_unit(4, 9), 0, 1e-8, 0.01));
  CHECK((bank.vectors().row(0).transpose() - before).norm() <= 1e-7);
}

TEST_CASE("collinear update without repulsion is a fixed point") {
  PrototypeBank bank(3, 4, 2);
  const Eigen::VectorXd v0 = bank.vectors().row(0).transpose();
  CHECK(bank.update(v0, 0, 0.1, 0.0));
  CHECK((bank.vectors().row(0).transpose() - v0).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("update matches a straight-line recomputation") {
  const int k = 3, d = 5;
  const Eigen::MatrixXd v = random_unit_rows(k, d, 7);
  PrototypeBank bank(v);
  const Eigen::VectorXd u = random_unit(d, 77);
  const double alpha = 0.1, beta = 0.01;
  const int target = 1;

  // margins from scratch
  Eigen::MatrixXd margins(k, k);
  for (int i = 0; i < k; ++i) {
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      margins(i, j) = (i == j) ? 0.0 : std::exp(-v.row(i).dot(v.row(j)));
      total += margins(i, j);
    }
    for (int j = 0; j < k; ++j) margins(i, j) /= total;
  }
  Eigen::VectorXd g = u;
  for (int j = 0; j < k; ++j)
    if (j != target) g -= beta * margins(target, j) * v.row(j).transpose();
  Eigen::VectorXd expected =
      std::sqrt(1.0 - alpha * alpha) * v.row(target).transpose() +
      alpha * g / g.norm();
  expected /= expected.norm();

  CHECK(bank.update(u, target, alpha, beta));
  CHECK((bank.vectors().row(target).transpose() - expected)
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
  CHECK((bank.margins() - compute_margins(bank.vectors())).cwiseAbs().maxCoeff() <=
        1e-15);
  const Eigen::VectorXd untouched = v.row(2).transpose();
  CHECK((bank.vectors().row(2).transpose() - untouched).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("degenerate update is skipped and counted") {
  const Eigen::MatrixXd v = random_unit_rows(3, 4, 5);
  PrototypeBank bank(v);
  // engineer g = u - beta * s = 0 by aiming u along the repulsion sum
  Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
  for (int j = 1; j < 3; ++j)
    s += bank.margins()(0, j) * v.row(j).transpose();
  const Eigen::VectorXd u = s / s.norm();
  const double beta = 1.0 / s.norm();

  CHECK_FALSE(bank.update(u, 0, 0.1, beta));
  CHECK(bank.skipped_updates() == 1);
  CHECK((bank.vectors() - v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("update validates its arguments") {
  PrototypeBank bank(3, 4, 8);
  const Eigen::VectorXd u = random_unit(4, 3);
  CHECK_THROWS_AS(bank.update(u * 2.0, 0, 0.1, 0.01), ValidationError);
  CHECK_THROWS_AS(bank.update(u, 3, 0.1, 0.01), ValidationError);
  CHECK_THROWS_AS(bank.update(u, 0, 0.0, 0.01), ValidationError);
  CHECK_THROWS_AS(bank.update(u, 0, 1.0, 0.01), ValidationError);
  CHECK_THROWS_AS(bank.update(u, 0, 0.1, -0.5), ValidationError);
  CHECK_THROWS_AS(bank.update(random_unit(5, 4), 0, 0.1, 0.01), ValidationError);
}

TEST_CASE("long random update runs keep the invariants") {
  PrototypeBank bank(4, 6, 10);
  for (int step = 0; step < 1000; ++step) {
    const rng::Key key(11, rng::Stream::kGeneric);
    const int cls = static_cast<int>(key.with(step).with(0).uniform() * 4);
    bank.update(random_unit(6, 5000 + step), cls, 0.1, 0.01);
  }
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(bank.vectors().row(i).norm() - 1.0) <= 1e-9);
    CHECK(std::abs(bank.margins().row(i).sum() - 1.0) <= 1e-9);
    CHECK(bank.margins()(i, i) == 0.0);
  }
  CHECK((bank.margins() - compute_margins(bank.vectors())).cwiseAbs().maxCoeff() <=
        1e-12);
}

TEST_CASE("pseudo labels start uniform and stay on the simplex") {
  PseudoLabelStore store(10, 4, 0.9);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd row = store.row(i);
    for (int j = 0; j < 4; ++j) CHECK(row[j] == 0.25);
  }

  PrototypeBank bank(4, 6, 12);
  for (int step = 0; step < 200; ++step) {
    const int i = step % 10;
    store.update(i, random_unit(6, 900 + step), bank, set_of({0, 2, 3}, 4));
    const Eigen::VectorXd row = store.row(i);
    CHECK(std::abs(row.sum() - 1.0) <= 1e-9);
    CHECK(row.minCoeff() >= 0.0);
  }
}

TEST_CASE("frozen and instant momentum endpoints") {
  const int c = 3, d = 4;
  const PrototypeBank bank(c, d, 14);
  const Eigen::VectorXd u = random_unit(d, 15);
  const CandidateSet all = set_of({0, 1, 2}, c);
  const int winner = bank.restricted_argmax(u, all);

  PseudoLabelStore frozen(2, c, 1.0);
  frozen.update(0, u, bank, all);
  CHECK((frozen.row(0).array() == 1.0 / 3.0).all());

  PseudoLabelStore instant(2, c, 0.0);
  instant.update(0, u, bank, all);
  for (int j = 0; j < c; ++j)
    CHECK(instant.row(0)[j] == (j == winner ? 1.0 : 0.0));
}

TEST_CASE("singleton candidate sets converge geometrically") {
  const int c = 3;
  const double phi = 0.8;
  PseudoLabelStore store(1, c, phi);
  const PrototypeBank bank(c, 4, 16);
  const CandidateSet singleton = set_of({1}, c);
  const int steps = 12;
  for (int t = 0; t < steps; ++t)
    store.update(0, random_unit(4, 40 + t), bank, singleton);
  const double decayed = std::pow(phi, steps);
  const Eigen::VectorXd row = store.row(0);
  CHECK(row[1] ==
        doctest::Approx(decayed / c + (1.0 - decayed)).epsilon(1e-12));
  CHECK(row[0] == doctest::Approx(decayed / c).epsilon(1e-12));
  CHECK(row[2] == doctest::Approx(decayed / c).epsilon(1e-12));
}

TEST_CASE("restricted prediction") {
  Eigen::VectorXd f(3);
  f << 0.1, 0.2, 0.7;
  CHECK(predict_label(f, set_of({0, 1}, 3)) == 1);
  CHECK(predict_label(f, set_of({0}, 3)) == 0);
  CHECK(predict_label(Eigen::VectorXd::Constant(6, 1.0 / 6), set_of({2, 5}, 6)) ==
        2);
  CHECK_THROWS_AS(predict_label(f, CandidateSet(3)), ValidationError);
}

TEST_CASE("queue evicts oldest entries first") {
  EmbeddingQueue queue(4, 3);
  CHECK(queue.size() == 0);
  queue.push(Eigen::MatrixXd(0, 3), {});
  CHECK(queue.size() == 0);

  Eigen::MatrixXd keys(6, 3);
  std::vector<int> labels(6);
  for (int i = 0; i < 6; ++i) {
    keys.row(i) = random_unit(3, 60 + i).transpose();
    labels[i] = i;
  }
  queue.push(keys.topRows(2), {labels[0], labels[1]});
  queue.push(keys.middleRows(2, 2), {labels[2], labels[3]});
  queue.push(keys.bottomRows(2), {labels[4], labels[5]});
  CHECK(queue.size() == 4);
  CHECK(queue.labels() == std::vector<int>{2, 3, 4, 5});
  CHECK((queue.embeddings() - keys.bottomRows(4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("queue rejects non-unit keys before touching state") {
  EmbeddingQueue queue(4, 3);
  Eigen::MatrixXd good = random_unit_rows(1, 3, 70);
  queue.push(good, {1});

  Eigen::MatrixXd mixed(2, 3);
  mixed.row(0) = random_unit(3, 71).transpose();
  mixed.row(1) = 2.0 * random_unit(3, 72).transpose();
  CHECK_THROWS_AS(queue.push(mixed, {0, 1}), ValidationError);
  CHECK(queue.size() == 1);
  CHECK(queue.labels() == std::vector<int>{1});
}

TEST_CASE("contrast pool stacks batch views then queue") {
  const int b = 3, d = 4;
  const Eigen::MatrixXd queries = random_unit_rows(b, d, 80);
  const Eigen::MatrixXd keys = random_unit_rows(b, d, 81);
  EmbeddingQueue queue(8, d);
  queue.push(random_unit_rows(2, d, 82), {7, 9});

  const ContrastPool pool =
      build_contrast_pool(queries, keys, {0, 1, 0}, queue);
  CHECK(pool.batch == b);
  CHECK(pool.rows() == 2 * b + 2);
  CHECK((pool.embeddings.topRows(b) - queries).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pool.embeddings.middleRows(b, b) - keys).cwiseAbs().maxCoeff() == 0.0);
  CHECK(pool.labels == std::vector<int>{0, 1, 0, 0, 1, 0, 7, 9});
}

TEST_CASE("positive sets match a brute-force filter") {
  const rng::Key key(99, rng::Stream::kGeneric);
  std::uint64_t draw = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int b = 1 + static_cast<int>(key.with(draw++).uniform() * 6);
    const int queued = static_cast<int>(key.with(draw++).uniform() * 5);
    const int d = 3;
    EmbeddingQueue queue(8, d);
    if (queued > 0) {
      std::vector<int> queue_labels(queued);
      for (int i = 0; i < queued; ++i)
        queue_labels[i] = static_cast<int>(key.with(draw++).uniform() * 3);
      queue.push(random_unit_rows(queued, d, 7000 + 10 * trial), queue_labels);
    }
    std::vector<int> preds(b);
    for (int i = 0; i < b; ++i)
      preds[i] = static_cast<int>(key.with(draw++).uniform() * 3);

    const ContrastPool pool = build_contrast_pool(
        random_unit_rows(b, d, 8000 + 10 * trial),
        random_unit_rows(b, d, 9000 + 10 * trial), preds, queue);

    for (int q = 0; q < b; ++q) {
      std::vector<int> expected;
      for (int r = 0; r < pool.rows(); ++r)
        if (r != q && pool.labels[r] == pool.labels[q]) expected.push_back(r);
      CHECK(build_positive_set(pool, q) == expected);
    }
  }
}

TEST_CASE("positive set edge cases") {
  const int d = 3;
  EmbeddingQueue empty_queue(4, d);

  // all predictions distinct: only the other view of the same instance matches
  const ContrastPool distinct = build_contrast_pool(
      random_unit_rows(3, d, 101), random_unit_rows(3, d, 102), {0, 1, 2},
      empty_queue);
  CHECK(build_positive_set(distinct, 0) == std::vector<int>{3});

  // all predictions equal with an empty queue: both views of everyone else
  const int b = 4;
  const ContrastPool shared = build_contrast_pool(
      random_unit_rows(b, d, 103), random_unit_rows(b, d, 104), {1, 1, 1, 1},
      empty_queue);
  CHECK(static_cast<int>(build_positive_set(shared, 2).size()) == 2 * b - 1);
}

}  // TEST_SUITE
