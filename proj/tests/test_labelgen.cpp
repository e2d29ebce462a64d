#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rivalpll/data.hpp"
#include "rivalpll/labelgen.hpp"
#include "rivalpll/numeric.hpp"

using namespace rivalpll;

namespace {

CleanDataset balanced_dataset(int n, int c, int d = 2) {
  CleanDataset ds;
  ds.label_count = c;
  ds.features = Eigen::MatrixXd::Zero(n, d);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    ds.labels[i] = i % c;
    ds.features(i, 0) = static_cast<double>(i);
  }
  return ds;
}

FlipProfile uniform_profile(double q, double perturbation = 0.0) {
  FlipProfile p;
  p.base_rate = q;
  p.perturbation = perturbation;
  return p;
}

}  // namespace

TEST_SUITE("labelgen") {

TEST_CASE("candidate set bit operations") {
  CandidateSet s(5);
  CHECK(s.cardinality() == 0);
  s.add(0);
  s.add(3);
  s.add(3);
  CHECK(s.cardinality() == 2);
  CHECK(s.contains(0));
  CHECK(s.contains(3));
  CHECK_FALSE(s.contains(1));
  CHECK_FALSE(s.is_full());
  CHECK(s.low_bits() == 0b01001u);
  CHECK_THROWS_AS(s.add(5), ValidationError);
  CHECK_THROWS_AS(s.contains(-1), ValidationError);

  CandidateSet full(3);
  for (int b = 0; b < 3; ++b) full.add(b);
  CHECK(full.is_full());
}

TEST_CASE("candidate set hex round trip") {
  CandidateSet s(12);
  s.add(0);
  s.add(4);
  s.add(11);
  const CandidateSet back = CandidateSet::from_hex(s.to_hex(), 12);
  CHECK(back == s);

  CHECK(CandidateSet::from_hex("1", 3).contains(0));
  CHECK_THROWS_AS(CandidateSet::from_hex("ff", 3), ValidationError);  // stray bits
  CHECK_THROWS_AS(CandidateSet::from_hex("zz", 3), ValidationError);
  CHECK_THROWS_AS(CandidateSet::from_hex("", 3), ValidationError);
}

TEST_CASE("standard generation with zero rate is singleton") {
  const CleanDataset clean = balanced_dataset(300, 4);
  const PllDataset pll = generate_standard(clean, uniform_profile(0.0), 1);
  pll.validate();
  CHECK(pll.mode == CorruptionMode::kStandard);
  for (int i = 0; i < pll.size(); ++i) {
    CHECK(pll.candidate_sets[i].cardinality() == 1);
    CHECK(pll.candidate_sets[i].contains(clean.labels[i]));
    CHECK(pll.rival_labels[i] == -1);
  }
  const GenerationReport report = audit_generation(pll);
  CHECK(report.mean_cardinality == 1.0);
  CHECK(report.true_label_always_present);
  CHECK(report.full_set_count == 0);
}

TEST_CASE("standard generation inclusion rates match the flip rate") {
  const int n = 20000, c = 10;
  const double q = 0.5;
  const CleanDataset clean = balanced_dataset(n, c);
  const PllDataset pll = generate_standard(clean, uniform_profile(q, 0.02), 2);
  const GenerationReport report = audit_generation(pll);
  const double per_class = static_cast<double>(n) / c;
  const double bound = 3.0 * std::sqrt(q * (1.0 - q) / per_class);
  for (int y = 0; y < c; ++y) {
    CHECK(report.inclusion(y, y) == 1.0);
    for (int b = 0; b < c; ++b)
      if (b != y) CHECK(std::abs(report.inclusion(y, b) - q) <= bound);
  }
}

TEST_CASE("deterministic rival with zero rate gives pairs") {
  Eigen::MatrixXd t(3, 3);
  t << 0, 0, 1,
       0, 0, 1,
       0, 1, 0;
  const RivalMatrix rival(t);
  const CleanDataset clean = balanced_dataset(99, 3);
  const PllDataset pll =
      generate_adversary_aware(clean, rival, uniform_profile(0.0), 3);
  pll.validate();
  CHECK(pll.mode == CorruptionMode::kAdversaryAware);
  for (int i = 0; i < pll.size(); ++i) {
    const int y = clean.labels[i];
    const int expected_rival = (y == 2) ? 1 : 2;
    CHECK(pll.rival_labels[i] == expected_rival);
    CHECK(pll.candidate_sets[i].cardinality() == 2);
    CHECK(pll.candidate_sets[i].contains(y));
    CHECK(pll.candidate_sets[i].contains(expected_rival));
  }
  CHECK(audit_generation(pll).mean_cardinality == 2.0);
}

TEST_CASE("rival frequencies follow the transition row") {
  const int n = 30000;
  const RivalMatrix rival = build_rival_matrix(3, 2, 0.5);
  const CleanDataset clean = balanced_dataset(n, 3);
  const PllDataset pll =
      generate_adversary_aware(clean, rival, uniform_profile(0.0), 4);
  Eigen::Vector3d rival_counts = Eigen::Vector3d::Zero();
  double class0 = 0.0;
  for (int i = 0; i < n; ++i) {
    if (clean.labels[i] != 0) continue;
    class0 += 1.0;
    rival_counts[pll.rival_labels[i]] += 1.0;
  }
  CHECK(rival_counts[0] == 0.0);
  const double bound = 3.0 * std::sqrt(0.25 / class0);
  CHECK(std::abs(rival_counts[1] / class0 - 0.5) <= bound);
  CHECK(std::abs(rival_counts[2] / class0 - 0.5) <= bound);
}

TEST_CASE("adversary rejects rows that cannot be sampled") {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(3, 3);
  t(0, 1) = 1.0;  // rows 1 and 2 all zero
  const RivalMatrix rival = RivalMatrix::unchecked(t);
  const CleanDataset clean = balanced_dataset(9, 3);
  CHECK_THROWS_AS(
      generate_adversary_aware(clean, rival, uniform_profile(0.0), 1),
      ValidationError);
}

TEST_CASE("generation rejects saturated flip rates") {
  const CleanDataset clean = balanced_dataset(9, 3);
  CHECK_THROWS_AS(generate_standard(clean, uniform_profile(1.0), 1),
                  ValidationError);
}

TEST_CASE("ambiguity verdicts") {
  const AmbiguityReport high = check_ambiguity(uniform_profile(0.999, 0.02), 5);
  CHECK(high.ok);
  CHECK(high.max_rate < 1.0);

  const AmbiguityReport saturated = check_ambiguity(uniform_profile(1.0), 5);
  CHECK_FALSE(saturated.ok);
  CHECK(saturated.max_rate >= 1.0);

  const RivalMatrix rival = build_rival_matrix(4, 2, 0.5);
  const AmbiguityReport with_rival =
      check_ambiguity(uniform_profile(0.5, 0.02), 4, &rival);
  CHECK(with_rival.ok);
}

TEST_CASE("same seed reproduces the dataset exactly") {
  const RivalMatrix rival = build_rival_matrix(5, 2, 0.5);
  const CleanDataset clean = balanced_dataset(400, 5);
  const PllDataset a =
      generate_adversary_aware(clean, rival, uniform_profile(0.3, 0.02), 11);
  const PllDataset b =
      generate_adversary_aware(clean, rival, uniform_profile(0.3, 0.02), 11);
  const PllDataset c =
      generate_adversary_aware(clean, rival, uniform_profile(0.3, 0.02), 12);
  CHECK(a.candidate_sets == b.candidate_sets);
  CHECK(a.rival_labels == b.rival_labels);
  CHECK(a.candidate_sets != c.candidate_sets);
}

TEST_CASE("realized flip rates stay inside the clip") {
  const FlipProfile profile = uniform_profile(0.999, 0.02);
  double max_seen = 0.0;
  for (int i = 0; i < 500; ++i)
    for (int b = 0; b < 4; ++b)
      max_seen = std::max(max_seen, realized_flip_rate(profile, 7, i, b));
  CHECK(max_seen < 1.0);
  CHECK(max_seen <= 1.0 - 1e-6);

  // zero perturbation keeps the rate exact
  CHECK(realized_flip_rate(uniform_profile(0.25), 7, 3, 1) == 0.25);
}

TEST_CASE("pll csv round trip") {
  const RivalMatrix rival = build_rival_matrix(4, 3, 1.0 / 3.0);
  const GaussianMixtureSpec spec = GaussianMixtureSpec::separated(4, 3, 3.0);
  const CleanDataset clean = sample_mixture(spec, 50, 21);
  const PllDataset pll =
      generate_adversary_aware(clean, rival, uniform_profile(0.2, 0.02), 21);
  const std::string path = "/tmp/rivalpll_test_pll_roundtrip.csv";
  save_pll_csv(pll, path);
  const PllDataset back = load_pll_csv(path);
  CHECK(back.mode == pll.mode);
  CHECK(back.candidate_sets == pll.candidate_sets);
  CHECK(back.rival_labels == pll.rival_labels);
  CHECK(back.clean.labels == pll.clean.labels);
  CHECK(back.clean.features.cwiseEqual(pll.clean.features).all());
  back.validate();
  std::remove(path.c_str());
}

TEST_CASE("pll csv loader reports bad rows") {
  const std::string path = "/tmp/rivalpll_test_pll_malformed.csv";
  {
    FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f);
    // candidate mask lacks the true label on the data row
    std::fputs(
        "# c=3 mode=standard\nid,true_label,rival_label,candidate_mask_hex,f0\n"
        "0,1,-1,4,0.5\n",
        f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_pll_csv(path), std::exception);
  std::remove(path.c_str());
}

}  // TEST_SUITE
