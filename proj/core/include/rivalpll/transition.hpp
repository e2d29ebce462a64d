#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rivalpll/errors.hpp"

namespace rivalpll {

// Enumeration over candidate sets is 2^c - 2 rows; keep it desk-sized.
inline constexpr int kMaxEnumerableLabels = 20;
inline constexpr int kMinLabels = 3;

// Class-conditional rival distribution P(Y' = y' | Y = y).
// Invariants: square, c >= 3, zero diagonal, entries in [0, 1],
// rows sum to 1 within 1e-9.
class RivalMatrix {
 public:
  explicit RivalMatrix(Eigen::MatrixXd entries);

  // Bypasses validation. For verification fixtures and degenerate regimes
  // (e.g. the all-zero matrix standing in for "no rival") only.
  static RivalMatrix unchecked(Eigen::MatrixXd entries);

  int label_count() const { return static_cast<int>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  bool validated() const { return validated_; }

 private:
  RivalMatrix() = default;
  Eigen::MatrixXd entries_;
  bool validated_ = false;
};

// Cyclic-support preset: row y places `weight` on the `support_size` labels
// following y cyclically. Requires support_size in [1, c-1] and
// support_size * weight == 1 within 1e-9.
RivalMatrix build_rival_matrix(int label_count, int support_size, double weight);

// T-bar + I. Diagonal is exactly 1; off-diagonal entries are copied from the
// source, so rows of a validated source sum to 2.
class AdversaryAwareMatrix {
 public:
  explicit AdversaryAwareMatrix(const RivalMatrix& rival);
  static AdversaryAwareMatrix identity(int label_count);

  int label_count() const { return static_cast<int>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const { return entries_; }

 private:
  explicit AdversaryAwareMatrix(Eigen::MatrixXd m) : entries_(std::move(m)) {}
  Eigen::MatrixXd entries_;
};

inline AdversaryAwareMatrix adversary_aware_matrix(const RivalMatrix& rival) {
  return AdversaryAwareMatrix(rival);
}

// The generator samples a rival along row y of T-bar (true label -> rival),
// so the probability that label b shows up rides on column b. Correcting a
// prediction therefore mixes mass INTO each label: the matrix applied to
// f(x) is built on the transposed rival. With a symmetric T-bar the two
// orientations coincide.
AdversaryAwareMatrix correction_matrix(const RivalMatrix& rival);

// Bijection between row indices and candidate-set bitmasks. Masks run over
// 1 .. 2^c - 2 in ascending order (empty set and full set excluded), so
// mask_at(j) == j + 1 and index_of(m) == m - 1; both directions validate.
class CandidateSetIndex {
 public:
  explicit CandidateSetIndex(int label_count);

  int label_count() const { return label_count_; }
  std::int64_t count() const { return count_; }
  std::uint32_t mask_at(std::int64_t index) const;
  std::int64_t index_of(std::uint32_t mask) const;

 private:
  int label_count_ = 0;
  std::int64_t count_ = 0;
};

inline constexpr double kMaxFlipRate = 1.0 - 1e-6;

// Per-label false-positive rates. `per_label` overrides `base_rate` when
// nonempty. Instance-level perturbation draws U(-perturbation, +perturbation)
// around the label's rate; realized rates are clipped to [0, 1 - 1e-6].
struct FlipProfile {
  double base_rate = 0.0;
  double perturbation = 0.02;
  std::vector<double> per_label{};

  double rate(int label) const;
  Eigen::VectorXd rates(int label_count) const;
  double max_rate(int label_count) const;
  // Throws unless every rate is in [0, 1) and perturbation is in [0, 1).
  void validate(int label_count) const;
};

// P(candidate set | true label) over the 2^c - 2 proper nonempty sets,
// columns conditioned on the representable space so each sums to 1.
// Entry [j][y] is 0 exactly when y is outside set j.
Eigen::MatrixXd enumerate_q_bar(int label_count, const FlipProfile& profile);

// min{1, A * T-bar} with A = enumerate_q_bar(...) plus eps_x added to every
// row and clipped back to [0, 1]. eps_x defaults to the zero vector.
Eigen::MatrixXd enumerate_q_star(const RivalMatrix& rival, const FlipProfile& profile,
                                 const Eigen::VectorXd& eps_x = Eigen::VectorXd());

struct PosteriorRecovery {
  Eigen::VectorXd posterior;  // simplex-projected least-squares solution
  double residual_norm = 0.0; // ||Q* x - observed|| before projection
  int rank = 0;
};

// Least-squares inversion of observed candidate-set probabilities. Throws
// RankDeficiencyError unless the matrix has full column rank (QR pivot
// threshold 1e-9).
PosteriorRecovery recover_posterior(const Eigen::MatrixXd& q_star,
                                    const Eigen::VectorXd& observed);

// Text format: first line "c=<n>", then c rows of c decimal values.
// Values are written with enough digits to round-trip bit-exactly.
void save_matrix_text(const Eigen::MatrixXd& m, std::ostream& out);
void save_matrix_text(const Eigen::MatrixXd& m, const std::string& path);
Eigen::MatrixXd load_matrix_text(std::istream& in);
Eigen::MatrixXd load_matrix_text(const std::string& path);

}  // namespace rivalpll
