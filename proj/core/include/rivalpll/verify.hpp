#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rivalpll/transition.hpp"

namespace rivalpll::verify {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string note;
};

struct ConsistencyReport {
  std::vector<CheckResult> checks;

  bool all_pass() const;
  void add(CheckResult check);
  // One "PASS name measured=... tolerance=..." line per check.
  void print(std::ostream& out) const;
  void write_csv(std::ostream& out) const;
};

// Independent enumeration of P(candidate set | true label): walks all 2^c
// masks accumulating per-label indicator products, then conditions columns
// on the proper nonempty sets. Shares no code with the transition module.
Eigen::MatrixXd oracle_q_bar(int label_count, const FlipProfile& profile);  // c <= 6

struct RiskProbeResult {
  double max_deviation = 0.0;
  Eigen::VectorXd per_point;
};

// Exact gap between the expected candidate-set loss under the generation
// process and the clean cross-entropy risk, on a grid of instances with
// known posteriors and fixed classifier outputs. The per-set target is
// uniform over the set's members. rival == nullptr or an all-zero matrix
// means rival-free generation with identity correction. Evaluated at the
// profile's nominal rates, which equals the perturbation average as long as
// no rate clips.
RiskProbeResult risk_probe(const RivalMatrix* rival, const FlipProfile& profile,
                           const Eigen::MatrixXd& posteriors,
                           const Eigen::MatrixXd& outputs);  // c <= 5

CheckResult risk_consistency_check(const RivalMatrix* rival, const FlipProfile& profile,
                                   const Eigen::MatrixXd& posteriors,
                                   const Eigen::MatrixXd& outputs, double tolerance);

// Full-column-rank gate for a correction or recovery matrix (QR, pivot
// threshold 1e-9).
CheckResult rank_diagnostic(const std::string& name, const Eigen::MatrixXd& m);

// Dual-implementation equality over c in {3,4,5} x q in {0.1,0.3,0.5}:
// largest entrywise gap between the production enumeration and the oracle.
CheckResult oracle_equivalence_check(double tolerance = 1e-12);

// Column sums of the production enumeration over the same grid.
CheckResult column_stochasticity_check(double tolerance = 1e-9);

struct GradientCheckConfig {
  int instances = 20;
  int batch = 8;
  int label_count = 3;
  int input_dim = 6;
  std::vector<int> hidden = {8, 8};
  int embed_dim = 4;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 11;
};

// Central finite differences through the full forward pass against the
// analytic backward pass, for the corrected classification term, the
// contrastive term, and their weighted combination. Reports the worst
// relative error per term across all parameters and instances.
ConsistencyReport gradient_fd_check(const GradientCheckConfig& cfg);

struct LadderConfig {
  int label_count = 3;
  int dim = 6;
  double separation = 5.0;
  double q = 0.3;
  double perturbation = 0.02;
  bool adversary = true;  // false: rival-free clean regime
  int rival_support = 2;
  std::vector<int> train_sizes = {1000, 4000, 16000};
  int test_size = 4000;
  int seeds = 5;
  std::uint64_t base_seed = 7;
  int epochs = 30;
  double min_final_match = 0.0;  // raise to demand a floor at the largest size
};

struct LadderPoint {
  int train_size = 0;
  double median_bayes_match = 0.0;
  double median_posterior_tv = 0.0;
};

struct LadderResult {
  std::vector<LadderPoint> points;
  bool monotone = false;  // non-decreasing Bayes match, 1 pt slack
  ConsistencyReport report;
};

// Trains the corrected-CE objective (contrastive weight 0) on growing
// adversary-aware samples of a known Gaussian mixture and compares the
// learned classifier against the closed-form Bayes rule. The correction
// matrix (or the override, when given) must pass the rank gate first.
LadderResult classifier_consistency_check(const LadderConfig& cfg,
                                          const RivalMatrix* correction_override = nullptr);

struct RecoverySweepRow {
  int label_count = 0;
  double q = 0.0;
  int support = 0;
  double weight = 0.0;
  bool full_rank = false;
  double tv_error = 0.0;
  double residual = 0.0;
};

// Forward-synthesizes observations Q* p for random simplex p over the
// c in {3,4,5} x q in {0.1,0.3,0.5} x cyclic-preset grid, recovers p, and
// tabulates errors. Rank-deficient configurations are flagged, not solved.
std::vector<RecoverySweepRow> recovery_residual_sweep(std::uint64_t seed);
void write_sweep_csv(const std::vector<RecoverySweepRow>& rows, std::ostream& out);

// Fixed 6x6 rival matrices for the ablation tooling, kept byte-literal.
// Their rows sum to 0.8 and 1.2, so they bypass stochasticity validation
// and exist for diagnostics only.
RivalMatrix ablation_fixture_original();
RivalMatrix ablation_fixture_new();

}  // namespace rivalpll::verify
