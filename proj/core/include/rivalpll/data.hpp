#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rivalpll/errors.hpp"

namespace rivalpll {

// Supervised dataset with ground-truth labels kept around for evaluation.
struct CleanDataset {
  int label_count = 0;
  Eigen::MatrixXd features;  // n x d, row per instance
  std::vector<int> labels;   // size n, each in [0, label_count)

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  void validate() const;
};

// Isotropic Gaussian mixture; the exact Bayes posterior is available in
// closed form, which the consistency checks lean on.
struct GaussianMixtureSpec {
  int label_count = 0;
  int dim = 0;
  Eigen::MatrixXd means;      // label_count x dim
  Eigen::VectorXd variances;  // per-class isotropic variance
  Eigen::VectorXd priors;     // sums to 1

  void validate() const;

  // Means at `separation * e_k` for the first min(c, d) classes and on
  // deterministic pseudo-random unit directions beyond that; unit variance,
  // uniform priors.
  static GaussianMixtureSpec separated(int label_count, int dim, double separation);
};

class MixturePosterior {
 public:
  explicit MixturePosterior(GaussianMixtureSpec spec);

  // P(Y = . | X = x); rows of the batch overload sum to 1.
  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const;
  int bayes_label(const Eigen::VectorXd& x) const;
  const GaussianMixtureSpec& spec() const { return spec_; }

 private:
  GaussianMixtureSpec spec_;
};

CleanDataset sample_mixture(const GaussianMixtureSpec& spec, int n, std::uint64_t seed);

// CSV with a "# c=<n>" metadata line, then header id,true_label,f0..f{d-1}.
void save_clean_csv(const CleanDataset& data, const std::string& path);
CleanDataset load_clean_csv(const std::string& path);

}  // namespace rivalpll
