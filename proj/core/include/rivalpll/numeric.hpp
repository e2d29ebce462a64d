#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "rivalpll/errors.hpp"

namespace rivalpll {

inline constexpr double kProbFloor = 1e-12;     // floor inside every log
inline constexpr double kNormFloor = 1e-12;     // floor inside L2 normalization
inline constexpr double kStructuralTol = 1e-9;  // row sums, unit norms, rank thresholds

inline double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::ArrayXd shifted = logits.array() - logits.maxCoeff();
  Eigen::ArrayXd e = shifted.exp();
  return (e / e.sum()).matrix();
}

inline Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v) {
  return v / std::max(v.norm(), kNormFloor);
}

inline double total_variation(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw ValidationError("total_variation: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

// Euclidean projection onto the probability simplex (sort-based).
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  if (n == 0) throw ValidationError("project_to_simplex: empty vector");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cum += u[k];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

// Inverse-CDF draw from an unnormalized nonnegative weight vector.
inline int categorical(const Eigen::VectorXd& weights, double u) {
  const double total = weights.sum();
  if (!(total > 0.0)) throw ValidationError("categorical: nonpositive weight total");
  double acc = 0.0;
  const double target = u * total;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (target < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size() - 1);
}

// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline int argmax_index(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;  // ties resolve to the smallest index
}

}  // namespace rivalpll
