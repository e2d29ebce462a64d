#include "rivalpll/transition.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "rivalpll/numeric.hpp"

namespace rivalpll {

namespace {

void check_square(const Eigen::MatrixXd& m, const char* who) {
  if (m.rows() != m.cols())
    throw ValidationError(std::string(who) + ": matrix must be square");
  if (m.rows() < kMinLabels)
    throw ValidationError(std::string(who) + ": needs at least 3 labels");
}

void check_enumerable(int c) {
  if (c < kMinLabels || c > kMaxEnumerableLabels)
    throw ValidationError("candidate-set enumeration supports 3 <= c <= 20, got c=" +
                          std::to_string(c));
}

}  // namespace

RivalMatrix::RivalMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
  check_square(entries_, "RivalMatrix");
  const int c = label_count();
  for (int y = 0; y < c; ++y) {
    if (entries_(y, y) != 0.0)
      throw ValidationError("RivalMatrix: diagonal entry at row " + std::to_string(y) +
                            " must be 0");
    double row_sum = 0.0;
    for (int j = 0; j < c; ++j) {
      const double v = entries_(y, j);
      if (!(v >= 0.0 && v <= 1.0))
        throw ValidationError("RivalMatrix: entry (" + std::to_string(y) + "," +
                              std::to_string(j) + ") outside [0,1]");
      row_sum += v;
    }
    if (std::abs(row_sum - 1.0) > kStructuralTol)
      throw ValidationError("RivalMatrix: row " + std::to_string(y) +
                            " sums to " + format_double(row_sum) + ", expected 1");
  }
  validated_ = true;
}

RivalMatrix RivalMatrix::unchecked(Eigen::MatrixXd entries) {
  check_square(entries, "RivalMatrix::unchecked");
  RivalMatrix m;
  m.entries_ = std::move(entries);
  m.validated_ = false;
  return m;
}

RivalMatrix build_rival_matrix(int label_count, int support_size, double weight) {
  if (label_count < kMinLabels)
    throw ValidationError("build_rival_matrix: needs at least 3 labels");
  if (support_size < 1 || support_size > label_count - 1)
    throw ValidationError("build_rival_matrix: support size must lie in [1, c-1]");
  if (std::abs(static_cast<double>(support_size) * weight - 1.0) > kStructuralTol)
    throw ValidationError("build_rival_matrix: support_size * weight must equal 1, got " +
                          format_double(support_size * weight));
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(label_count, label_count);
  for (int y = 0; y < label_count; ++y)
    for (int j = 1; j <= support_size; ++j)
      t(y, (y + j) % label_count) = weight;
  return RivalMatrix(std::move(t));
}

AdversaryAwareMatrix::AdversaryAwareMatrix(const RivalMatrix& rival)
    : entries_(rival.entries()) {
  for (int y = 0; y < label_count(); ++y) entries_(y, y) = 1.0;
}

AdversaryAwareMatrix AdversaryAwareMatrix::identity(int label_count) {
  if (label_count < kMinLabels)
    throw ValidationError("AdversaryAwareMatrix::identity: needs at least 3 labels");
  return AdversaryAwareMatrix(Eigen::MatrixXd::Identity(label_count, label_count));
}

AdversaryAwareMatrix correction_matrix(const RivalMatrix& rival) {
  return AdversaryAwareMatrix(
      RivalMatrix::unchecked(rival.entries().transpose()));
}

CandidateSetIndex::CandidateSetIndex(int label_count) : label_count_(label_count) {
  check_enumerable(label_count);
  count_ = (std::int64_t{1} << label_count) - 2;
}

std::uint32_t CandidateSetIndex::mask_at(std::int64_t index) const {
  if (index < 0 || index >= count_)
    throw ValidationError("CandidateSetIndex: index " + std::to_string(index) +
                          " outside [0, " + std::to_string(count_) + ")");
  return static_cast<std::uint32_t>(index + 1);
}

std::int64_t CandidateSetIndex::index_of(std::uint32_t mask) const {
  const std::uint32_t full = (1u << label_count_) - 1u;
  if (mask == 0u)
    throw ValidationError("CandidateSetIndex: empty set has no index");
  if (mask >= full)
    throw ValidationError("CandidateSetIndex: mask " + std::to_string(mask) +
                          " is the full set or out of range");
  return static_cast<std::int64_t>(mask) - 1;
}

double FlipProfile::rate(int label) const {
  if (per_label.empty()) return base_rate;
  if (label < 0 || label >= static_cast<int>(per_label.size()))
    throw ValidationError("FlipProfile: label " + std::to_string(label) +
                          " outside per-label table");
  return per_label[static_cast<std::size_t>(label)];
}

Eigen::VectorXd FlipProfile::rates(int label_count) const {
  Eigen::VectorXd out(label_count);
  for (int b = 0; b < label_count; ++b) out[b] = rate(b);
  return out;
}

double FlipProfile::max_rate(int label_count) const {
  double m = 0.0;
  for (int b = 0; b < label_count; ++b) m = std::max(m, rate(b));
  return m;
}

void FlipProfile::validate(int label_count) const {
  if (!(perturbation >= 0.0 && perturbation < 1.0))
    throw ValidationError("FlipProfile: perturbation must lie in [0, 1)");
  if (!per_label.empty() && static_cast<int>(per_label.size()) != label_count)
    throw ValidationError("FlipProfile: per-label table has " +
                          std::to_string(per_label.size()) + " entries, expected " +
                          std::to_string(label_count));
  for (int b = 0; b < label_count; ++b) {
    const double r = rate(b);
    if (!(r >= 0.0 && r < 1.0))
      throw ValidationError("FlipProfile: rate for label " + std::to_string(b) +
                            " is " + format_double(r) + ", must lie in [0, 1)");
  }
}

Eigen::MatrixXd enumerate_q_bar(int label_count, const FlipProfile& profile) {
  check_enumerable(label_count);
  profile.validate(label_count);
  const int c = label_count;
  const Eigen::VectorXd p = profile.rates(c);
  const std::int64_t rows = (std::int64_t{1} << c) - 2;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(rows, c);

  std::vector<int> members;
  std::vector<double> pre, suf;
  members.reserve(c);
  for (std::uint32_t mask = 1; mask <= static_cast<std::uint32_t>(rows); ++mask) {
    members.clear();
    double outside = 1.0;
    for (int b = 0; b < c; ++b) {
      if (mask & (1u << b))
        members.push_back(b);
      else
        outside *= 1.0 - p[b];
    }
    // Leave-one-out products over member flip rates: no division, so a zero
    // rate cannot poison the whole row.
    const std::size_t k = members.size();
    pre.assign(k + 1, 1.0);
    suf.assign(k + 1, 1.0);
    for (std::size_t i = 0; i < k; ++i) pre[i + 1] = pre[i] * p[members[i]];
    for (std::size_t i = k; i-- > 0;) suf[i] = suf[i + 1] * p[members[i]];
    for (std::size_t i = 0; i < k; ++i)
      q(static_cast<std::int64_t>(mask) - 1, members[i]) = pre[i] * suf[i + 1] * outside;
  }

  // Condition each column on the set being a proper nonempty subset; the
  // excluded full set carries mass prod_{b != y} p_b, so without this the
  // columns would sum short of 1.
  for (int y = 0; y < c; ++y) {
    const double mass = q.col(y).sum();
    if (!(mass > 0.0))
      throw ValidationError("enumerate_q_bar: column " + std::to_string(y) +
                            " has no mass");
    q.col(y) /= mass;
  }
  return q;
}

Eigen::MatrixXd enumerate_q_star(const RivalMatrix& rival, const FlipProfile& profile,
                                 const Eigen::VectorXd& eps_x) {
  const int c = rival.label_count();
  Eigen::MatrixXd a = enumerate_q_bar(c, profile);
  if (eps_x.size() != 0) {
    if (eps_x.size() != c)
      throw ValidationError("enumerate_q_star: eps_x has " +
                            std::to_string(eps_x.size()) + " entries, expected " +
                            std::to_string(c));
    a.rowwise() += eps_x.transpose();
    a = a.cwiseMax(0.0).cwiseMin(1.0);
  }
  Eigen::MatrixXd q_star = a * rival.entries();
  return q_star.cwiseMin(1.0);
}

PosteriorRecovery recover_posterior(const Eigen::MatrixXd& q_star,
                                    const Eigen::VectorXd& observed) {
  if (q_star.rows() != observed.size())
    throw ValidationError("recover_posterior: observed vector has " +
                          std::to_string(observed.size()) + " entries, expected " +
                          std::to_string(q_star.rows()));
  if (q_star.rows() < q_star.cols())
    throw ValidationError("recover_posterior: system is underdetermined");
  for (Eigen::Index i = 0; i < observed.size(); ++i)
    if (!(observed[i] >= 0.0))
      throw ValidationError("recover_posterior: observed probability " +
                            std::to_string(i) + " is negative or NaN");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(q_star);
  qr.setThreshold(kStructuralTol);
  const int rank = static_cast<int>(qr.rank());
  if (rank < q_star.cols())
    throw RankDeficiencyError("recover_posterior: column rank " + std::to_string(rank) +
                              " of " + std::to_string(q_star.cols()) +
                              "; recovery needs full column rank");
  const Eigen::VectorXd x = qr.solve(observed);
  PosteriorRecovery out;
  out.residual_norm = (q_star * x - observed).norm();
  out.posterior = project_to_simplex(x);
  out.rank = rank;
  return out;
}

void save_matrix_text(const Eigen::MatrixXd& m, std::ostream& out) {
  if (m.rows() != m.cols())
    throw ValidationError("save_matrix_text: matrix must be square");
  out << "c=" << m.rows() << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << format_double(m(r, c));
    }
    out << "\n";
  }
}

void save_matrix_text(const Eigen::MatrixXd& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  save_matrix_text(m, f);
}

Eigen::MatrixXd load_matrix_text(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("line 1: expected header \"c=<n>\", got end of input");
  if (line.rfind("c=", 0) != 0)
    throw ParseError("line 1: expected header \"c=<n>\", got \"" + line + "\"");
  int c = 0;
  try {
    c = std::stoi(line.substr(2));
  } catch (const std::exception&) {
    throw ParseError("line 1: cannot parse label count from \"" + line + "\"");
  }
  if (c < 1) throw ParseError("line 1: label count must be positive");
  Eigen::MatrixXd m(c, c);
  for (int r = 0; r < c; ++r) {
    if (!std::getline(in, line))
      throw ParseError("line " + std::to_string(r + 2) + ": expected " +
                       std::to_string(c) + " values, got end of input");
    std::istringstream row(line);
    for (int j = 0; j < c; ++j) {
      if (!(row >> m(r, j)))
        throw ParseError("line " + std::to_string(r + 2) + ": expected " +
                         std::to_string(c) + " numeric values");
    }
    double extra;
    if (row >> extra)
      throw ParseError("line " + std::to_string(r + 2) + ": more than " +
                       std::to_string(c) + " values");
  }
  return m;
}

Eigen::MatrixXd load_matrix_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  return load_matrix_text(f);
}

}  // namespace rivalpll
