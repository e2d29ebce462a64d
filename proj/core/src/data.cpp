#include "rivalpll/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"

namespace rivalpll {

void CleanDataset::validate() const {
  if (label_count < 2) throw ValidationError("CleanDataset: needs at least 2 labels");
  if (features.rows() < 1 || features.cols() < 1)
    throw ValidationError("CleanDataset: empty feature matrix");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw ValidationError("CleanDataset: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(features.rows()) + " rows");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= label_count)
      throw ValidationError("CleanDataset: label " + std::to_string(labels[i]) +
                            " at row " + std::to_string(i) + " outside [0, " +
                            std::to_string(label_count) + ")");
  if (!features.allFinite())
    throw ValidationError("CleanDataset: non-finite feature value");
}

void GaussianMixtureSpec::validate() const {
  if (label_count < 2) throw ValidationError("GaussianMixtureSpec: needs >= 2 classes");
  if (dim < 1) throw ValidationError("GaussianMixtureSpec: needs dim >= 1");
  if (means.rows() != label_count || means.cols() != dim)
    throw ValidationError("GaussianMixtureSpec: means shape mismatch");
  if (variances.size() != label_count || (variances.array() <= 0.0).any())
    throw ValidationError("GaussianMixtureSpec: variances must be positive, one per class");
  if (priors.size() != label_count || (priors.array() < 0.0).any() ||
      std::abs(priors.sum() - 1.0) > kStructuralTol)
    throw ValidationError("GaussianMixtureSpec: priors must form a distribution");
}

GaussianMixtureSpec GaussianMixtureSpec::separated(int label_count, int dim,
                                                   double separation) {
  if (label_count < 2 || dim < 1)
    throw ValidationError("GaussianMixtureSpec::separated: bad shape");
  GaussianMixtureSpec spec;
  spec.label_count = label_count;
  spec.dim = dim;
  spec.means = Eigen::MatrixXd::Zero(label_count, dim);
  for (int k = 0; k < label_count; ++k) {
    if (k < dim) {
      spec.means(k, k) = separation;
    } else {
      Eigen::VectorXd dir(dim);
      const rng::Key key(0xd1a5, rng::Stream::kGeneric);
      for (int j = 0; j < dim; ++j)
        dir[j] = key.with(static_cast<std::uint64_t>(k)).with(j).gaussian();
      spec.means.row(k) = separation * l2_normalized(dir).transpose();
    }
  }
  spec.variances = Eigen::VectorXd::Ones(label_count);
  spec.priors = Eigen::VectorXd::Constant(label_count, 1.0 / label_count);
  spec.validate();
  return spec;
}

MixturePosterior::MixturePosterior(GaussianMixtureSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

Eigen::VectorXd MixturePosterior::operator()(const Eigen::VectorXd& x) const {
  if (x.size() != spec_.dim) throw ValidationError("MixturePosterior: dim mismatch");
  Eigen::VectorXd log_joint(spec_.label_count);
  for (int k = 0; k < spec_.label_count; ++k) {
    const double var = spec_.variances[k];
    const double sq = (x.transpose() - spec_.means.row(k)).squaredNorm();
    log_joint[k] = std::log(std::max(spec_.priors[k], kProbFloor)) -
                   0.5 * spec_.dim * std::log(2.0 * std::numbers::pi * var) -
                   sq / (2.0 * var);
  }
  return softmax(log_joint);
}

int MixturePosterior::bayes_label(const Eigen::VectorXd& x) const {
  return argmax_index((*this)(x));
}

CleanDataset sample_mixture(const GaussianMixtureSpec& spec, int n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw ValidationError("sample_mixture: n must be positive");
  CleanDataset out;
  out.label_count = spec.label_count;
  out.features.resize(n, spec.dim);
  out.labels.resize(n);
  const rng::Key class_key(seed, rng::Stream::kMixtureClass);
  const rng::Key feat_key(seed, rng::Stream::kMixtureFeature);
  for (int i = 0; i < n; ++i) {
    const int y = categorical(spec.priors, class_key.with(i).uniform());
    out.labels[i] = y;
    const double sd = std::sqrt(spec.variances[y]);
    for (int j = 0; j < spec.dim; ++j)
      out.features(i, j) = spec.means(y, j) + sd * feat_key.with(i).with(j).gaussian();
  }
  out.validate();
  return out;
}

void save_clean_csv(const CleanDataset& data, const std::string& path) {
  data.validate();
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << "# c=" << data.label_count << "\n";
  f << "id,true_label";
  for (int j = 0; j < data.dim(); ++j) f << ",f" << j;
  f << "\n";
  for (int i = 0; i < data.size(); ++i) {
    f << i << ',' << data.labels[i];
    for (int j = 0; j < data.dim(); ++j) f << ',' << format_double(data.features(i, j));
    f << "\n";
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void fail_line(int line_no, const std::string& what) {
  throw ParseError("line " + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& s, int line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) fail_line(line_no, "trailing characters in \"" + s + "\"");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    fail_line(line_no, "cannot parse number \"" + s + "\"");
  }
}

int parse_int(const std::string& s, int line_no) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) fail_line(line_no, "trailing characters in \"" + s + "\"");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    fail_line(line_no, "cannot parse integer \"" + s + "\"");
  }
}

}  // namespace

CleanDataset load_clean_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  std::string line;
  int line_no = 1;
  if (!std::getline(f, line)) fail_line(line_no, "empty file");
  if (line.rfind("# c=", 0) != 0) fail_line(line_no, "expected \"# c=<n>\" metadata line");
  const int c = parse_int(line.substr(4), line_no);

  ++line_no;
  if (!std::getline(f, line)) fail_line(line_no, "missing header row");
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "true_label")
    fail_line(line_no, "expected header id,true_label,f0,...");
  const int d = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < d; ++j)
    if (header[static_cast<std::size_t>(j) + 2] != "f" + std::to_string(j))
      fail_line(line_no, "feature columns must be f0..f" + std::to_string(d - 1));

  std::vector<Eigen::VectorXd> rows;
  std::vector<int> labels;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (static_cast<int>(fields.size()) != d + 2)
      fail_line(line_no, "expected " + std::to_string(d + 2) + " fields, got " +
                             std::to_string(fields.size()));
    const int id = parse_int(fields[0], line_no);
    if (id != static_cast<int>(rows.size()))
      fail_line(line_no, "ids must be consecutive from 0, got " + std::to_string(id));
    const int y = parse_int(fields[1], line_no);
    if (y < 0 || y >= c)
      fail_line(line_no, "label " + std::to_string(y) + " outside [0, " +
                             std::to_string(c) + ")");
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) x[j] = parse_double(fields[static_cast<std::size_t>(j) + 2], line_no);
    rows.push_back(std::move(x));
    labels.push_back(y);
  }
  if (rows.empty()) fail_line(line_no, "no data rows");

  CleanDataset out;
  out.label_count = c;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.features.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  out.labels = std::move(labels);
  out.validate();
  return out;
}

}  // namespace rivalpll
