#include "rivalpll/labelgen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"

namespace rivalpll {

CandidateSet::CandidateSet(int label_count) : label_count_(label_count) {
  if (label_count < 1) throw ValidationError("CandidateSet: label count must be positive");
  words_.assign(static_cast<std::size_t>((label_count + 63) / 64), 0);
}

bool CandidateSet::contains(int label) const {
  if (label < 0 || label >= label_count_)
    throw ValidationError("CandidateSet: label " + std::to_string(label) +
                          " outside [0, " + std::to_string(label_count_) + ")");
  return (words_[static_cast<std::size_t>(label) / 64] >> (label % 64)) & 1u;
}

void CandidateSet::add(int label) {
  if (label < 0 || label >= label_count_)
    throw ValidationError("CandidateSet: label " + std::to_string(label) +
                          " outside [0, " + std::to_string(label_count_) + ")");
  words_[static_cast<std::size_t>(label) / 64] |= std::uint64_t{1} << (label % 64);
}

int CandidateSet::cardinality() const {
  int n = 0;
  for (std::uint64_t w : words_) n += std::popcount(w);
  return n;
}

std::uint64_t CandidateSet::low_bits() const {
  if (label_count_ > 64)
    throw ValidationError("CandidateSet: low_bits needs label count <= 64");
  return words_.empty() ? 0 : words_[0];
}

std::string CandidateSet::to_hex() const {
  // Little-endian words rendered most-significant first, no leading zeros.
  std::string out;
  bool started = false;
  for (std::size_t i = words_.size(); i-- > 0;) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), started ? "%016llx" : "%llx",
                  static_cast<unsigned long long>(words_[i]));
    if (started || words_[i] != 0 || i == 0) {
      out += buf;
      started = true;
    }
  }
  return out;
}

CandidateSet CandidateSet::from_hex(const std::string& hex, int label_count) {
  if (hex.empty()) throw ValidationError("CandidateSet: empty hex mask");
  CandidateSet set(label_count);
  for (char ch : hex)
    if (!std::isxdigit(static_cast<unsigned char>(ch)))
      throw ValidationError("CandidateSet: bad hex mask \"" + hex + "\"");
  // Consume up to 16 hex digits per word from the right.
  std::size_t end = hex.size();
  std::size_t word = 0;
  while (end > 0) {
    if (word >= set.words_.size())
      throw ValidationError("CandidateSet: mask \"" + hex + "\" too wide for " +
                            std::to_string(label_count) + " labels");
    const std::size_t begin = end >= 16 ? end - 16 : 0;
    set.words_[word] = std::stoull(hex.substr(begin, end - begin), nullptr, 16);
    end = begin;
    ++word;
  }
  const int top_bits = label_count % 64;
  if (top_bits != 0) {
    const std::uint64_t top_mask = (std::uint64_t{1} << top_bits) - 1;
    if ((set.words_.back() & ~top_mask) != 0)
      throw ValidationError("CandidateSet: mask \"" + hex + "\" has bits beyond label " +
                            std::to_string(label_count - 1));
  }
  return set;
}

std::string to_string(CorruptionMode mode) {
  return mode == CorruptionMode::kStandard ? "standard" : "adversary_aware";
}

CorruptionMode corruption_mode_from_string(const std::string& s) {
  if (s == "standard") return CorruptionMode::kStandard;
  if (s == "adversary_aware") return CorruptionMode::kAdversaryAware;
  throw ValidationError("unknown corruption mode \"" + s + "\"");
}

void PllDataset::validate() const {
  clean.validate();
  const std::size_t n = static_cast<std::size_t>(clean.size());
  if (candidate_sets.size() != n || rival_labels.size() != n)
    throw ValidationError("PllDataset: per-instance arrays disagree with feature rows");
  for (std::size_t i = 0; i < n; ++i) {
    if (candidate_sets[i].label_count() != clean.label_count)
      throw ValidationError("PllDataset: candidate set " + std::to_string(i) +
                            " has wrong label count");
    if (!candidate_sets[i].contains(clean.labels[i]))
      throw ValidationError("PllDataset: true label missing from candidate set " +
                            std::to_string(i));
    const int r = rival_labels[i];
    if (mode == CorruptionMode::kStandard) {
      if (r != -1)
        throw ValidationError("PllDataset: standard mode must have rival -1 at " +
                              std::to_string(i));
    } else {
      if (r < 0 || r >= clean.label_count || r == clean.labels[i])
        throw ValidationError("PllDataset: bad rival label at " + std::to_string(i));
      if (!candidate_sets[i].contains(r))
        throw ValidationError("PllDataset: rival missing from candidate set " +
                              std::to_string(i));
    }
  }
}

double realized_flip_rate(const FlipProfile& profile, std::uint64_t seed,
                          int instance, int label) {
  const double base = profile.rate(label);
  const double shift =
      rng::Key(seed, rng::Stream::kFlipRate)
          .with(static_cast<std::uint64_t>(instance))
          .with(static_cast<std::uint64_t>(label))
          .uniform_in(-profile.perturbation, profile.perturbation);
  return std::clamp(base + shift, 0.0, kMaxFlipRate);
}

namespace {

PllDataset generate_impl(const CleanDataset& data, const RivalMatrix* rival,
                         const FlipProfile& profile, std::uint64_t seed) {
  data.validate();
  profile.validate(data.label_count);
  const int c = data.label_count;
  const int n = data.size();
  if (rival && rival->label_count() != c)
    throw ValidationError("generate: rival matrix is " +
                          std::to_string(rival->label_count()) + "-class, data is " +
                          std::to_string(c) + "-class");

  PllDataset out;
  out.clean = data;
  out.mode = rival ? CorruptionMode::kAdversaryAware : CorruptionMode::kStandard;
  out.candidate_sets.reserve(static_cast<std::size_t>(n));
  out.rival_labels.assign(static_cast<std::size_t>(n), -1);

  const rng::Key rival_key(seed, rng::Stream::kRival);
  const rng::Key draw_key(seed, rng::Stream::kFlipDraw);
  for (int i = 0; i < n; ++i) {
    const int y = data.labels[i];
    CandidateSet set(c);
    set.add(y);
    int rival_label = -1;
    if (rival) {
      const Eigen::VectorXd row = rival->entries().row(y).transpose();
      if (!(row.sum() > 0.0))
        throw ValidationError("generate: T-bar row " + std::to_string(y) +
                              " has no mass to sample a rival from");
      rival_label = categorical(row, rival_key.with(static_cast<std::uint64_t>(i)).uniform());
      if (rival_label == y)
        throw ValidationError("generate: T-bar row " + std::to_string(y) +
                              " put mass on the diagonal");
      set.add(rival_label);
      out.rival_labels[static_cast<std::size_t>(i)] = rival_label;
    }
    for (int b = 0; b < c; ++b) {
      if (b == y || b == rival_label) continue;
      const double p = realized_flip_rate(profile, seed, i, b);
      const double u = draw_key.with(static_cast<std::uint64_t>(i))
                           .with(static_cast<std::uint64_t>(b))
                           .uniform();
      if (u < p) set.add(b);
    }
    out.candidate_sets.push_back(std::move(set));
  }
  out.validate();
  return out;
}

}  // namespace

PllDataset generate_standard(const CleanDataset& data, const FlipProfile& profile,
                             std::uint64_t seed) {
  return generate_impl(data, nullptr, profile, seed);
}

PllDataset generate_adversary_aware(const CleanDataset& data, const RivalMatrix& rival,
                                    const FlipProfile& profile, std::uint64_t seed) {
  return generate_impl(data, &rival, profile, seed);
}

AmbiguityReport check_ambiguity(const FlipProfile& profile, int label_count,
                                const RivalMatrix* rival) {
  AmbiguityReport report;
  double max_raw = 0.0;
  for (int b = 0; b < label_count; ++b) max_raw = std::max(max_raw, profile.rate(b));
  report.max_rate = std::min(max_raw + profile.perturbation, 1.0);
  bool ok = max_raw < 1.0 && profile.perturbation >= 0.0 && profile.perturbation < 1.0;
  if (rival) {
    if (rival->label_count() != label_count) ok = false;
    // A rival guarantees one extra candidate but never covers all labels
    // as long as c >= 3, so only the flip rates can break learnability.
  }
  report.ok = ok;
  if (ok) report.max_rate = std::min(max_raw + profile.perturbation, kMaxFlipRate);
  return report;
}

GenerationReport audit_generation(const PllDataset& data) {
  data.validate();
  const int c = data.clean.label_count;
  const int n = data.size();
  GenerationReport report;
  report.inclusion = Eigen::MatrixXd::Zero(c, c);
  report.label_counts = Eigen::VectorXd::Zero(c);
  report.true_label_always_present = true;

  double total_cardinality = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = data.clean.labels[i];
    report.label_counts[y] += 1.0;
    total_cardinality += data.candidate_sets[static_cast<std::size_t>(i)].cardinality();
    if (data.candidate_sets[static_cast<std::size_t>(i)].is_full()) ++report.full_set_count;
    for (int b = 0; b < c; ++b)
      if (data.candidate_sets[static_cast<std::size_t>(i)].contains(b))
        report.inclusion(y, b) += 1.0;
  }
  for (int y = 0; y < c; ++y) {
    if (report.label_counts[y] > 0.0)
      report.inclusion.row(y) /= report.label_counts[y];
    else
      report.inclusion(y, y) = 1.0;  // unobserved class: diagonal stays exact
    if (report.inclusion(y, y) != 1.0) report.true_label_always_present = false;
  }
  report.mean_cardinality = total_cardinality / n;
  return report;
}

void save_pll_csv(const PllDataset& data, const std::string& path) {
  data.validate();
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << "# c=" << data.clean.label_count << " mode=" << to_string(data.mode) << "\n";
  f << "id,true_label,rival_label,candidate_mask_hex";
  for (int j = 0; j < data.clean.dim(); ++j) f << ",f" << j;
  f << "\n";
  for (int i = 0; i < data.size(); ++i) {
    f << i << ',' << data.clean.labels[i] << ','
      << data.rival_labels[static_cast<std::size_t>(i)] << ','
      << data.candidate_sets[static_cast<std::size_t>(i)].to_hex();
    for (int j = 0; j < data.clean.dim(); ++j)
      f << ',' << format_double(data.clean.features(i, j));
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

}  // namespace

PllDataset load_pll_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  std::string line;
  int line_no = 1;
  if (!std::getline(f, line)) fail_line(line_no, "empty file");
  int c = 0;
  CorruptionMode mode = CorruptionMode::kStandard;
  {
    if (line.rfind("# c=", 0) != 0)
      fail_line(line_no, "expected \"# c=<n> mode=<m>\" metadata line");
    const auto mode_pos = line.find(" mode=");
    if (mode_pos == std::string::npos) fail_line(line_no, "metadata line missing mode=");
    c = parse_int(line.substr(4, mode_pos - 4), line_no);
    try {
      mode = corruption_mode_from_string(line.substr(mode_pos + 6));
    } catch (const ValidationError& e) {
      fail_line(line_no, e.what());
    }
  }

  ++line_no;
  if (!std::getline(f, line)) fail_line(line_no, "missing header row");
  const auto header = split_csv(line);
  if (header.size() < 5 || header[0] != "id" || header[1] != "true_label" ||
      header[2] != "rival_label" || header[3] != "candidate_mask_hex")
    fail_line(line_no, "expected header id,true_label,rival_label,candidate_mask_hex,f0,...");
  const int d = static_cast<int>(header.size()) - 4;

  PllDataset out;
  out.mode = mode;
  out.clean.label_count = c;
  std::vector<Eigen::VectorXd> rows;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (static_cast<int>(fields.size()) != d + 4)
      fail_line(line_no, "expected " + std::to_string(d + 4) + " fields, got " +
                             std::to_string(fields.size()));
    if (parse_int(fields[0], line_no) != static_cast<int>(rows.size()))
      fail_line(line_no, "ids must be consecutive from 0");
    const int y = parse_int(fields[1], line_no);
    if (y < 0 || y >= c) fail_line(line_no, "true label outside [0, " + std::to_string(c) + ")");
    out.clean.labels.push_back(y);
    out.rival_labels.push_back(parse_int(fields[2], line_no));
    try {
      out.candidate_sets.push_back(CandidateSet::from_hex(fields[3], c));
    } catch (const ValidationError& e) {
      fail_line(line_no, e.what());
    }
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j)
      x[j] = parse_double(fields[static_cast<std::size_t>(j) + 4], line_no);
    rows.push_back(std::move(x));
  }
  if (rows.empty()) fail_line(line_no, "no data rows");
  out.clean.features.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.clean.features.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  out.validate();
  return out;
}

}  // namespace rivalpll
