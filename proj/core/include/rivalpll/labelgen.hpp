#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rivalpll/data.hpp"
#include "rivalpll/transition.hpp"

namespace rivalpll {

// Label subset as a wide bitset; label counts beyond 64 are supported, so
// the mask is stored as little-endian 64-bit words and serialized as hex.
class CandidateSet {
 public:
  CandidateSet() = default;
  explicit CandidateSet(int label_count);

  int label_count() const { return label_count_; }
  bool contains(int label) const;
  void add(int label);
  int cardinality() const;
  bool is_full() const { return cardinality() == label_count_; }

  // Lowest word of the mask; valid whenever label_count <= 64. Interoperates
  // with CandidateSetIndex for enumerable label counts.
  std::uint64_t low_bits() const;

  std::string to_hex() const;
  static CandidateSet from_hex(const std::string& hex, int label_count);

  bool operator==(const CandidateSet& other) const = default;

 private:
  int label_count_ = 0;
  std::vector<std::uint64_t> words_{};
};

enum class CorruptionMode { kStandard, kAdversaryAware };

std::string to_string(CorruptionMode mode);
CorruptionMode corruption_mode_from_string(const std::string& s);

// Partially labeled dataset: every candidate set contains the true label;
// rival_labels[i] is -1 in standard mode and the sampled rival otherwise
// (kept for audits, never shown to the learner).
struct PllDataset {
  CleanDataset clean;
  std::vector<CandidateSet> candidate_sets;
  std::vector<int> rival_labels;
  CorruptionMode mode = CorruptionMode::kStandard;

  int size() const { return clean.size(); }
  void validate() const;
};

// The instance-level flip rate actually used for (instance, label): the
// profile rate plus a perturbation draw, clipped to [0, 1 - 1e-6].
double realized_flip_rate(const FlipProfile& profile, std::uint64_t seed,
                          int instance, int label);

// Candidate set = {true label} + independent per-label flips.
PllDataset generate_standard(const CleanDataset& data, const FlipProfile& profile,
                             std::uint64_t seed);

// Candidate set = {true label, rival ~ T-bar row} + independent flips.
// Rows of an unvalidated T-bar are normalized by their own sum; an all-zero
// row is rejected since no rival can be drawn from it.
PllDataset generate_adversary_aware(const CleanDataset& data, const RivalMatrix& rival,
                                    const FlipProfile& profile, std::uint64_t seed);

struct AmbiguityReport {
  bool ok = false;
  double max_rate = 0.0;  // largest realized flip rate the profile can reach
};

// Learnability gate: every label must keep positive probability of being
// absent from the candidate set. rival may be null (standard mode).
AmbiguityReport check_ambiguity(const FlipProfile& profile, int label_count,
                                const RivalMatrix* rival = nullptr);

struct GenerationReport {
  Eigen::MatrixXd inclusion;     // [y][b]: empirical P(b in set | true label y)
  Eigen::VectorXd label_counts;  // instances per true label
  double mean_cardinality = 0.0;
  std::int64_t full_set_count = 0;  // flagged, never re-rolled
  bool true_label_always_present = false;
};

GenerationReport audit_generation(const PllDataset& data);

// CSV with "# c=<n> mode=<standard|adversary_aware>" metadata, then header
// id,true_label,rival_label,candidate_mask_hex,f0..f{d-1}.
void save_pll_csv(const PllDataset& data, const std::string& path);
PllDataset load_pll_csv(const std::string& path);

}  // namespace rivalpll
