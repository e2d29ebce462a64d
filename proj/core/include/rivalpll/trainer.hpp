#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rivalpll/atm.hpp"
#include "rivalpll/config.hpp"
#include "rivalpll/data.hpp"
#include "rivalpll/labelgen.hpp"
#include "rivalpll/nn.hpp"

namespace rivalpll {

struct EpochMetrics {
  int epoch = 0;
  double cls_loss = 0.0;
  double con_loss = 0.0;
  double combined_loss = 0.0;
  double test_accuracy = 0.0;
  double prototype_accuracy = 0.0;
  std::int64_t skipped_queries = 0;
  double seconds = 0.0;  // wall clock; kept out of metrics.csv so reruns byte-match
};

struct Checkpoint {
  NetworkParams query;
  NetworkParams key;
  Eigen::MatrixXd prototypes;      // c x embed_dim unit rows
  Eigen::MatrixXd pseudo_targets;  // n x c simplex rows
};

struct TrainOutput {
  Checkpoint state;
  std::vector<EpochMetrics> history;
  bool diverged = false;
  std::string divergence_note;
  int last_finite_epoch = -1;
  double final_test_accuracy = 0.0;
};

struct TrainJob {
  PllDataset train;
  CleanDataset test;
  std::optional<RivalMatrix> rival;  // present in adversary-aware mode
};

// Synthesizes (mixture + corruption) or loads the datasets a config names.
TrainJob prepare_job(const ExperimentConfig& cfg);

// One full training run. Per batch: two augmented views, query/key forward,
// restricted predictions, prototype and pseudo-label updates, combined loss
// (contrastive weight forced to 0 and queue frozen during warm-up), backward,
// SGD step, EMA of the key encoder, queue push. on_epoch, when set, fires
// after each completed epoch (metrics streaming).
TrainOutput train_model(const ExperimentConfig& cfg, const TrainJob& job,
                        const std::function<void(const EpochMetrics&)>& on_epoch = {});

double evaluate_accuracy(const NetworkParams& params, const CleanDataset& data);

struct AblationRow {
  std::uint64_t seed = 0;
  double with_correction = 0.0;
  double without_correction = 0.0;
};

// Paired runs: both arms share the exact same generated dataset per seed;
// only the use of the correction matrix inside the classification loss
// differs.
std::vector<AblationRow> run_ablation(const ExperimentConfig& base, int seeds);

// Fraction of instances whose candidate-restricted prototype argmax hits the
// hidden true label.
double prototype_match_rate(const NetworkParams& params, const PrototypeBank& bank,
                            const PllDataset& data);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& row);
void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::string& path);
void write_timings_csv(const std::vector<EpochMetrics>& history, const std::string& path);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path, const ArchitectureSpec& arch);

}  // namespace rivalpll
