#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rivalpll/errors.hpp"

namespace rivalpll {

// One flat bag of knobs shared by every CLI subcommand. Serializes to plain
// "key = value" lines; load(save(x)) == x including float bit patterns.
struct ExperimentConfig {
  // data: either load CSVs or synthesize a Gaussian mixture
  std::string clean_csv;
  std::string pll_csv;
  int mixture_classes = 10;
  int mixture_dim = 16;
  double mixture_separation = 4.0;
  int train_size = 4000;
  int test_size = 2000;

  // corruption
  std::string mode = "adversary_aware";  // or "standard"
  double q = 0.1;
  double perturbation = 0.02;
  int rival_support = 5;       // preset: support_size entries of rival_weight per row
  double rival_weight = 0.2;
  std::string rival_matrix_path;  // overrides the preset when set

  // network
  std::vector<int> hidden = {64, 64};
  int embed_dim = 128;
  double aug_noise = 0.1;
  double aug_mask = 0.1;

  // disambiguation and losses
  double alpha = 0.1;
  double beta = 0.01;
  double phi = 0.99;
  double lambda = 0.5;
  double tau = 0.07;
  double ema_momentum = 0.999;
  int queue_capacity = 0;  // 0 -> min(8192, n/2)
  bool correct_loss = true;

  // optimizer
  int batch_size = 256;
  double lr = 0.01;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-3;
  int epochs = 300;
  int warmup_epochs = -1;  // -1 -> epochs / 10

  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const;
  int effective_warmup() const;
  int effective_queue_capacity(int train_instances) const;

  void set(const std::string& key, const std::string& value);
  std::string serialize() const;
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load_file(const std::string& path);
  void save_file(const std::string& path) const;
};

}  // namespace rivalpll
