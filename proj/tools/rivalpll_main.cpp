#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "rivalpll/atm.hpp"
#include "rivalpll/config.hpp"
#include "rivalpll/data.hpp"
#include "rivalpll/errors.hpp"
#include "rivalpll/labelgen.hpp"
#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"
#include "rivalpll/trainer.hpp"
#include "rivalpll/transition.hpp"
#include "rivalpll/verify.hpp"

namespace fs = std::filesystem;
using namespace rivalpll;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;
constexpr int kExitDivergence = 3;

// Flags shared by every config-driven subcommand: a key-value file, mirrored
// per-field flags, and repeatable --set overrides. Precedence: file, then
// field flags, then --set in command-line order.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> field_values;
  std::vector<std::string> sets;
};

std::string trimmed(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

void attach_config_flags(CLI::App* cmd, ConfigArgs& out) {
  cmd->add_option("--config", out.config_path, "key = value config file");
  cmd->add_option("--set", out.sets, "override one config key (key=value, repeatable)")
      ->take_all();
  std::istringstream lines(ExperimentConfig().serialize());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trimmed(line.substr(0, eq));
    cmd->add_option_function<std::string>(
        "--" + key,
        [key, &out](const std::string& v) { out.field_values.emplace_back(key, v); },
        "config field " + key);
  }
}

ExperimentConfig build_config(const ConfigArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = ExperimentConfig::load_file(args.config_path);
  for (const auto& [key, value] : args.field_values) cfg.set(key, value);
  for (const std::string& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ValidationError("--set expects key=value, got \"" + kv + "\"");
    cfg.set(trimmed(kv.substr(0, eq)), trimmed(kv.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing");
  return out;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

int cmd_generate(const ConfigArgs& args) {
  ExperimentConfig cfg = build_config(args);
  if (!cfg.pll_csv.empty())
    throw ValidationError(
        "generate: config already points at pll_csv; clear it to synthesize");

  FlipProfile profile;
  profile.base_rate = cfg.q;
  profile.perturbation = cfg.perturbation;
  const int label_count = cfg.clean_csv.empty()
                              ? cfg.mixture_classes
                              : load_clean_csv(cfg.clean_csv).label_count;
  std::optional<RivalMatrix> rival;
  if (cfg.mode == "adversary_aware")
    rival = cfg.rival_matrix_path.empty()
                ? build_rival_matrix(label_count, cfg.rival_support, cfg.rival_weight)
                : RivalMatrix(load_matrix_text(cfg.rival_matrix_path));

  const AmbiguityReport gate =
      check_ambiguity(profile, label_count, rival ? &*rival : nullptr);

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  std::ofstream report = open_output(dir / "generation_report.txt");
  report << "mode = " << cfg.mode << "\n";
  report << "label_count = " << label_count << "\n";
  report << "ambiguity_ok = " << (gate.ok ? "true" : "false") << "\n";
  report << "max_flip_rate = " << format_double(gate.max_rate) << "\n";
  if (!gate.ok) {
    report << "aborted = true\n";
    std::cerr << "generate: ambiguity check failed (max flip rate "
              << format_double(gate.max_rate)
              << "); see " << (dir / "generation_report.txt").string() << "\n";
    return kExitUsage;
  }

  const TrainJob job = prepare_job(cfg);
  const GenerationReport audit = audit_generation(job.train);
  report << "train_instances = " << job.train.size() << "\n";
  report << "test_instances = " << job.test.size() << "\n";
  report << "mean_cardinality = " << format_double(audit.mean_cardinality) << "\n";
  report << "full_set_count = " << audit.full_set_count << "\n";
  report << "true_label_always_present = "
         << (audit.true_label_always_present ? "true" : "false") << "\n";
  report << "label_counts =";
  for (int y = 0; y < label_count; ++y)
    report << " " << static_cast<std::int64_t>(audit.label_counts[y]);
  report << "\n";
  report << "inclusion_matrix =\n";
  for (int y = 0; y < label_count; ++y) {
    for (int b = 0; b < label_count; ++b)
      report << (b ? " " : "") << format_double(audit.inclusion(y, b));
    report << "\n";
  }

  save_clean_csv(job.test, (dir / "clean.csv").string());
  save_pll_csv(job.train, (dir / "pll.csv").string());
  if (rival) save_matrix_text(rival->entries(), (dir / "rival_matrix.txt").string());
  cfg.save_file((dir / "generate_config.txt").string());

  std::cout << "wrote " << (dir / "pll.csv").string() << " (" << job.train.size()
            << " instances, mean cardinality "
            << format_double(audit.mean_cardinality) << ") and "
            << (dir / "clean.csv").string() << " (" << job.test.size()
            << " instances)\n";
  return kExitOk;
}

int cmd_train(const ConfigArgs& args) {
  const ExperimentConfig cfg = build_config(args);
  const TrainJob job = prepare_job(cfg);

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  std::ofstream metrics = open_output(dir / "metrics.csv");
  metrics << metrics_csv_header() << "\n";
  // flush per epoch so an aborted run keeps its partial curve
  const TrainOutput result =
      train_model(cfg, job, [&metrics](const EpochMetrics& row) {
        metrics << metrics_csv_row(row) << "\n" << std::flush;
      });

  write_timings_csv(result.history, (dir / "timings.csv").string());
  save_checkpoint(result.state, (dir / "checkpoint.txt").string());
  cfg.save_file((dir / "config.txt").string());

  if (result.diverged) {
    std::cerr << "train: diverged (" << result.divergence_note
              << "); last finite epoch " << result.last_finite_epoch << "\n";
    return kExitDivergence;
  }
  std::cout << "trained " << result.history.size() << " epochs, final test accuracy "
            << format_double(result.final_test_accuracy) << ", checkpoint at "
            << (dir / "checkpoint.txt").string() << "\n";
  return kExitOk;
}

int cmd_eval(const ConfigArgs& args, const std::string& checkpoint_path) {
  const ExperimentConfig cfg = build_config(args);
  if (cfg.clean_csv.empty())
    throw ValidationError("eval: needs clean_csv pointing at a labeled dataset");
  const CleanDataset clean = load_clean_csv(cfg.clean_csv);

  ArchitectureSpec arch;
  arch.input_dim = clean.dim();
  arch.hidden = cfg.hidden;
  arch.embed_dim = cfg.embed_dim;
  arch.label_count = clean.label_count;
  const Checkpoint ckpt = load_checkpoint(checkpoint_path, arch);

  std::cout << "top1_accuracy = "
            << format_double(evaluate_accuracy(ckpt.query, clean)) << " ("
            << clean.size() << " instances)\n";
  if (!cfg.pll_csv.empty()) {
    const PllDataset pll = load_pll_csv(cfg.pll_csv);
    const PrototypeBank bank(ckpt.prototypes);
    std::cout << "prototype_accuracy = "
              << format_double(prototype_match_rate(ckpt.query, bank, pll)) << " ("
              << pll.size() << " instances)\n";
  }
  return kExitOk;
}

// Deterministic fixture for the risk probes: mixture posteriors on sampled
// points against softmaxed random classifier outputs.
void add_risk_checks(verify::ConsistencyReport& report, std::uint64_t seed) {
  const int c = 4, points = 8;
  const GaussianMixtureSpec spec = GaussianMixtureSpec::separated(c, c, 3.0);
  const MixturePosterior posterior(spec);
  const CleanDataset sample = sample_mixture(spec, points, seed);

  Eigen::MatrixXd posteriors(points, c), outputs(points, c);
  const rng::Key key(seed, rng::Stream::kGeneric);
  std::uint64_t draw = 0;
  for (int i = 0; i < points; ++i) {
    posteriors.row(i) = posterior(sample.features.row(i).transpose());
    Eigen::VectorXd logits(c);
    for (int j = 0; j < c; ++j) logits[j] = key.with(draw++).gaussian();
    outputs.row(i) = softmax(logits);
  }

  FlipProfile clean_profile;
  clean_profile.base_rate = 0.0;
  clean_profile.perturbation = 0.0;
  verify::CheckResult clean =
      verify::risk_consistency_check(nullptr, clean_profile, posteriors, outputs, 1e-12);
  clean.name = "risk_clean";
  report.add(clean);

  FlipProfile noisy_profile;
  noisy_profile.base_rate = 0.3;
  noisy_profile.perturbation = 0.0;
  const RivalMatrix rival = build_rival_matrix(c, 2, 0.5);
  const auto stability = [&](const std::string& name, const RivalMatrix* r) {
    const verify::RiskProbeResult first =
        verify::risk_probe(r, noisy_profile, posteriors, outputs);
    const verify::RiskProbeResult second =
        verify::risk_probe(r, noisy_profile, posteriors, outputs);
    verify::CheckResult check;
    check.name = name;
    check.measured = std::abs(first.max_deviation - second.max_deviation);
    check.tolerance = 1e-12;
    check.pass = check.measured <= check.tolerance;
    // the deviation itself is a measured quantity, reported not asserted
    check.note = "rerun gap; deviation " + format_double(first.max_deviation);
    report.add(check);
  };
  stability("risk_noisy_standard_stable", nullptr);
  stability("risk_noisy_adversary_stable", &rival);
}

int cmd_verify(const std::string& level, std::uint64_t seed, const std::string& out_dir) {
  if (level != "fast" && level != "full")
    throw ValidationError("verify: level must be fast or full, got \"" + level + "\"");

  verify::ConsistencyReport report;
  report.add(verify::oracle_equivalence_check());
  report.add(verify::column_stochasticity_check());
  for (const auto& check : verify::gradient_fd_check({}).checks) report.add(check);
  add_risk_checks(report, seed);

  const std::vector<verify::RecoverySweepRow> sweep =
      verify::recovery_residual_sweep(seed);
  double worst_tv = 0.0;
  int full_rank = 0;
  for (const auto& row : sweep)
    if (row.full_rank) {
      ++full_rank;
      worst_tv = std::max(worst_tv, row.tv_error);
    }
  verify::CheckResult recovery;
  recovery.name = "posterior_recovery_tv";
  recovery.measured = worst_tv;
  recovery.tolerance = 1e-8;
  recovery.pass = worst_tv <= recovery.tolerance;
  recovery.note = "worst total variation over " + std::to_string(full_rank) + " of " +
                  std::to_string(sweep.size()) + " full-rank sweep configs";
  report.add(recovery);

  report.add(verify::rank_diagnostic(
      "fixture_original_rank",
      adversary_aware_matrix(verify::ablation_fixture_original()).entries()));
  report.add(verify::rank_diagnostic(
      "fixture_new_rank",
      adversary_aware_matrix(verify::ablation_fixture_new()).entries()));

  std::vector<verify::LadderPoint> ladder_points;
  if (level == "full") {
    const verify::LadderResult ladder = verify::classifier_consistency_check({});
    for (const auto& check : ladder.report.checks) report.add(check);
    ladder_points = ladder.points;
  }

  report.print(std::cout);
  for (const auto& point : ladder_points)
    std::cout << "ladder n=" << point.train_size
              << ": bayes_match=" << format_double(point.median_bayes_match)
              << " posterior_tv=" << format_double(point.median_posterior_tv) << "\n";

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  {
    std::ofstream csv = open_output(dir / "verify_report.csv");
    report.write_csv(csv);
  }
  {
    std::ofstream csv = open_output(dir / "recovery_sweep.csv");
    verify::write_sweep_csv(sweep, csv);
  }
  return report.all_pass() ? kExitOk : kExitVerification;
}

int cmd_ablate(const ConfigArgs& args, int seeds) {
  if (seeds < 1) throw ValidationError("ablate: needs at least one seed");
  const ExperimentConfig cfg = build_config(args);
  const std::vector<AblationRow> rows = run_ablation(cfg, seeds);

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  std::ofstream csv = open_output(dir / "ablate.csv");
  csv << "seed,with_correction,without_correction\n";
  std::vector<double> with, without;
  for (const auto& row : rows) {
    csv << row.seed << "," << format_double(row.with_correction) << ","
        << format_double(row.without_correction) << "\n";
    with.push_back(row.with_correction);
    without.push_back(row.without_correction);
    std::cout << "seed " << row.seed << ": with=" << format_double(row.with_correction)
              << " without=" << format_double(row.without_correction) << "\n";
  }
  const double med_with = median(with), med_without = median(without);
  std::cout << "median with_correction = " << format_double(med_with) << "\n";
  std::cout << "median without_correction = " << format_double(med_without) << "\n";
  std::cout << "correction "
            << (med_with >= med_without ? "helps or ties" : "hurts") << " at q="
            << format_double(cfg.q) << " (" << cfg.mode << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversary-aware partial-label learning toolkit"};
  app.require_subcommand(1);

  ConfigArgs generate_args;
  CLI::App* generate = app.add_subcommand(
      "generate", "synthesize clean + partially labeled CSVs and audit them");
  attach_config_flags(generate, generate_args);

  ConfigArgs train_args;
  CLI::App* train = app.add_subcommand(
      "train", "run the disambiguation training loop, streaming metrics");
  attach_config_flags(train, train_args);

  ConfigArgs eval_args;
  std::string checkpoint_path;
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on labeled data");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file from train")
      ->required();
  attach_config_flags(eval, eval_args);

  std::string verify_level = "fast";
  std::uint64_t verify_seed = 1;
  std::string verify_out = "out";
  CLI::App* verify_cmd =
      app.add_subcommand("verify", "run the consistency suites and emit a report");
  verify_cmd->add_option("--level", verify_level, "fast or full (full adds the ladder)");
  verify_cmd->add_option("--seed", verify_seed, "seed for the probe fixtures");
  verify_cmd->add_option("--out", verify_out, "directory for report CSVs");

  ConfigArgs ablate_args;
  int ablate_seeds = 5;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "paired with/without-correction runs over several seeds");
  ablate->add_option("--seeds", ablate_seeds, "number of paired seeds");
  attach_config_flags(ablate, ablate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(generate_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args, checkpoint_path);
    if (verify_cmd->parsed()) return cmd_verify(verify_level, verify_seed, verify_out);
    if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_seeds);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const RankDeficiencyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerification;
  }
  return kExitUsage;
}
