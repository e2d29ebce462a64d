#include "rivalpll/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rivalpll/losses.hpp"
#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"

namespace rivalpll {

namespace {

std::vector<int> shuffled_order(int n, std::uint64_t seed, int epoch) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const rng::Key key =
      rng::Key(seed, rng::Stream::kShuffle).with(static_cast<std::uint64_t>(epoch));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(key.with(static_cast<std::uint64_t>(i)).uniform() * (i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

RivalMatrix resolve_rival(const ExperimentConfig& cfg, int label_count) {
  if (!cfg.rival_matrix_path.empty())
    return RivalMatrix(load_matrix_text(cfg.rival_matrix_path));
  return build_rival_matrix(label_count, cfg.rival_support, cfg.rival_weight);
}

}  // namespace

TrainJob prepare_job(const ExperimentConfig& cfg) {
  cfg.validate();
  const CorruptionMode mode = corruption_mode_from_string(cfg.mode);
  TrainJob job;

  if (!cfg.pll_csv.empty()) {
    job.train = load_pll_csv(cfg.pll_csv);
    if (cfg.clean_csv.empty())
      throw ValidationError("prepare_job: training from pll_csv needs clean_csv for the test split");
    job.test = load_clean_csv(cfg.clean_csv);
    if (job.test.label_count != job.train.clean.label_count)
      throw ValidationError("prepare_job: train and test label counts disagree");
    if (job.train.mode == CorruptionMode::kAdversaryAware)
      job.rival = resolve_rival(cfg, job.train.clean.label_count);
    return job;
  }

  CleanDataset train_clean, test_clean;
  if (!cfg.clean_csv.empty()) {
    const CleanDataset all = load_clean_csv(cfg.clean_csv);
    if (all.size() < cfg.train_size + cfg.test_size)
      throw ValidationError("prepare_job: " + cfg.clean_csv + " has " +
                            std::to_string(all.size()) + " rows, need " +
                            std::to_string(cfg.train_size + cfg.test_size));
    train_clean.label_count = all.label_count;
    train_clean.features = all.features.topRows(cfg.train_size);
    train_clean.labels.assign(all.labels.begin(), all.labels.begin() + cfg.train_size);
    test_clean.label_count = all.label_count;
    test_clean.features = all.features.middleRows(cfg.train_size, cfg.test_size);
    test_clean.labels.assign(all.labels.begin() + cfg.train_size,
                             all.labels.begin() + cfg.train_size + cfg.test_size);
  } else {
    const GaussianMixtureSpec spec = GaussianMixtureSpec::separated(
        cfg.mixture_classes, cfg.mixture_dim, cfg.mixture_separation);
    const CleanDataset all = sample_mixture(spec, cfg.train_size + cfg.test_size, cfg.seed);
    train_clean.label_count = all.label_count;
    train_clean.features = all.features.topRows(cfg.train_size);
    train_clean.labels.assign(all.labels.begin(), all.labels.begin() + cfg.train_size);
    test_clean.label_count = all.label_count;
    test_clean.features = all.features.bottomRows(cfg.test_size);
    test_clean.labels.assign(all.labels.end() - cfg.test_size, all.labels.end());
  }

  FlipProfile profile;
  profile.base_rate = cfg.q;
  profile.perturbation = cfg.perturbation;
  const AmbiguityReport ambiguity =
      check_ambiguity(profile, train_clean.label_count, nullptr);
  if (!ambiguity.ok)
    throw ValidationError("prepare_job: flip profile fails the ambiguity check (max rate " +
                          format_double(ambiguity.max_rate) + ")");

  if (mode == CorruptionMode::kAdversaryAware) {
    const RivalMatrix rival = resolve_rival(cfg, train_clean.label_count);
    job.train = generate_adversary_aware(train_clean, rival, profile, cfg.seed);
    job.rival = rival;
  } else {
    job.train = generate_standard(train_clean, profile, cfg.seed);
  }
  job.test = std::move(test_clean);
  return job;
}

double evaluate_accuracy(const NetworkParams& params, const CleanDataset& data) {
  data.validate();
  const ForwardCache cache = forward_batch(params, data.features);
  int hits = 0;
  for (int i = 0; i < data.size(); ++i)
    if (argmax_index(cache.probs.row(i).transpose()) == data.labels[i]) ++hits;
  return static_cast<double>(hits) / data.size();
}

double prototype_match_rate(const NetworkParams& params, const PrototypeBank& bank,
                            const PllDataset& data) {
  data.validate();
  const ForwardCache cache = forward_batch(params, data.clean.features);
  int hits = 0;
  for (int i = 0; i < data.size(); ++i) {
    const int guess = bank.restricted_argmax(
        cache.embeddings.row(i).transpose(),
        data.candidate_sets[static_cast<std::size_t>(i)]);
    if (guess == data.clean.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / data.size();
}

TrainOutput train_model(const ExperimentConfig& cfg, const TrainJob& job,
                        const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  job.train.validate();
  job.test.validate();
  const int n = job.train.size();
  const int c = job.train.clean.label_count;
  if (job.test.label_count != c)
    throw ValidationError("train_model: test label count mismatch");

  ArchitectureSpec arch;
  arch.input_dim = job.train.clean.dim();
  arch.hidden = cfg.hidden;
  arch.embed_dim = cfg.embed_dim;
  arch.label_count = c;
  arch.validate();

  TrainOutput out;
  out.state.query = NetworkParams::init(arch, cfg.seed);
  out.state.key = out.state.query;
  NetworkParams& query = out.state.query;
  NetworkParams& key = out.state.key;

  SgdOptimizer optimizer(query, {cfg.lr, cfg.sgd_momentum, cfg.weight_decay, cfg.epochs});
  PrototypeBank bank(c, cfg.embed_dim, cfg.seed);
  PseudoLabelStore pseudo(n, c, cfg.phi);
  EmbeddingQueue queue(cfg.effective_queue_capacity(n), cfg.embed_dim);
  const AdversaryAwareMatrix correction =
      cfg.correct_loss && job.train.mode == CorruptionMode::kAdversaryAware && job.rival
          ? correction_matrix(*job.rival)
          : AdversaryAwareMatrix::identity(c);
  const AugmentationSpec aug{cfg.aug_noise, cfg.aug_mask};
  const int warmup = cfg.effective_warmup();

  for (int epoch = 0; epoch < cfg.epochs && !out.diverged; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool warm = epoch < warmup;
    const double lambda = warm ? 0.0 : cfg.lambda;
    const std::vector<int> order = shuffled_order(n, cfg.seed, epoch);

    double cls_sum = 0.0, con_sum = 0.0, combined_sum = 0.0;
    std::int64_t skipped = 0;
    int seen = 0;

    for (int start = 0; start < n && !out.diverged; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      Eigen::MatrixXd xq(b, arch.input_dim), xk(b, arch.input_dim);
      for (int r = 0; r < b; ++r) {
        const int idx = order[static_cast<std::size_t>(start + r)];
        const Eigen::VectorXd x = job.train.clean.features.row(idx).transpose();
        xq.row(r) = augment(x, aug, cfg.seed, epoch, idx, AugView::kQuery).transpose();
        xk.row(r) = augment(x, aug, cfg.seed, epoch, idx, AugView::kKey).transpose();
      }
      const ForwardCache cache_q = forward_batch(query, xq);
      const ForwardCache cache_k = forward_batch(key, xk);

      // blown-up weights surface as non-finite outputs or as embedding rows
      // knocked off the unit sphere (a dead projection row normalizes to 0)
      const auto degenerate = [](const ForwardCache& cache) {
        if (!cache.probs.allFinite() || !cache.embeddings.allFinite()) return true;
        return ((cache.embeddings.rowwise().norm().array() - 1.0).abs() >
                kStructuralTol)
            .any();
      };
      if (degenerate(cache_q) || degenerate(cache_k)) {
        out.diverged = true;
        out.divergence_note = "degenerate forward state at epoch " +
                              std::to_string(epoch) + ", batch " +
                              std::to_string(start / cfg.batch_size);
        break;
      }

      std::vector<int> preds(static_cast<std::size_t>(b));
      for (int r = 0; r < b; ++r) {
        const int idx = order[static_cast<std::size_t>(start + r)];
        preds[static_cast<std::size_t>(r)] =
            predict_label(cache_q.probs.row(r).transpose(),
                          job.train.candidate_sets[static_cast<std::size_t>(idx)]);
      }
      for (int r = 0; r < b; ++r)
        bank.update(cache_q.embeddings.row(r).transpose(),
                    preds[static_cast<std::size_t>(r)], cfg.alpha, cfg.beta);
      Eigen::MatrixXd targets(b, c);
      for (int r = 0; r < b; ++r) {
        const int idx = order[static_cast<std::size_t>(start + r)];
        pseudo.update(idx, cache_q.embeddings.row(r).transpose(), bank,
                      job.train.candidate_sets[static_cast<std::size_t>(idx)]);
        targets.row(r) = pseudo.row(idx).transpose();
      }

      ContrastPool pool;
      if (lambda > 0.0)
        pool = build_contrast_pool(cache_q.embeddings, cache_k.embeddings, preds, queue);
      const CombinedLossResult loss = combined_loss(
          cache_q.probs, targets, correction, lambda > 0.0 ? &pool : nullptr,
          lambda, cfg.tau);

      if (!std::isfinite(loss.breakdown.combined)) {
        out.diverged = true;
        out.divergence_note = "non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(start / cfg.batch_size);
        break;
      }

      const NetworkParams grads =
          backward_batch(query, cache_q, loss.grad_logits, loss.grad_embeddings);
      optimizer.step(query, grads, epoch);
      ema_update(key, query, cfg.ema_momentum);
      if (!warm) queue.push(cache_k.embeddings, preds);

      cls_sum += loss.breakdown.classification * b;
      con_sum += loss.breakdown.contrastive * b;
      combined_sum += loss.breakdown.combined * b;
      skipped += loss.breakdown.skipped_queries;
      seen += b;
    }
    if (out.diverged) break;

    EpochMetrics row;
    row.epoch = epoch;
    row.cls_loss = cls_sum / seen;
    row.con_loss = con_sum / seen;
    row.combined_loss = combined_sum / seen;
    row.test_accuracy = evaluate_accuracy(query, job.test);
    row.prototype_accuracy = prototype_match_rate(query, bank, job.train);
    row.skipped_queries = skipped;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.history.push_back(row);
    out.last_finite_epoch = epoch;
    if (on_epoch) on_epoch(row);
  }

  out.state.prototypes = bank.vectors();
  out.state.pseudo_targets = pseudo.targets();
  if (!out.history.empty()) out.final_test_accuracy = out.history.back().test_accuracy;
  return out;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, int seeds) {
  if (seeds < 1) throw ValidationError("run_ablation: seeds must be positive");
  std::vector<AblationRow> rows;
  for (int s = 0; s < seeds; ++s) {
    ExperimentConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(s);
    const TrainJob job = prepare_job(cfg);
    AblationRow row;
    row.seed = cfg.seed;
    cfg.correct_loss = true;
    row.with_correction = train_model(cfg, job).final_test_accuracy;
    cfg.correct_loss = false;
    row.without_correction = train_model(cfg, job).final_test_accuracy;
    rows.push_back(row);
  }
  return rows;
}

std::string metrics_csv_header() {
  return "epoch,cls_loss,con_loss,combined,test_acc,proto_acc,skipped_queries";
}

std::string metrics_csv_row(const EpochMetrics& row) {
  std::ostringstream out;
  out << row.epoch << ',' << format_double(row.cls_loss) << ','
      << format_double(row.con_loss) << ',' << format_double(row.combined_loss) << ','
      << format_double(row.test_accuracy) << ',' << format_double(row.prototype_accuracy)
      << ',' << row.skipped_queries;
  return out.str();
}

void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << metrics_csv_header() << "\n";
  for (const auto& row : history) f << metrics_csv_row(row) << "\n";
}

void write_timings_csv(const std::vector<EpochMetrics>& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << "epoch,seconds\n";
  for (const auto& row : history) f << row.epoch << ',' << format_double(row.seconds) << "\n";
}

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
  out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << format_double(m(r, c));
    }
    out << "\n";
  }
}

Eigen::MatrixXd read_tensor(std::istream& in, const std::string& expect_name, int& line_no) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("line " + std::to_string(line_no) + ": expected tensor " + expect_name);
  ++line_no;
  std::istringstream head(line);
  std::string word, name;
  Eigen::Index rows = 0, cols = 0;
  if (!(head >> word >> name >> rows >> cols) || word != "tensor")
    throw ParseError("line " + std::to_string(line_no - 1) + ": malformed tensor header");
  if (name != expect_name)
    throw ParseError("line " + std::to_string(line_no - 1) + ": expected tensor " +
                     expect_name + ", found " + name);
  if (rows < 1 || cols < 1)
    throw ParseError("line " + std::to_string(line_no - 1) + ": bad tensor shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!std::getline(in, line))
      throw ParseError("line " + std::to_string(line_no) + ": truncated tensor " + name);
    ++line_no;
    std::istringstream vals(line);
    for (Eigen::Index c = 0; c < cols; ++c)
      if (!(vals >> m(r, c)))
        throw ParseError("line " + std::to_string(line_no - 1) + ": expected " +
                         std::to_string(cols) + " values in tensor " + name);
  }
  return m;
}

void read_params(std::istream& in, const std::string& prefix, NetworkParams& p, int& line_no) {
  for (auto& view : param_views(p)) {
    const Eigen::MatrixXd m = read_tensor(in, prefix + "." + view.name, line_no);
    if (m.rows() != view.rows || m.cols() != view.cols)
      throw ParseError("checkpoint tensor " + prefix + "." + view.name +
                       " has shape " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()) + ", architecture expects " +
                       std::to_string(view.rows) + "x" + std::to_string(view.cols));
    Eigen::Map<Eigen::MatrixXd>(view.data, view.rows, view.cols) = m;
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << "rivalpll-checkpoint v1\n";
  for (const auto& view : param_views(ckpt.query))
    write_tensor(f, "query." + view.name,
                 Eigen::Map<const Eigen::MatrixXd>(view.data, view.rows, view.cols));
  for (const auto& view : param_views(ckpt.key))
    write_tensor(f, "key." + view.name,
                 Eigen::Map<const Eigen::MatrixXd>(view.data, view.rows, view.cols));
  write_tensor(f, "prototypes", ckpt.prototypes);
  write_tensor(f, "pseudo_targets", ckpt.pseudo_targets);
}

Checkpoint load_checkpoint(const std::string& path, const ArchitectureSpec& arch) {
  arch.validate();
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  std::string line;
  int line_no = 1;
  if (!std::getline(f, line) || line != "rivalpll-checkpoint v1")
    throw ParseError("line 1: not a rivalpll checkpoint");
  ++line_no;

  Checkpoint ckpt;
  ckpt.query = NetworkParams::init(arch, 0);
  ckpt.key = NetworkParams::init(arch, 0);
  read_params(f, "query", ckpt.query, line_no);
  read_params(f, "key", ckpt.key, line_no);
  ckpt.prototypes = read_tensor(f, "prototypes", line_no);
  if (ckpt.prototypes.rows() != arch.label_count || ckpt.prototypes.cols() != arch.embed_dim)
    throw ParseError("checkpoint prototypes shape mismatch");
  ckpt.pseudo_targets = read_tensor(f, "pseudo_targets", line_no);
  if (ckpt.pseudo_targets.cols() != arch.label_count)
    throw ParseError("checkpoint pseudo_targets shape mismatch");
  return ckpt;
}

}  // namespace rivalpll
