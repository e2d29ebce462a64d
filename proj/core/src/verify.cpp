#include "rivalpll/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "rivalpll/data.hpp"
#include "rivalpll/losses.hpp"
#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"
#include "rivalpll/trainer.hpp"

namespace rivalpll::verify {

bool ConsistencyReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckResult& c) { return c.pass; });
}

void ConsistencyReport::add(CheckResult check) { checks.push_back(std::move(check)); }

void ConsistencyReport::print(std::ostream& out) const {
  for (const auto& c : checks) {
    out << (c.pass ? "[PASS] " : "[FAIL] ") << c.name
        << ": measured=" << format_double(c.measured)
        << " tolerance=" << format_double(c.tolerance);
    if (!c.note.empty()) out << " (" << c.note << ")";
    out << "\n";
  }
}

void ConsistencyReport::write_csv(std::ostream& out) const {
  out << "check,measured,tolerance,pass,note\n";
  for (const auto& c : checks)
    out << c.name << ',' << format_double(c.measured) << ','
        << format_double(c.tolerance) << ',' << (c.pass ? "true" : "false") << ','
        << c.note << "\n";
}

Eigen::MatrixXd oracle_q_bar(int label_count, const FlipProfile& profile) {
  if (label_count < 3 || label_count > 6)
    throw ValidationError("oracle_q_bar: supports 3 <= c <= 6");
  profile.validate(label_count);
  const int c = label_count;
  const std::uint32_t total = 1u << c;
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(total, c);
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    for (int y = 0; y < c; ++y) {
      double prob = 1.0;
      for (int b = 0; b < c; ++b) {
        const bool in = (mask >> b) & 1u;
        if (b == y)
          prob *= in ? 1.0 : 0.0;
        else
          prob *= in ? profile.rate(b) : 1.0 - profile.rate(b);
      }
      table(mask, y) += prob;
    }
  }
  Eigen::MatrixXd out = table.middleRows(1, total - 2);
  for (int y = 0; y < c; ++y) {
    const double mass = out.col(y).sum();
    if (!(mass > 0.0))
      throw ValidationError("oracle_q_bar: column " + std::to_string(y) + " has no mass");
    out.col(y) /= mass;
  }
  return out;
}

namespace {

constexpr int kMaxRiskLabels = 5;

double set_loss(const Eigen::VectorXd& f, std::uint32_t mask, int c,
                const AdversaryAwareMatrix& m) {
  Eigen::VectorXd target = Eigen::VectorXd::Zero(c);
  int members = 0;
  for (int b = 0; b < c; ++b)
    if ((mask >> b) & 1u) {
      target[b] = 1.0;
      ++members;
    }
  target /= members;
  return adversary_aware_ce(f, target, m).value;
}

double standard_set_probability(std::uint32_t mask, int y, int c,
                                const Eigen::VectorXd& rates) {
  if (!((mask >> y) & 1u)) return 0.0;
  double prob = 1.0;
  for (int b = 0; b < c; ++b) {
    if (b == y) continue;
    prob *= ((mask >> b) & 1u) ? rates[b] : 1.0 - rates[b];
  }
  return prob;
}

double rival_set_probability(std::uint32_t mask, int y, int rival, int c,
                             const Eigen::VectorXd& rates) {
  if (!((mask >> y) & 1u) || !((mask >> rival) & 1u)) return 0.0;
  double prob = 1.0;
  for (int b = 0; b < c; ++b) {
    if (b == y || b == rival) continue;
    prob *= ((mask >> b) & 1u) ? rates[b] : 1.0 - rates[b];
  }
  return prob;
}

}  // namespace

RiskProbeResult risk_probe(const RivalMatrix* rival, const FlipProfile& profile,
                           const Eigen::MatrixXd& posteriors,
                           const Eigen::MatrixXd& outputs) {
  const int c = static_cast<int>(posteriors.cols());
  if (c < 3 || c > kMaxRiskLabels)
    throw ValidationError("risk_probe: supports 3 <= c <= 5");
  if (outputs.rows() != posteriors.rows() || outputs.cols() != c)
    throw ValidationError("risk_probe: grid shape mismatch");
  profile.validate(c);
  if (rival && rival->label_count() != c)
    throw ValidationError("risk_probe: rival matrix label count mismatch");

  const bool rival_active = rival && rival->entries().cwiseAbs().maxCoeff() > 0.0;
  const AdversaryAwareMatrix m = rival_active
                                     ? correction_matrix(*rival)
                                     : AdversaryAwareMatrix::identity(c);
  const Eigen::VectorXd rates = profile.rates(c);
  const std::uint32_t total = 1u << c;

  RiskProbeResult out;
  out.per_point.resize(posteriors.rows());
  for (Eigen::Index g = 0; g < posteriors.rows(); ++g) {
    const Eigen::VectorXd post = posteriors.row(g).transpose();
    const Eigen::VectorXd f = outputs.row(g).transpose();
    if (std::abs(post.sum() - 1.0) > 1e-6)
      throw ValidationError("risk_probe: posterior row " + std::to_string(g) +
                            " is not a distribution");

    double clean = 0.0;
    for (int y = 0; y < c; ++y)
      clean -= post[y] * std::log(std::max(f[y], kProbFloor));

    double corrected = 0.0;
    for (int y = 0; y < c; ++y) {
      if (post[y] == 0.0) continue;
      double expected_loss = 0.0;
      if (rival_active) {
        for (int r = 0; r < c; ++r) {
          const double w = rival->entries()(y, r);
          if (r == y || w == 0.0) continue;
          for (std::uint32_t mask = 1; mask < total; ++mask) {
            const double p = rival_set_probability(mask, y, r, c, rates);
            if (p > 0.0) expected_loss += w * p * set_loss(f, mask, c, m);
          }
        }
      } else {
        for (std::uint32_t mask = 1; mask < total; ++mask) {
          const double p = standard_set_probability(mask, y, c, rates);
          if (p > 0.0) expected_loss += p * set_loss(f, mask, c, m);
        }
      }
      corrected += post[y] * expected_loss;
    }
    out.per_point[g] = std::abs(corrected - clean);
    out.max_deviation = std::max(out.max_deviation, out.per_point[g]);
  }
  return out;
}

CheckResult risk_consistency_check(const RivalMatrix* rival, const FlipProfile& profile,
                                   const Eigen::MatrixXd& posteriors,
                                   const Eigen::MatrixXd& outputs, double tolerance) {
  const RiskProbeResult probe = risk_probe(rival, profile, posteriors, outputs);
  CheckResult out;
  out.name = "risk_consistency";
  out.measured = probe.max_deviation;
  out.tolerance = tolerance;
  out.pass = probe.max_deviation <= tolerance;
  out.note = "max |corrected risk - clean risk| over " +
             std::to_string(posteriors.rows()) + " grid points";
  return out;
}

CheckResult rank_diagnostic(const std::string& name, const Eigen::MatrixXd& m) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(kStructuralTol);
  CheckResult out;
  out.name = name;
  out.measured = static_cast<double>(qr.rank());
  out.tolerance = static_cast<double>(m.cols());
  out.pass = qr.rank() == m.cols();
  out.note = "column rank vs required full rank";
  return out;
}

CheckResult oracle_equivalence_check(double tolerance) {
  double worst = 0.0;
  for (const int c : {3, 4, 5})
    for (const double q : {0.1, 0.3, 0.5}) {
      FlipProfile profile;
      profile.base_rate = q;
      worst = std::max(
          worst, (enumerate_q_bar(c, profile) - oracle_q_bar(c, profile))
                     .cwiseAbs()
                     .maxCoeff());
    }
  CheckResult out;
  out.name = "oracle_equivalence";
  out.measured = worst;
  out.tolerance = tolerance;
  out.pass = worst <= tolerance;
  out.note = "max entrywise gap, dual candidate-set enumerations";
  return out;
}

CheckResult column_stochasticity_check(double tolerance) {
  double worst = 0.0;
  for (const int c : {3, 4, 5})
    for (const double q : {0.1, 0.3, 0.5}) {
      FlipProfile profile;
      profile.base_rate = q;
      const Eigen::MatrixXd q_bar = enumerate_q_bar(c, profile);
      worst = std::max(
          worst, (q_bar.colwise().sum().array() - 1.0).abs().maxCoeff());
    }
  CheckResult out;
  out.name = "column_stochasticity";
  out.measured = worst;
  out.tolerance = tolerance;
  out.pass = worst <= tolerance;
  out.note = "max |column sum - 1| of the candidate-set distribution";
  return out;
}

namespace {

double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

ConsistencyReport gradient_fd_check(const GradientCheckConfig& cfg) {
  const int c = cfg.label_count;
  const int support = std::min(2, c - 1);
  const RivalMatrix rival = build_rival_matrix(c, support, 1.0 / support);
  const AdversaryAwareMatrix m = correction_matrix(rival);
  const double lambda = 0.5, tau = 0.07;

  double worst_cls = 0.0, worst_con = 0.0, worst_comb = 0.0;
  int measured = 0, rerolled = 0;
  for (int inst = 0; measured < cfg.instances; ++inst) {
    if (inst >= 10 * cfg.instances)
      throw ValidationError("gradient_fd_check: too many degenerate draws");
    const std::uint64_t s = cfg.seed + 977 * static_cast<std::uint64_t>(inst);
    ArchitectureSpec arch;
    arch.input_dim = cfg.input_dim;
    arch.hidden = cfg.hidden;
    arch.embed_dim = cfg.embed_dim;
    arch.label_count = c;
    NetworkParams params = NetworkParams::init(arch, s);

    const rng::Key key(s, rng::Stream::kGeneric);
    std::uint64_t draw = 0;
    // zero-bias init parks ReLU units and projection rows near their kinks,
    // where the h^2 truncation of central differences swamps the tolerance;
    // generic-position biases keep every instance in smooth territory
    const auto jitter = [&](Eigen::VectorXd& b) {
      for (Eigen::Index t = 0; t < b.size(); ++t)
        b[t] = 0.3 * key.with(draw++).gaussian();
    };
    for (auto& layer : params.encoder) jitter(layer.b);
    jitter(params.proj_hidden.b);
    jitter(params.proj_out.b);
    jitter(params.classifier.b);

    Eigen::MatrixXd x(cfg.batch, cfg.input_dim);
    for (int i = 0; i < cfg.batch; ++i)
      for (int j = 0; j < cfg.input_dim; ++j) x(i, j) = key.with(draw++).gaussian();

    Eigen::MatrixXd targets(cfg.batch, c);
    for (int i = 0; i < cfg.batch; ++i) {
      for (int j = 0; j < c; ++j)
        targets(i, j) = -std::log(key.with(draw++).uniform_open());
      targets.row(i) /= targets.row(i).sum();
    }

    Eigen::MatrixXd keys(cfg.batch, cfg.embed_dim);
    for (int i = 0; i < cfg.batch; ++i) {
      for (int j = 0; j < cfg.embed_dim; ++j)
        keys(i, j) = key.with(draw++).gaussian();
      keys.row(i).normalize();
    }
    std::vector<int> preds(cfg.batch);
    for (int i = 0; i < cfg.batch; ++i)
      preds[i] = static_cast<int>(key.with(draw++).uniform() * c);

    EmbeddingQueue queue(4, cfg.embed_dim);
    Eigen::MatrixXd queued(4, cfg.embed_dim);
    std::vector<int> queued_labels(4);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < cfg.embed_dim; ++j)
        queued(i, j) = key.with(draw++).gaussian();
      queued.row(i).normalize();
      queued_labels[i] = static_cast<int>(key.with(draw++).uniform() * c);
    }
    queue.push(queued, queued_labels);

    struct Values {
      double cls, con, comb;
    };
    const auto evaluate = [&](const NetworkParams& p) -> Values {
      const ForwardCache cache = forward_batch(p, x);
      const ContrastPool pool =
          build_contrast_pool(cache.embeddings, keys, preds, queue);
      const CombinedLossResult res =
          combined_loss(cache.probs, targets, m, &pool, lambda, tau);
      const BatchContrastiveResult con = contrastive_batch(pool, tau);
      return {res.breakdown.classification, con.value, res.breakdown.combined};
    };

    const ForwardCache cache = forward_batch(params, x);
    // central differences need a differentiable neighborhood: a draw that
    // parks a batch row on the normalization floor sits exactly on the kink,
    // where neither side of the comparison is meaningful
    if (cache.proj_pre.rowwise().norm().minCoeff() < 1e-3) {
      ++rerolled;
      continue;
    }
    ++measured;
    const ContrastPool pool =
        build_contrast_pool(cache.embeddings, keys, preds, queue);
    const CombinedLossResult res =
        combined_loss(cache.probs, targets, m, &pool, lambda, tau);
    const BatchContrastiveResult con = contrastive_batch(pool, tau);
    NetworkParams g_cls =
        backward_batch(params, cache, res.grad_logits, Eigen::MatrixXd());
    NetworkParams g_con =
        backward_batch(params, cache, Eigen::MatrixXd(), con.grad_queries);
    NetworkParams g_comb =
        backward_batch(params, cache, res.grad_logits, res.grad_embeddings);

    auto views = param_views(params);
    const auto views_cls = param_views(static_cast<const NetworkParams&>(g_cls));
    const auto views_con = param_views(static_cast<const NetworkParams&>(g_con));
    const auto views_comb = param_views(static_cast<const NetworkParams&>(g_comb));
    for (std::size_t v = 0; v < views.size(); ++v) {
      for (Eigen::Index t = 0; t < views[v].size(); ++t) {
        const double saved = views[v].data[t];
        views[v].data[t] = saved + cfg.step;
        const Values plus = evaluate(params);
        views[v].data[t] = saved - cfg.step;
        const Values minus = evaluate(params);
        views[v].data[t] = saved;
        const double denom = 2.0 * cfg.step;
        worst_cls = std::max(
            worst_cls, relative_gap((plus.cls - minus.cls) / denom,
                                    views_cls[v].data[t]));
        worst_con = std::max(
            worst_con, relative_gap((plus.con - minus.con) / denom,
                                    views_con[v].data[t]));
        worst_comb = std::max(
            worst_comb, relative_gap((plus.comb - minus.comb) / denom,
                                     views_comb[v].data[t]));
      }
    }
  }

  ConsistencyReport report;
  const auto add = [&](const std::string& name, double worst) {
    CheckResult r;
    r.name = name;
    r.measured = worst;
    r.tolerance = cfg.tolerance;
    r.pass = worst < cfg.tolerance;
    r.note = "worst relative error vs central finite differences over " +
             std::to_string(cfg.instances) + " instances";
    if (rerolled > 0)
      r.note += " (" + std::to_string(rerolled) + " degenerate draws re-rolled)";
    report.add(r);
  };
  add("grad_classification", worst_cls);
  add("grad_contrastive", worst_con);
  add("grad_combined", worst_comb);
  return report;
}

LadderResult classifier_consistency_check(const LadderConfig& cfg,
                                          const RivalMatrix* correction_override) {
  if (cfg.label_count < 3 || cfg.seeds < 1 || cfg.train_sizes.empty())
    throw ValidationError("classifier_consistency_check: bad config");

  LadderResult result;
  const int c = cfg.label_count;

  std::optional<RivalMatrix> preset;
  if (cfg.adversary)
    preset = build_rival_matrix(c, cfg.rival_support, 1.0 / cfg.rival_support);
  const RivalMatrix* rival_used =
      correction_override ? correction_override : (preset ? &*preset : nullptr);
  const AdversaryAwareMatrix correction =
      rival_used ? correction_matrix(*rival_used)
                 : AdversaryAwareMatrix::identity(c);
  result.report.add(rank_diagnostic("correction_full_rank", correction.entries()));
  if (!result.report.checks.back().pass) return result;  // flagged before training

  const GaussianMixtureSpec spec =
      GaussianMixtureSpec::separated(c, cfg.dim, cfg.separation);
  const MixturePosterior posterior(spec);

  for (const int n : cfg.train_sizes) {
    std::vector<double> matches, tvs;
    for (int s = 0; s < cfg.seeds; ++s) {
      ExperimentConfig tc;
      tc.mixture_classes = c;
      tc.mixture_dim = cfg.dim;
      tc.mixture_separation = cfg.separation;
      tc.train_size = n;
      tc.test_size = cfg.test_size;
      tc.mode = cfg.adversary ? "adversary_aware" : "standard";
      tc.q = cfg.q;
      tc.perturbation = cfg.perturbation;
      tc.rival_support = cfg.rival_support;
      tc.rival_weight = 1.0 / cfg.rival_support;
      tc.hidden = {32, 32};
      tc.embed_dim = 16;
      tc.aug_noise = 0.0;
      tc.aug_mask = 0.0;
      tc.phi = 0.8;  // desk budgets need the pseudo-label EMA to actually move
      tc.lambda = 0.0;
      tc.batch_size = 128;
      tc.lr = 0.05;
      tc.weight_decay = 1e-4;
      tc.epochs = cfg.epochs;
      tc.warmup_epochs = 0;
      tc.seed = cfg.base_seed + static_cast<std::uint64_t>(s);

      TrainJob job = prepare_job(tc);
      if (correction_override) job.rival = *correction_override;
      const TrainOutput run = train_model(tc, job);
      if (run.diverged) {
        CheckResult diverged;
        diverged.name = "training_divergence_n" + std::to_string(n);
        diverged.measured = 1.0;
        diverged.tolerance = 0.0;
        diverged.pass = false;
        diverged.note = run.divergence_note;
        result.report.add(diverged);
        return result;
      }

      const ForwardCache cache = forward_batch(run.state.query, job.test.features);
      int bayes_hits = 0;
      double tv_sum = 0.0;
      for (int i = 0; i < job.test.size(); ++i) {
        const Eigen::VectorXd x = job.test.features.row(i).transpose();
        const Eigen::VectorXd f = cache.probs.row(i).transpose();
        if (argmax_index(f) == posterior.bayes_label(x)) ++bayes_hits;
        tv_sum += total_variation(f, posterior(x));
      }
      matches.push_back(static_cast<double>(bayes_hits) / job.test.size());
      tvs.push_back(tv_sum / job.test.size());
    }
    std::sort(matches.begin(), matches.end());
    std::sort(tvs.begin(), tvs.end());
    LadderPoint point;
    point.train_size = n;
    point.median_bayes_match = matches[matches.size() / 2];
    point.median_posterior_tv = tvs[tvs.size() / 2];
    result.points.push_back(point);
  }

  double worst_drop = 0.0;
  for (std::size_t i = 1; i < result.points.size(); ++i)
    worst_drop = std::max(worst_drop, result.points[i - 1].median_bayes_match -
                                          result.points[i].median_bayes_match);
  result.monotone = worst_drop <= 0.01;

  CheckResult monotone;
  monotone.name = "ladder_monotone_bayes_match";
  monotone.measured = worst_drop;
  monotone.tolerance = 0.01;
  monotone.pass = result.monotone;
  monotone.note = "largest drop in seed-median Bayes match as n grows";
  result.report.add(monotone);

  CheckResult final_match;
  final_match.name = "final_bayes_match";
  final_match.measured = result.points.back().median_bayes_match;
  final_match.tolerance = cfg.min_final_match;
  final_match.pass = final_match.measured >= cfg.min_final_match;
  final_match.note = "seed-median Bayes match at n=" +
                     std::to_string(result.points.back().train_size);
  result.report.add(final_match);
  return result;
}

std::vector<RecoverySweepRow> recovery_residual_sweep(std::uint64_t seed) {
  std::vector<RecoverySweepRow> rows;
  const rng::Key key(seed, rng::Stream::kSimplex);
  std::uint64_t draw = 0;
  for (const int c : {3, 4, 5}) {
    std::vector<int> supports = {1, 2, c - 1};
    supports.erase(std::unique(supports.begin(), supports.end()), supports.end());
    for (const double q : {0.1, 0.3, 0.5}) {
      for (const int k : supports) {
        RecoverySweepRow row;
        row.label_count = c;
        row.q = q;
        row.support = k;
        row.weight = 1.0 / k;
        const RivalMatrix rival = build_rival_matrix(c, k, row.weight);
        FlipProfile profile;
        profile.base_rate = q;
        profile.perturbation = 0.0;
        const Eigen::MatrixXd q_star = enumerate_q_star(rival, profile);

        Eigen::VectorXd p(c);
        for (int i = 0; i < c; ++i)
          p[i] = -std::log(key.with(draw++).uniform_open());
        p /= p.sum();
        const Eigen::VectorXd observed = q_star * p;
        try {
          const PosteriorRecovery rec = recover_posterior(q_star, observed);
          row.full_rank = true;
          row.tv_error = total_variation(rec.posterior, p);
          row.residual = rec.residual_norm;
        } catch (const RankDeficiencyError&) {
          row.full_rank = false;
          row.tv_error = std::numeric_limits<double>::quiet_NaN();
          row.residual = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<RecoverySweepRow>& rows, std::ostream& out) {
  out << "c,q,support,weight,full_rank,tv_error,residual\n";
  for (const auto& r : rows)
    out << r.label_count << ',' << format_double(r.q) << ',' << r.support << ','
        << format_double(r.weight) << ',' << (r.full_rank ? "true" : "false") << ','
        << format_double(r.tv_error) << ',' << format_double(r.residual) << "\n";
}

RivalMatrix ablation_fixture_original() {
  Eigen::MatrixXd t(6, 6);
  t << 0.0, 0.2, 0.0, 0.2, 0.2, 0.2,
       0.2, 0.0, 0.2, 0.2, 0.0, 0.2,
       0.2, 0.2, 0.0, 0.2, 0.0, 0.2,
       0.2, 0.2, 0.0, 0.0, 0.2, 0.2,
       0.2, 0.2, 0.0, 0.2, 0.0, 0.2,
       0.2, 0.0, 0.2, 0.2, 0.2, 0.0;
  return RivalMatrix::unchecked(std::move(t));
}

RivalMatrix ablation_fixture_new() {
  Eigen::MatrixXd t(6, 6);
  t << 0.0, 0.3, 0.0, 0.3, 0.3, 0.3,
       0.3, 0.0, 0.3, 0.3, 0.0, 0.3,
       0.3, 0.3, 0.0, 0.3, 0.0, 0.3,
       0.3, 0.3, 0.0, 0.0, 0.3, 0.3,
       0.3, 0.3, 0.0, 0.3, 0.0, 0.3,
       0.3, 0.0, 0.3, 0.3, 0.3, 0.0;
  return RivalMatrix::unchecked(std::move(t));
}

}  // namespace rivalpll::verify
