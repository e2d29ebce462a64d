#include "rivalpll/nn.hpp"

#include <cmath>
#include <numbers>

#include "rivalpll/numeric.hpp"
#include "rivalpll/rng.hpp"

namespace rivalpll {

void ArchitectureSpec::validate() const {
  if (input_dim < 1) throw ValidationError("ArchitectureSpec: input_dim must be >= 1");
  if (hidden.empty()) throw ValidationError("ArchitectureSpec: needs at least one hidden layer");
  for (int w : hidden)
    if (w < 1) throw ValidationError("ArchitectureSpec: hidden width must be >= 1");
  if (embed_dim < 1) throw ValidationError("ArchitectureSpec: embed_dim must be >= 1");
  if (label_count < 2) throw ValidationError("ArchitectureSpec: label_count must be >= 2");
}

namespace {

DenseLayer init_layer(int out, int in, const rng::Key& key, std::uint64_t tensor_index) {
  DenseLayer layer;
  layer.w.resize(out, in);
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  const rng::Key tk = key.with(tensor_index);
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c)
      layer.w(r, c) = tk.with(static_cast<std::uint64_t>(r))
                          .with(static_cast<std::uint64_t>(c))
                          .uniform_in(-s, s);
  layer.b = Eigen::VectorXd::Zero(out);
  return layer;
}

}  // namespace

NetworkParams NetworkParams::init(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  NetworkParams p;
  p.arch = arch;
  const rng::Key key(seed, rng::Stream::kParamInit);
  std::uint64_t t = 0;
  int in = arch.input_dim;
  for (int width : arch.hidden) {
    p.encoder.push_back(init_layer(width, in, key, t++));
    in = width;
  }
  const int top = arch.hidden.back();
  p.proj_hidden = init_layer(top, top, key, t++);
  p.proj_out = init_layer(arch.embed_dim, top, key, t++);
  p.classifier = init_layer(arch.label_count, top, key, t++);
  return p;
}

NetworkParams NetworkParams::zeros_like(const NetworkParams& other) {
  NetworkParams p;
  p.arch = other.arch;
  for (const auto& l : other.encoder)
    p.encoder.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                         Eigen::VectorXd::Zero(l.b.size())});
  auto zero = [](const DenseLayer& l) {
    return DenseLayer{Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                      Eigen::VectorXd::Zero(l.b.size())};
  };
  p.proj_hidden = zero(other.proj_hidden);
  p.proj_out = zero(other.proj_out);
  p.classifier = zero(other.classifier);
  return p;
}

namespace {

template <class View, class Params>
std::vector<View> views_impl(Params& p) {
  std::vector<View> out;
  auto push = [&out](const std::string& name, auto& layer) {
    out.push_back({name + ".w", layer.w.data(), layer.w.rows(), layer.w.cols()});
    out.push_back({name + ".b", layer.b.data(), layer.b.size(), 1});
  };
  for (std::size_t l = 0; l < p.encoder.size(); ++l)
    push("enc" + std::to_string(l), p.encoder[l]);
  push("proj_hidden", p.proj_hidden);
  push("proj_out", p.proj_out);
  push("classifier", p.classifier);
  return out;
}

}  // namespace

std::vector<ParamView> param_views(NetworkParams& p) {
  return views_impl<ParamView>(p);
}
std::vector<ConstParamView> param_views(const NetworkParams& p) {
  return views_impl<ConstParamView>(p);
}

namespace {

Eigen::MatrixXd affine(const Eigen::MatrixXd& x, const DenseLayer& layer) {
  return (x * layer.w.transpose()).rowwise() + layer.b.transpose();
}

}  // namespace

ForwardCache forward_batch(const NetworkParams& p, const Eigen::MatrixXd& x) {
  p.arch.validate();
  if (x.cols() != p.arch.input_dim)
    throw ValidationError("forward: input has " + std::to_string(x.cols()) +
                          " features, expected " + std::to_string(p.arch.input_dim));
  if (!x.allFinite()) throw ValidationError("forward: non-finite input");

  ForwardCache cache;
  cache.input = x;
  Eigen::MatrixXd h = x;
  for (const auto& layer : p.encoder) {
    cache.enc_pre.push_back(affine(h, layer));
    cache.enc_act.push_back(cache.enc_pre.back().cwiseMax(0.0));
    h = cache.enc_act.back();
  }
  cache.proj_hidden_pre = affine(h, p.proj_hidden);
  cache.proj_hidden_act = cache.proj_hidden_pre.cwiseMax(0.0);
  cache.proj_pre = affine(cache.proj_hidden_act, p.proj_out);
  cache.proj_norm = cache.proj_pre.rowwise().norm().cwiseMax(kNormFloor);
  cache.embeddings = cache.proj_pre.array().colwise() / cache.proj_norm.array();
  cache.logits = affine(h, p.classifier);
  cache.probs.resize(cache.logits.rows(), cache.logits.cols());
  for (Eigen::Index i = 0; i < cache.logits.rows(); ++i)
    cache.probs.row(i) = softmax(cache.logits.row(i).transpose()).transpose();
  return cache;
}

ForwardResult forward(const NetworkParams& p, const Eigen::VectorXd& x) {
  const ForwardCache cache = forward_batch(p, x.transpose());
  return {cache.logits.row(0).transpose(), cache.probs.row(0).transpose(),
          cache.embeddings.row(0).transpose()};
}

NetworkParams backward_batch(const NetworkParams& p, const ForwardCache& cache,
                             const Eigen::MatrixXd& d_logits,
                             const Eigen::MatrixXd& d_embeddings) {
  const Eigen::Index batch = cache.input.rows();
  NetworkParams g = NetworkParams::zeros_like(p);
  const Eigen::MatrixXd& top_act = cache.enc_act.back();

  Eigen::MatrixXd d_top = Eigen::MatrixXd::Zero(batch, top_act.cols());
  if (d_logits.size() != 0) {
    if (d_logits.rows() != batch || d_logits.cols() != p.arch.label_count)
      throw ValidationError("backward: d_logits shape mismatch");
    g.classifier.w = d_logits.transpose() * top_act;
    g.classifier.b = d_logits.colwise().sum().transpose();
    d_top += d_logits * p.classifier.w;
  }

  if (d_embeddings.size() != 0) {
    if (d_embeddings.rows() != batch || d_embeddings.cols() != p.arch.embed_dim)
      throw ValidationError("backward: d_embeddings shape mismatch");
    // Through u = p / max(||p||, floor): below the floor the map is linear.
    Eigen::MatrixXd d_proj(batch, p.arch.embed_dim);
    for (Eigen::Index i = 0; i < batch; ++i) {
      const double raw_norm = cache.proj_pre.row(i).norm();
      if (raw_norm > kNormFloor) {
        const Eigen::VectorXd u = cache.embeddings.row(i).transpose();
        const Eigen::VectorXd du = d_embeddings.row(i).transpose();
        d_proj.row(i) = ((du - u * u.dot(du)) / cache.proj_norm[i]).transpose();
      } else {
        d_proj.row(i) = d_embeddings.row(i) / kNormFloor;
      }
    }
    g.proj_out.w = d_proj.transpose() * cache.proj_hidden_act;
    g.proj_out.b = d_proj.colwise().sum().transpose();
    Eigen::MatrixXd d_ph = (d_proj * p.proj_out.w).array() *
                           (cache.proj_hidden_pre.array() > 0.0).cast<double>();
    g.proj_hidden.w = d_ph.transpose() * top_act;
    g.proj_hidden.b = d_ph.colwise().sum().transpose();
    d_top += d_ph * p.proj_hidden.w;
  }

  Eigen::MatrixXd d_h = std::move(d_top);
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    const Eigen::MatrixXd d_pre =
        d_h.array() * (cache.enc_pre[l].array() > 0.0).cast<double>();
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.enc_act[l - 1];
    g.encoder[l].w = d_pre.transpose() * below;
    g.encoder[l].b = d_pre.colwise().sum().transpose();
    if (l > 0) d_h = d_pre * p.encoder[l].w;
  }
  return g;
}

void SgdConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("SgdConfig: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ValidationError("SgdConfig: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("SgdConfig: weight_decay must be >= 0");
  if (total_epochs < 1) throw ValidationError("SgdConfig: total_epochs must be >= 1");
}

SgdOptimizer::SgdOptimizer(const NetworkParams& params, SgdConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& v : param_views(params))
    velocity_.push_back(Eigen::VectorXd::Zero(v.size()));
}

double SgdOptimizer::learning_rate(int epoch) const {
  if (epoch < 0 || epoch > cfg_.total_epochs)
    throw ValidationError("SgdOptimizer: epoch outside [0, total_epochs]");
  return cfg_.lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * epoch / cfg_.total_epochs));
}

void SgdOptimizer::step(NetworkParams& params, const NetworkParams& grads, int epoch) {
  const double lr = learning_rate(epoch);
  auto pv = param_views(params);
  auto gv = param_views(grads);
  if (pv.size() != velocity_.size() || gv.size() != velocity_.size())
    throw ValidationError("SgdOptimizer: parameter layout changed under the optimizer");
  for (std::size_t t = 0; t < pv.size(); ++t) {
    if (pv[t].size() != velocity_[t].size() || gv[t].size() != velocity_[t].size())
      throw ValidationError("SgdOptimizer: tensor " + pv[t].name + " changed shape");
    Eigen::Map<Eigen::VectorXd> param(pv[t].data, pv[t].size());
    Eigen::Map<const Eigen::VectorXd> grad(gv[t].data, gv[t].size());
    velocity_[t] = cfg_.momentum * velocity_[t] + grad + cfg_.weight_decay * param;
    param -= lr * velocity_[t];
  }
}

void ema_update(NetworkParams& key, const NetworkParams& query, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw ValidationError("ema_update: momentum must lie in [0, 1]");
  auto kv = param_views(key);
  auto qv = param_views(query);
  if (kv.size() != qv.size())
    throw ValidationError("ema_update: parameter layouts disagree");
  for (std::size_t t = 0; t < kv.size(); ++t) {
    if (kv[t].size() != qv[t].size())
      throw ValidationError("ema_update: tensor " + kv[t].name + " shape mismatch");
    Eigen::Map<Eigen::VectorXd> k(kv[t].data, kv[t].size());
    Eigen::Map<const Eigen::VectorXd> q(qv[t].data, qv[t].size());
    k = momentum * k + (1.0 - momentum) * q;
  }
}

void AugmentationSpec::validate() const {
  if (noise_sigma < 0.0) throw ValidationError("AugmentationSpec: noise_sigma must be >= 0");
  if (!(mask_prob >= 0.0 && mask_prob < 1.0))
    throw ValidationError("AugmentationSpec: mask_prob must lie in [0, 1)");
}

Eigen::VectorXd augment(const Eigen::VectorXd& x, const AugmentationSpec& spec,
                        std::uint64_t seed, std::int64_t epoch, std::int64_t instance,
                        AugView view) {
  spec.validate();
  const std::uint64_t tag = static_cast<std::uint64_t>(view);
  const rng::Key noise = rng::Key(seed, rng::Stream::kAugNoise)
                             .with(tag)
                             .with(static_cast<std::uint64_t>(epoch))
                             .with(static_cast<std::uint64_t>(instance));
  const rng::Key mask = rng::Key(seed, rng::Stream::kAugMask)
                            .with(tag)
                            .with(static_cast<std::uint64_t>(epoch))
                            .with(static_cast<std::uint64_t>(instance));
  Eigen::VectorXd out = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (spec.noise_sigma > 0.0)
      out[j] += spec.noise_sigma * noise.with(static_cast<std::uint64_t>(j)).gaussian();
    if (spec.mask_prob > 0.0 &&
        mask.with(static_cast<std::uint64_t>(j)).uniform() < spec.mask_prob)
      out[j] = 0.0;
  }
  return out;
}

}  // namespace rivalpll
