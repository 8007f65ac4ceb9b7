#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stsmixer/model/sts_mixer.hpp"
#include "stsmixer/train/metrics.hpp"

namespace stsmixer {

/// Worst relative error of one differentiable operation.
struct GradCheckRow {
  std::string op;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;  // scalar entries compared
  bool pass() const { return std::isfinite(worst) && worst <= tolerance; }
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double op_tolerance = 1e-6;         // per-op checks, 64-bit storage
  double end_to_end_tolerance = 1e-3;
  std::size_t end_to_end_entries = 20;
  /// Test hook: scales the analytic gradient of the named op so its check fails.
  std::string corrupt_op;
};

inline const std::vector<std::string>& grad_check_ops() {
  static const std::vector<std::string> ops{"linear",      "layer_norm",   "softmax",       "gelu",
                                            "mlp",         "attention",    "transformer_block",
                                            "point_encoder", "band_embedding", "fa_attention", "fm_mlp",
                                            "cross_entropy", "sts_mixer_classification",
                                            "sts_mixer_segmentation"};
  return ops;
}

namespace gradcheck {

using M = nn::Mat<double>;

/// A tensor under test: `value` is perturbed in place, `analytic` is dL/dvalue.
struct Target {
  M* value;
  M analytic;
  std::vector<Eigen::Index> entries;  // empty means every entry
};

inline M random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

inline void randomize(nn::Parameters<double>& params, Rng& rng, double scale = 0.5) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    for (Eigen::Index j = 0; j < p.value.size(); ++j) p.value.data()[j] = rng.uniform(-scale, scale);
    if (p.name.ends_with(".gamma")) p.value.array() += 1.0;
  }
}

inline void add_params(std::vector<Target>& targets, nn::Parameters<double>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) targets.push_back({&params[i].value, params[i].grad, {}});
}

inline double dot(const M& a, const M& b) { return (a.array() * b.array()).sum(); }

/// Central differences on every target. Per target the error is
/// ‖a − n‖ / max(‖a‖, ‖n‖, 1e-3·‖a_op‖), where a_op is the op's whole
/// analytic gradient; the floor keeps exactly-zero gradients (e.g. key bias
/// under softmax) from turning round-off into a relative error of 1.
inline GradCheckRow compare(const std::string& op, const std::function<double()>& loss, std::vector<Target>& targets,
                            double eps, double tol, const GradCheckOptions& opt) {
  GradCheckRow row{op, 0.0, tol, 0};
  if (op == opt.corrupt_op && !targets.empty()) targets.front().analytic *= 1.05;
  double op_norm2 = 0.0;
  for (const auto& tg : targets) {
    if (tg.entries.empty()) {
      op_norm2 += tg.analytic.squaredNorm();
    } else {
      for (Eigen::Index i : tg.entries) op_norm2 += tg.analytic.data()[i] * tg.analytic.data()[i];
    }
  }
  const double floor = std::max(1e-3 * std::sqrt(op_norm2), 1e-12);
  for (auto& tg : targets) {
    std::vector<Eigen::Index> idx = tg.entries;
    if (idx.empty()) {
      idx.resize(static_cast<std::size_t>(tg.value->size()));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (Eigen::Index i : idx) {
      double& v = tg.value->data()[i];
      const double saved = v;
      v = saved + eps;
      const double up = loss();
      v = saved - eps;
      const double down = loss();
      v = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = tg.analytic.data()[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    row.checked += idx.size();
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
    row.worst = std::max(row.worst, std::sqrt(diff2) / denom);
  }
  return row;
}

inline constexpr double kEps = 1e-5;

inline GradCheckRow check_linear(Rng& rng, const GradCheckOptions& opt) {
  nn::Parameters<double> params;
  auto lin = nn::Linear<double>::create(params, "lin", 5, 4, rng);
  randomize(params, rng);
  M x = random_mat(6, 5, rng);
  const M r = random_mat(6, 4, rng);
  const M dx = lin.backward(x, r);
  std::vector<Target> targets{{&x, dx, {}}};
  add_params(targets, params);
  return compare("linear", [&] { return dot(lin.forward(x), r); }, targets, kEps, opt.op_tolerance, opt);
}

inline GradCheckRow check_layer_norm(Rng& rng, const GradCheckOptions& opt) {
  nn::Parameters<double> params;
  auto ln = nn::LayerNorm<double>::create(params, "ln", 6);
  randomize(params, rng);
  M x = random_mat(5, 6, rng, 2.0);
  const M r = random_mat(5, 6, rng);
  nn::LayerNormCache<double> cache;
  ln.forward(x, cache);
  const M dx = ln.backward(r, cache);
  std::vector<Target> targets{{&x, dx, {}}};
  add_params(targets, params);
  return compare(
      "layer_norm", [&] { nn::LayerNormCache<double> c; return dot(ln.forward(x, c), r); }, targets, kEps,
      opt.op_tolerance, opt);
}

inline GradCheckRow check_softmax(Rng& rng, const GradCheckOptions& opt) {
  M x = random_mat(4, 7, rng, 3.0);
  const M r = random_mat(4, 7, rng);
  auto forward = [&] {
    M a = x;
    nn::softmax_rows_inplace(a);
    return a;
  };
  std::vector<Target> targets{{&x, nn::softmax_rows_backward(forward(), r), {}}};
  return compare("softmax", [&] { return dot(forward(), r); }, targets, kEps, opt.op_tolerance, opt);
}

inline GradCheckRow check_gelu(Rng& rng, const GradCheckOptions& opt) {
  M x = random_mat(5, 6, rng, 4.0);
  const M r = random_mat(5, 6, rng);
  M cdf;
  nn::gelu_forward(x, cdf);
  std::vector<Target> targets{{&x, nn::gelu_backward(x, cdf, r), {}}};
  return compare("gelu", [&] { return dot(nn::gelu_forward(x), r); }, targets, kEps, opt.op_tolerance, opt);
}

inline GradCheckRow check_mlp(Rng& rng, const GradCheckOptions& opt) {
  nn::Parameters<double> params;
  auto mlp = nn::Mlp<double>::create(params, "mlp", 5, 8, 3, rng);
  randomize(params, rng);
  M x = random_mat(4, 5, rng);
  const M r = random_mat(4, 3, rng);
  nn::MlpCache<double> cache;
  mlp.forward(x, cache);
  std::vector<Target> targets{{&x, mlp.backward(r, cache), {}}};
  add_params(targets, params);
  return compare(
      "mlp", [&] { nn::MlpCache<double> c; return dot(mlp.forward(x, c), r); }, targets, kEps, opt.op_tolerance,
      opt);
}

inline GradCheckRow check_attention(Rng& rng, const GradCheckOptions& opt) {
  nn::Parameters<double> params;
  auto mha = nn::MultiHeadAttention<double>::create(params, "mha", 4, 2, rng);
  randomize(params, rng);
  nn::Tensor3<double> x(2, 3, random_mat(6, 4, rng));
  const M r = random_mat(6, 4, rng);
  nn::AttentionCache<double> cache;
  mha.forward(x, cache);
  std::vector<Target> targets{{&x.mat(), mha.backward(nn::Tensor3<double>(2, 3, r), cache).mat(), {}}};
  add_params(targets, params);
  return compare(
      "attention", [&] { nn::AttentionCache<double> c; return dot(mha.forward(x, c).mat(), r); }, targets, kEps,
      opt.op_tolerance, opt);
}

inline GradCheckRow check_transformer_block(Rng& rng, const GradCheckOptions& opt) {
  nn::Parameters<double> params;
  auto blk = nn::TransformerBlock<double>::create(params, "blk", nn::AttentionConfig{8, 2, 16}, rng);
  randomize(params, rng);
  nn::Tensor3<double> x(1, 4, random_mat(4, 8, rng));
  const M r = random_mat(4, 8, rng);
  nn::TransformerBlockCache<double> cache;
  blk.forward(x, cache);
  std::vector<Target> targets{{&x.mat(), blk.backward(nn::Tensor3<double>(1, 4, r), cache).mat(), {}}};
  add_params(targets, params);
  return compare(
      "transformer_block",
      [&] { nn::TransformerBlockCache<double> c; return dot(blk.forward(x, c).mat(), r); }, targets, kEps,
      opt.op_tolerance, opt);
}

inline PointCloudVideo random_clip(std::size_t frames, std::size_t points, Rng& rng,
                                   std::optional<int> clip_label = std::nullopt, int point_labels = 0) {
  PointCloudVideo v(static_cast<std::uint32_t>(frames), static_cast<std::uint32_t>(points));
  for (auto& c : v.coords) c = static_cast<float>(rng.uniform(-1.0, 1.0));
  v.clip_label = clip_label ? std::optional<std::uint16_t>(static_cast<std::uint16_t>(*clip_label)) : std::nullopt;
  if (point_labels > 0) {
    v.point_labels = std::vector<std::uint16_t>(frames * points);
    for (auto& l : *v.point_labels) l = static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(point_labels)));
  }
  return v;
}

inline ModelConfig toy_model_config(Task task) {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.channels = 16;
  cfg.heads = 4;
  cfg.anchors = 8;
  cfg.k = 4;
  cfg.f_l = 2;
  cfg.f_h = 5;
  cfg.temporal_stride = 2;
  cfg.spatial_radius = 0.5;
  cfg.group_size = 8;
  cfg.task = task;
  cfg.num_outputs = task == Task::classification ? 4 : 3;
  return cfg;
}

inline GradCheckRow check_point_encoder(Rng& rng, const GradCheckOptions& opt) {
  ModelConfig cfg = toy_model_config(Task::classification);
  cfg.channels = 8;
  const auto geometry = group_clip(random_clip(4, 16, rng), cfg);
  nn::Parameters<double> params;
  auto enc = PointEncoder<double>::create(params, cfg.channels, rng);
  randomize(params, rng);
  const M r = random_mat(static_cast<Eigen::Index>(geometry.tokens()), 8, rng);
  PointEncoderCache<double> cache;
  enc.forward(geometry, cache);
  enc.backward(r, cache);
  std::vector<Target> targets;
  add_params(targets, params);
  return compare(
      "point_encoder", [&] { PointEncoderCache<double> c; return dot(enc.forward(geometry, c), r); }, targets,
      kEps, opt.op_tolerance, opt);
}

inline GradCheckRow check_band_embedding(Rng& rng, const GradCheckOptions& opt) {
  nn::Parameters<double> params;
  auto emb = BandEmbedding<double>::create(params, 6, rng);
  randomize(params, rng);
  M feat = random_mat(8, 6, rng);
  std::array<M, 3> pos{random_mat(8, 4, rng), random_mat(8, 4, rng), random_mat(8, 4, rng)};
  BandTokens<double> r;
  for (auto& t : r) t = nn::Tensor3<double>(1, 8, random_mat(8, 6, rng));
  const std::set<Band> none;
  auto loss = [&] {
    const auto y = emb.forward(feat, pos, none);
    return dot(y[0].mat(), r[0].mat()) + dot(y[1].mat(), r[1].mat()) + dot(y[2].mat(), r[2].mat());
  };
  std::vector<Target> targets{{&feat, emb.backward(r, pos, none), {}}};
  add_params(targets, params);
  return compare("band_embedding", loss, targets, kEps, opt.op_tolerance, opt);
}

inline BandTokens<double> random_bands(std::size_t tokens, std::size_t c, Rng& rng) {
  BandTokens<double> out;
  for (auto& t : out)
    t = nn::Tensor3<double>(1, tokens, random_mat(static_cast<Eigen::Index>(tokens), static_cast<Eigen::Index>(c), rng));
  return out;
}

inline double band_dot(const BandTokens<double>& a, const BandTokens<double>& b) {
  return dot(a[0].mat(), b[0].mat()) + dot(a[1].mat(), b[1].mat()) + dot(a[2].mat(), b[2].mat());
}

template <typename Block, typename Cache>
GradCheckRow check_band_block(const std::string& op, Rng& rng, const GradCheckOptions& opt) {
  ModelConfig cfg = toy_model_config(Task::classification);
  cfg.channels = 8;
  cfg.heads = 2;
  const std::size_t tokens = 2 * 4;  // T' = 2, N' = 4
  nn::Parameters<double> params;
  auto blk = Block::create(params, "blk", cfg, rng);
  randomize(params, rng);
  BandTokens<double> x = random_bands(tokens, cfg.channels, rng);
  const BandTokens<double> r = random_bands(tokens, cfg.channels, rng);
  Cache cache;
  blk.forward(x, cache);
  const auto dx = blk.backward(r, cache);
  std::vector<Target> targets;
  for (std::size_t b = 0; b < 3; ++b) targets.push_back({&x[b].mat(), dx[b].mat(), {}});
  add_params(targets, params);
  return compare(
      op, [&] { Cache c; return band_dot(blk.forward(x, c), r); }, targets, kEps, opt.op_tolerance, opt);
}

inline GradCheckRow check_cross_entropy(Rng& rng, const GradCheckOptions& opt) {
  M logits = random_mat(3, 4, rng, 2.0);
  const std::vector<int> targets_idx{0, 3, 2};
  std::vector<Target> targets{{&logits, cross_entropy(logits, targets_idx).grad, {}}};
  return compare(
      "cross_entropy", [&] { return cross_entropy(logits, targets_idx).loss; }, targets, kEps, opt.op_tolerance,
      opt);
}

/// Full model at toy scale (T=4, N=32, T'=2, N'=8, C=16); the loss gradient
/// is compared on randomly chosen parameter entries.
inline GradCheckRow check_sts_mixer(Task task, Rng& rng, const GradCheckOptions& opt) {
  const ModelConfig cfg = toy_model_config(task);
  const std::string op = task == Task::classification ? "sts_mixer_classification" : "sts_mixer_segmentation";
  const auto raw = task == Task::classification ? random_clip(4, 32, rng, 1) : random_clip(4, 32, rng, std::nullopt, 3);
  const PreparedClip clip = prepare_clip(raw, cfg);
  std::vector<int> labels = task == Task::classification ? std::vector<int>{1} : clip.anchor_labels;
  StsMixer<double> model(cfg, rng.next_u64());
  randomize(model.params(), rng, 0.3);
  StsMixerCache<double> cache;
  auto& params = model.params();
  params.zero_grad();
  model.backward(cross_entropy(model.forward(clip, cache), labels).grad, cache);

  // Spread the sampled entries over distinct tensors.
  std::vector<Target> targets;
  std::vector<std::size_t> order(params.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t i = 0; i < opt.end_to_end_entries; ++i) {
    auto& p = params[order[i % order.size()]];
    const auto entry = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.value.size())));
    targets.push_back({&p.value, p.grad, {entry}});
  }
  // Relative error is taken over the sampled entries jointly.
  M analytic(1, static_cast<Eigen::Index>(targets.size())), numeric = analytic;
  auto loss = [&] { return cross_entropy(model.forward(clip, cache), labels).loss; };
  const double eps = 1e-6;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double& v = targets[i].value->data()[targets[i].entries[0]];
    const double saved = v;
    v = saved + eps;
    const double up = loss();
    v = saved - eps;
    const double down = loss();
    v = saved;
    numeric(0, static_cast<Eigen::Index>(i)) = (up - down) / (2.0 * eps);
    analytic(0, static_cast<Eigen::Index>(i)) = targets[i].analytic.data()[targets[i].entries[0]];
  }
  if (op == opt.corrupt_op) analytic *= 1.05;
  GradCheckRow row{op, 0.0, opt.end_to_end_tolerance, targets.size()};
  row.worst = (analytic - numeric).norm() / std::max({analytic.norm(), numeric.norm(), 1e-12});
  return row;
}

}  // namespace gradcheck

/// Runs every finite-difference check once, in grad_check_ops() order.
inline std::vector<GradCheckRow> run_grad_checks(const GradCheckOptions& opt = {}) {
  using namespace gradcheck;
  using Check = std::function<GradCheckRow(Rng&)>;
  const std::vector<Check> checks{
      [&](Rng& r) { return check_linear(r, opt); },
      [&](Rng& r) { return check_layer_norm(r, opt); },
      [&](Rng& r) { return check_softmax(r, opt); },
      [&](Rng& r) { return check_gelu(r, opt); },
      [&](Rng& r) { return check_mlp(r, opt); },
      [&](Rng& r) { return check_attention(r, opt); },
      [&](Rng& r) { return check_transformer_block(r, opt); },
      [&](Rng& r) { return check_point_encoder(r, opt); },
      [&](Rng& r) { return check_band_embedding(r, opt); },
      [&](Rng& r) { return check_band_block<FaAttention<double>, FaAttentionCache<double>>("fa_attention", r, opt); },
      [&](Rng& r) { return check_band_block<FmMlp<double>, FmMlpCache<double>>("fm_mlp", r, opt); },
      [&](Rng& r) { return check_cross_entropy(r, opt); },
      [&](Rng& r) { return check_sts_mixer(Task::classification, r, opt); },
      [&](Rng& r) { return check_sts_mixer(Task::segmentation, r, opt); },
  };
  Rng root(opt.seed);
  std::vector<GradCheckRow> rows;
  for (const auto& check : checks) {
    Rng r = root.fork();
    rows.push_back(check(r));
  }
  return rows;
}

}  // namespace stsmixer
