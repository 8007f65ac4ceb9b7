#pragma once

#include <array>
#include <map>
#include <optional>
#include <thread>
#include <vector>

#include "stsmixer/data/video.hpp"
#include "stsmixer/model/config.hpp"
#include "stsmixer/model/encoder.hpp"
#include "stsmixer/nn/layers.hpp"
#include "stsmixer/spectral.hpp"

namespace stsmixer {

/// Low, mid and high band token sets, each (1, T'·N', C).
template <typename S>
using BandTokens = std::array<nn::Tensor3<S>, 3>;

inline std::size_t band_index(Band b) { return static_cast<std::size_t>(b); }

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
/// written by exactly one worker, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t workers = std::min(threads, count);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Per-frame band reconstructions of the anchor coordinates, stacked
/// frame-major into three (T'·N') x 3 matrices.
inline std::array<Matrix, 3> spectral_band_coords(const EncoderGeometry& g, const ModelConfig& cfg,
                                                  std::size_t threads = 1) {
  if (g.anchors < cfg.k + 1) {
    throw ParameterError("spectral_stage: need N' >= k + 1, got N'=" + std::to_string(g.anchors) +
                         " k=" + std::to_string(cfg.k));
  }
  std::array<Matrix, 3> out;
  for (auto& m : out) m = Matrix(g.tokens(), 3);
  const BandSpec spec{cfg.f_l, cfg.f_h, g.anchors};
  spec.validate();
  parallel_for(g.out_frames, threads, [&](std::size_t t) {
    const Matrix pts = g.frame_anchors(t);
    const auto spectrum = GraphSpectrum::of(knn_graph(PointSet(pts), cfg.k, cfg.edge_weight));
    const BandSignals bands = band_decompose(spectrum, pts, spec);
    for (Band b : kAllBands)
      for (std::size_t n = 0; n < g.anchors; ++n)
        for (std::size_t a = 0; a < 3; ++a) out[band_index(b)](t * g.anchors + n, a) = bands[b](n, a);
  });
  return out;
}

/// Everything about a clip that does not depend on trainable parameters.
struct PreparedClip {
  EncoderGeometry geometry;
  std::array<Matrix, 3> band_coords;
  std::optional<int> clip_label;
  std::vector<int> anchor_labels;  // segmentation ground truth, one per token

  std::size_t tokens() const { return geometry.tokens(); }

  /// (x, y, z, t) rows for one band; t is the output frame scaled to [0, 1].
  Matrix positions(Band b) const {
    const Matrix& c = band_coords[band_index(b)];
    Matrix out(c.rows(), 4);
    const double denom = geometry.out_frames > 1 ? static_cast<double>(geometry.out_frames - 1) : 1.0;
    for (std::size_t r = 0; r < c.rows(); ++r) {
      for (std::size_t a = 0; a < 3; ++a) out(r, a) = c(r, a);
      out(r, 3) = static_cast<double>(r / geometry.anchors) / denom;
    }
    return out;
  }
};

/// Majority label over each anchor's grouped source points; ties go to the
/// smaller label.
inline std::vector<int> anchor_majority_labels(const EncoderGeometry& g, const PointCloudVideo& clip) {
  std::vector<int> out(g.tokens(), 0);
  std::map<int, std::size_t> votes;
  for (std::size_t tok = 0; tok < g.tokens(); ++tok) {
    votes.clear();
    for (std::size_t m = g.group_offsets[tok]; m < g.group_offsets[tok + 1]; ++m)
      ++votes[clip.label(g.parents[m].frame, g.parents[m].index)];
    std::size_t best = 0;
    for (const auto& [label, count] : votes)
      if (count > best) {
        best = count;
        out[tok] = label;
      }
  }
  return out;
}

inline PreparedClip prepare_clip(const PointCloudVideo& raw, const ModelConfig& cfg, std::size_t threads = 1) {
  PointCloudVideo clip = raw;
  normalize_unit_box(clip);
  PreparedClip p;
  p.geometry = group_clip(clip, cfg);
  p.band_coords = spectral_band_coords(p.geometry, cfg, threads);
  if (clip.clip_label) p.clip_label = *clip.clip_label;
  if (clip.point_labels) p.anchor_labels = anchor_majority_labels(p.geometry, clip);
  return p;
}

// ---------------------------------------------------------------------------
// Spectral stage embedding: X_b = F' + E_b(x_b, y_b, z_b, t)

template <typename S>
struct BandEmbedding {
  std::array<nn::Linear<S>, 3> embed;

  static BandEmbedding create(nn::Parameters<S>& params, std::size_t channels, Rng& rng) {
    BandEmbedding e;
    for (Band b : kAllBands)
      e.embed[band_index(b)] = nn::Linear<S>::create(params, "embed." + std::string(band_name(b)), 4, channels, rng);
    return e;
  }

  BandTokens<S> forward(const nn::Mat<S>& features, const std::array<nn::Mat<S>, 3>& positions,
                        const std::set<Band>& disabled) const {
    BandTokens<S> out;
    for (Band b : kAllBands) {
      const auto i = band_index(b);
      nn::Mat<S> x = features + embed[i].forward(positions[i]);
      if (disabled.contains(b)) x.setZero();
      out[i] = nn::Tensor3<S>(1, static_cast<std::size_t>(features.rows()), std::move(x));
    }
    return out;
  }

  /// Returns dF' summed over the enabled bands.
  nn::Mat<S> backward(const BandTokens<S>& dtokens, const std::array<nn::Mat<S>, 3>& positions,
                      const std::set<Band>& disabled) const {
    nn::Mat<S> dfeat = nn::Mat<S>::Zero(dtokens[0].mat().rows(), dtokens[0].mat().cols());
    for (Band b : kAllBands) {
      if (disabled.contains(b)) continue;
      const auto i = band_index(b);
      embed[i].backward(positions[i], dtokens[i].mat());
      dfeat += dtokens[i].mat();
    }
    return dfeat;
  }
};

// ---------------------------------------------------------------------------
// Frequency-aware attention: per band, X' = X + Attn_b(LN_b(X)), with three
// independent parameter sets and no cross-band term.

template <typename S>
struct FaAttentionCache {
  std::array<nn::LayerNormCache<S>, 3> ln;
  std::array<nn::AttentionCache<S>, 3> attn;
  std::array<nn::MlpCache<S>, 3> mlp;
};

template <typename S>
struct FaAttention {
  std::array<nn::LayerNorm<S>, 3> ln;
  std::array<nn::MultiHeadAttention<S>, 3> attn;
  std::array<nn::Mlp<S>, 3> mlp;  // replaces attention when use_mlp is set
  bool use_mlp = false;

  static FaAttention create(nn::Parameters<S>& params, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    FaAttention fa;
    fa.use_mlp = cfg.disable_fa_attention;
    for (Band b : kAllBands) {
      const auto i = band_index(b);
      const std::string p = prefix + "." + std::string(band_name(b));
      fa.ln[i] = nn::LayerNorm<S>::create(params, p + ".ln", cfg.channels);
      if (fa.use_mlp) {
        fa.mlp[i] = nn::Mlp<S>::create(params, p + ".mlp", cfg.channels, cfg.mlp_ratio * cfg.channels, rng);
      } else {
        fa.attn[i] = nn::MultiHeadAttention<S>::create(params, p + ".attn", cfg.channels, cfg.heads, rng);
      }
    }
    return fa;
  }

  BandTokens<S> forward(const BandTokens<S>& x, FaAttentionCache<S>& cache) const {
    if (!x[0].same_shape(x[1]) || !x[0].same_shape(x[2])) throw ShapeError("fa_attention: band shapes differ");
    BandTokens<S> out;
    for (std::size_t i = 0; i < 3; ++i) {
      const nn::Tensor3<S> normed(x[i].batch(), x[i].tokens(), ln[i].forward(x[i].mat(), cache.ln[i]));
      if (use_mlp) {
        out[i] = nn::Tensor3<S>(x[i].batch(), x[i].tokens(), mlp[i].forward(normed.mat(), cache.mlp[i]));
      } else {
        out[i] = attn[i].forward(normed, cache.attn[i]);
      }
      out[i].mat() += x[i].mat();
    }
    return out;
  }

  BandTokens<S> backward(const BandTokens<S>& dy, const FaAttentionCache<S>& cache) const {
    BandTokens<S> dx;
    for (std::size_t i = 0; i < 3; ++i) {
      nn::Mat<S> dnormed = use_mlp ? mlp[i].backward(dy[i].mat(), cache.mlp[i])
                                   : attn[i].backward(dy[i], cache.attn[i]).mat();
      nn::Mat<S> d = ln[i].backward(dnormed, cache.ln[i]);
      d += dy[i].mat();
      dx[i] = nn::Tensor3<S>(dy[i].batch(), dy[i].tokens(), std::move(d));
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Frequency-mixing MLP: X = [X_l | X_m | X_h], Y = X + MLP(LN(X)), split Y
// back into three C-wide chunks.

template <typename S>
nn::Mat<S> concat_bands(const BandTokens<S>& x) {
  const auto c = x[0].mat().cols();
  nn::Mat<S> out(x[0].mat().rows(), 3 * c);
  for (Eigen::Index i = 0; i < 3; ++i) out.middleCols(i * c, c) = x[static_cast<std::size_t>(i)].mat();
  return out;
}

template <typename S>
BandTokens<S> split_bands(const nn::Mat<S>& y, std::size_t batch, std::size_t tokens) {
  const auto c = y.cols() / 3;
  BandTokens<S> out;
  for (Eigen::Index i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] = nn::Tensor3<S>(batch, tokens, nn::Mat<S>(y.middleCols(i * c, c)));
  return out;
}

template <typename S>
struct FmMlpCache {
  nn::LayerNormCache<S> ln;
  nn::MlpCache<S> mlp;
};

template <typename S>
struct FmMlp {
  nn::LayerNorm<S> ln;
  nn::Mlp<S> mlp;

  static FmMlp create(nn::Parameters<S>& params, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    FmMlp fm;
    const std::size_t width = 3 * cfg.channels;
    fm.ln = nn::LayerNorm<S>::create(params, prefix + ".ln", width);
    fm.mlp = nn::Mlp<S>::create(params, prefix + ".mlp", width, cfg.mlp_ratio * width, rng);
    return fm;
  }

  BandTokens<S> forward(const BandTokens<S>& x, FmMlpCache<S>& cache) const {
    if (!x[0].same_shape(x[1]) || !x[0].same_shape(x[2])) throw ShapeError("fm_mlp: band shapes differ");
    nn::Mat<S> joint = concat_bands(x);
    nn::Mat<S> y = mlp.forward(ln.forward(joint, cache.ln), cache.mlp);
    y += joint;
    return split_bands(y, x[0].batch(), x[0].tokens());
  }

  BandTokens<S> backward(const BandTokens<S>& dy, const FmMlpCache<S>& cache) const {
    const nn::Mat<S> djoint_out = concat_bands(dy);
    nn::Mat<S> djoint = ln.backward(mlp.backward(djoint_out, cache.mlp), cache.ln);
    djoint += djoint_out;
    return split_bands(djoint, dy[0].batch(), dy[0].tokens());
  }
};

// ---------------------------------------------------------------------------
// Full network

template <typename S>
struct StsMixerCache {
  PointEncoderCache<S> encoder;
  std::array<nn::Mat<S>, 3> positions;
  std::vector<FaAttentionCache<S>> fa;
  std::vector<FmMlpCache<S>> fm;
  nn::LayerNormCache<S> head_ln;
  nn::MlpCache<S> head_mlp;
  std::size_t tokens = 0;
  std::vector<Eigen::Index> pool_argmax;  // classification: winning token per channel
};

/// Encoder -> spectral stage -> L x (FA-Attention, FM-MLP) -> concat -> head.
///
/// Classification returns a 1 x num_outputs row of logits (max pool over
/// tokens, then MLP); segmentation returns one row per anchor token.
template <typename S>
class StsMixer {
 public:
  StsMixer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(std::make_unique<nn::Parameters<S>>()) {
    cfg_.validate();
    Rng rng(seed);
    auto& p = *params_;
    encoder_ = PointEncoder<S>::create(p, cfg_.channels, rng);
    embedding_ = BandEmbedding<S>::create(p, cfg_.channels, rng);
    for (std::size_t l = 0; l < cfg_.blocks; ++l) {
      const std::string prefix = "block" + std::to_string(l);
      fa_.push_back(FaAttention<S>::create(p, prefix + ".fa", cfg_, rng));
      if (!cfg_.disable_fm_mlp) fm_.push_back(FmMlp<S>::create(p, prefix + ".fm", cfg_, rng));
    }
    head_ln_ = nn::LayerNorm<S>::create(p, "head.ln", 3 * cfg_.channels);
    head_ = nn::Mlp<S>::create(p, "head.mlp", 3 * cfg_.channels, cfg_.channels, cfg_.num_outputs, rng);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  nn::Parameters<S>& params() noexcept { return *params_; }
  const nn::Parameters<S>& params() const noexcept { return *params_; }

  nn::Mat<S> forward(const PreparedClip& clip, StsMixerCache<S>& cache) const {
    cache.tokens = clip.tokens();
    const nn::Mat<S> features = encoder_.forward(clip.geometry, cache.encoder);
    for (Band b : kAllBands) cache.positions[band_index(b)] = nn::to_mat<S>(clip.positions(b));
    BandTokens<S> x = embedding_.forward(features, cache.positions, cfg_.disabled_bands);
    cache.fa.resize(cfg_.blocks);
    cache.fm.resize(fm_.size());
    for (std::size_t l = 0; l < cfg_.blocks; ++l) {
      x = fa_[l].forward(x, cache.fa[l]);
      if (!fm_.empty()) x = fm_[l].forward(x, cache.fm[l]);
    }
    const nn::Mat<S> normed = head_ln_.forward(concat_bands(x), cache.head_ln);
    if (cfg_.task == Task::classification) {
      nn::Mat<S> pooled(1, normed.cols());
      cache.pool_argmax.resize(static_cast<std::size_t>(normed.cols()));
      for (Eigen::Index c = 0; c < normed.cols(); ++c)
        pooled(0, c) = normed.col(c).maxCoeff(&cache.pool_argmax[static_cast<std::size_t>(c)]);
      return head_.forward(pooled, cache.head_mlp);
    }
    return head_.forward(normed, cache.head_mlp);
  }

  nn::Mat<S> forward(const PreparedClip& clip) const {
    StsMixerCache<S> cache;
    return forward(clip, cache);
  }

  /// Accumulates parameter gradients for dloss/dlogits.
  void backward(const nn::Mat<S>& dlogits, const StsMixerCache<S>& cache) const {
    nn::Mat<S> dhead = head_.backward(dlogits, cache.head_mlp);
    nn::Mat<S> dnormed;
    if (cfg_.task == Task::classification) {
      dnormed = nn::Mat<S>::Zero(static_cast<Eigen::Index>(cache.tokens), dhead.cols());
      for (Eigen::Index c = 0; c < dhead.cols(); ++c) dnormed(cache.pool_argmax[static_cast<std::size_t>(c)], c) = dhead(0, c);
    } else {
      dnormed = std::move(dhead);
    }
    BandTokens<S> dx = split_bands(head_ln_.backward(dnormed, cache.head_ln), 1, cache.tokens);
    for (std::size_t l = cfg_.blocks; l-- > 0;) {
      if (!fm_.empty()) dx = fm_[l].backward(dx, cache.fm[l]);
      dx = fa_[l].backward(dx, cache.fa[l]);
    }
    encoder_.backward(embedding_.backward(dx, cache.positions, cfg_.disabled_bands), cache.encoder);
  }

  const PointEncoder<S>& encoder() const { return encoder_; }
  const BandEmbedding<S>& embedding() const { return embedding_; }
  const std::vector<FaAttention<S>>& fa_blocks() const { return fa_; }
  const std::vector<FmMlp<S>>& fm_blocks() const { return fm_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<nn::Parameters<S>> params_;
  PointEncoder<S> encoder_;
  BandEmbedding<S> embedding_;
  std::vector<FaAttention<S>> fa_;
  std::vector<FmMlp<S>> fm_;
  nn::LayerNorm<S> head_ln_;
  nn::Mlp<S> head_;
};

}  // namespace stsmixer
