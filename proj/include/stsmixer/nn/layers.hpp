#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "stsmixer/nn/tensor.hpp"

namespace stsmixer::nn {

// ---------------------------------------------------------------------------
// Linear: y = x W + b, W is in x out.

template <typename S>
void require_linear_shapes(Eigen::Index in_cols, const Param<S>& w, const Param<S>& b) {
  if (in_cols != w.value.rows() || b.value.cols() != w.value.cols() || b.value.rows() != 1) {
    throw ShapeError("linear: input width " + std::to_string(in_cols) + " against weight " +
                     std::to_string(w.value.rows()) + "x" + std::to_string(w.value.cols()) + " and bias 1x" +
                     std::to_string(b.value.cols()));
  }
}

template <typename S>
Mat<S> linear_forward(const Mat<S>& x, const Param<S>& w, const Param<S>& b) {
  require_linear_shapes(x.cols(), w, b);
  Mat<S> y = x * w.value;
  y.rowwise() += b.value.row(0);
  return y;
}

/// Accumulates dW, db into the parameters and returns dx.
template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& dy, Param<S>& w, Param<S>& b) {
  require_linear_shapes(x.cols(), w, b);
  if (dy.rows() != x.rows() || dy.cols() != w.value.cols()) throw ShapeError("linear_backward: dy shape mismatch");
  w.grad.noalias() += x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  return dy * w.value.transpose();
}

template <typename S>
Tensor3<S> linear_forward(const Tensor3<S>& x, const Param<S>& w, const Param<S>& b) {
  return Tensor3<S>(x.batch(), x.tokens(), linear_forward(x.mat(), w, b));
}

template <typename S>
Tensor3<S> linear_backward(const Tensor3<S>& x, const Tensor3<S>& dy, Param<S>& w, Param<S>& b) {
  return Tensor3<S>(x.batch(), x.tokens(), linear_backward(x.mat(), dy.mat(), w, b));
}

template <typename S>
struct Linear {
  Param<S>* w = nullptr;
  Param<S>* b = nullptr;

  static Linear create(Parameters<S>& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.w = &params.add(prefix + ".weight", {in, out});
    l.b = &params.add(prefix + ".bias", {out});
    init_uniform_fan_in(*l.w, in, rng);
    return l;
  }
  Mat<S> forward(const Mat<S>& x) const { return linear_forward(x, *w, *b); }
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) const { return linear_backward(x, dy, *w, *b); }
};

// ---------------------------------------------------------------------------
// LayerNorm over the channel axis, population variance.

inline constexpr double kLayerNormEps = 1e-5;

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  std::vector<double> inv_std;
};

template <typename S>
Mat<S> layer_norm_forward(const Mat<S>& x, const Param<S>& gamma, const Param<S>& beta, double eps,
                          LayerNormCache<S>& cache) {
  const Eigen::Index c = x.cols();
  if (c == 0) throw ShapeError("layer_norm: zero channels");
  if (gamma.value.cols() != c || beta.value.cols() != c) throw ShapeError("layer_norm: gamma/beta width mismatch");
  const Eigen::ArrayXd mean = x.template cast<double>().rowwise().mean().array();
  Eigen::ArrayXXd centered = x.template cast<double>().array().colwise() - mean;
  const Eigen::ArrayXd inv = (centered.square().rowwise().mean() + eps).rsqrt();
  centered.colwise() *= inv;
  cache.inv_std.assign(inv.data(), inv.data() + inv.size());
  cache.xhat = centered.matrix().template cast<S>();
  Mat<S> y = (cache.xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, Param<S>& gamma, Param<S>& beta, const LayerNormCache<S>& cache) {
  const auto c = static_cast<double>(dy.cols());
  const Eigen::ArrayXXd g = (dy.array().rowwise() * gamma.value.row(0).array()).template cast<double>();
  const Eigen::ArrayXXd xhat = cache.xhat.template cast<double>().array();
  const Eigen::ArrayXd mean_g = g.rowwise().sum() / c;
  const Eigen::ArrayXd mean_gx = (g * xhat).rowwise().sum() / c;
  const Eigen::Map<const Eigen::ArrayXd> inv(cache.inv_std.data(), static_cast<Eigen::Index>(cache.inv_std.size()));
  Eigen::ArrayXXd dx = (g.colwise() - mean_g) - xhat.colwise() * mean_gx;
  dx.colwise() *= inv;
  gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  return dx.matrix().template cast<S>();
}

template <typename S>
struct LayerNorm {
  Param<S>* gamma = nullptr;
  Param<S>* beta = nullptr;
  double eps = kLayerNormEps;

  static LayerNorm create(Parameters<S>& params, const std::string& prefix, std::size_t channels) {
    LayerNorm ln;
    ln.gamma = &params.add(prefix + ".gamma", {channels});
    ln.beta = &params.add(prefix + ".beta", {channels});
    ln.gamma->value.setOnes();
    return ln;
  }
  Mat<S> forward(const Mat<S>& x, LayerNormCache<S>& cache) const {
    return layer_norm_forward(x, *gamma, *beta, eps, cache);
  }
  Mat<S> backward(const Mat<S>& dy, const LayerNormCache<S>& cache) const {
    return layer_norm_backward(dy, *gamma, *beta, cache);
  }
};

// ---------------------------------------------------------------------------
// Softmax

/// Row-wise softmax with per-row max subtraction; sums in double.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.row(r).array();
    row = (row - row.maxCoeff()).exp();
    const double sum = row.template cast<double>().sum();
    row *= static_cast<S>(1.0 / sum);
  }
}

inline Matrix softmax_rows(const Matrix& x) {
  Matrix out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (row.empty()) continue;
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

/// Backward of row softmax given its output `a`: a ∘ (da − rowsum(da ∘ a)).
template <typename S>
Mat<S> softmax_rows_backward(const Mat<S>& a, const Mat<S>& da) {
  const Eigen::Array<S, Eigen::Dynamic, 1> dot = (da.array() * a.array()).rowwise().sum();
  return (a.array() * (da.array().colwise() - dot)).matrix();
}

// ---------------------------------------------------------------------------
// GELU, exact erf form.

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_backward(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

template <typename S>
Mat<S> gelu_forward(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return static_cast<S>(gelu(static_cast<double>(v))); });
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return dy.binaryExpr(x, [](S g, S v) { return static_cast<S>(static_cast<double>(g) * gelu_backward(static_cast<double>(v))); });
}

/// GELU that also keeps Φ(x) for the backward pass.
template <typename S>
Mat<S> gelu_forward(const Mat<S>& x, Mat<S>& cdf) {
  cdf = x.unaryExpr([](S v) { return static_cast<S>(0.5 * (1.0 + std::erf(static_cast<double>(v) * std::numbers::sqrt2 / 2.0))); });
  return (x.array() * cdf.array()).matrix();
}

/// dy ∘ (Φ(x) + x φ(x)) using a cached Φ(x).
template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& cdf, const Mat<S>& dy) {
  const S norm = static_cast<S>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  const auto pdf = (x.array().square() * static_cast<S>(-0.5)).exp() * norm;
  return (dy.array() * (cdf.array() + x.array() * pdf)).matrix();
}

// ---------------------------------------------------------------------------
// MLP(x) = GELU(x W1 + b1) W2 + b2

template <typename S>
struct MlpCache {
  Mat<S> x;
  Mat<S> pre;
  Mat<S> cdf;
  Mat<S> act;
};

template <typename S>
struct Mlp {
  Linear<S> fc1;
  Linear<S> fc2;

  static Mlp create(Parameters<S>& params, const std::string& prefix, std::size_t d, std::size_t hidden, Rng& rng) {
    Mlp m;
    m.fc1 = Linear<S>::create(params, prefix + ".fc1", d, hidden, rng);
    m.fc2 = Linear<S>::create(params, prefix + ".fc2", hidden, d, rng);
    return m;
  }
  static Mlp create(Parameters<S>& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                    std::size_t out, Rng& rng) {
    Mlp m;
    m.fc1 = Linear<S>::create(params, prefix + ".fc1", in, hidden, rng);
    m.fc2 = Linear<S>::create(params, prefix + ".fc2", hidden, out, rng);
    return m;
  }

  Mat<S> forward(const Mat<S>& x, MlpCache<S>& cache) const {
    cache.x = x;
    cache.pre = fc1.forward(x);
    cache.act = gelu_forward(cache.pre, cache.cdf);
    return fc2.forward(cache.act);
  }
  Mat<S> backward(const Mat<S>& dy, const MlpCache<S>& cache) const {
    const Mat<S> dact = fc2.backward(cache.act, dy);
    return fc1.backward(cache.x, gelu_backward(cache.pre, cache.cdf, dact));
  }
};

// ---------------------------------------------------------------------------
// Multi-head self-attention

struct AttentionConfig {
  std::size_t d = 64;
  std::size_t h = 4;
  std::size_t d_m = 128;

  void validate() const {
    if (h == 0 || d % h != 0) {
      throw ParameterError("AttentionConfig: d=" + std::to_string(d) + " not divisible by h=" + std::to_string(h));
    }
    if (d_m < d) throw ParameterError("AttentionConfig: d_m must be >= d");
  }
  std::size_t head_dim() const { return d / h; }
};

template <typename S>
struct AttentionCache {
  Mat<S> x;
  Mat<S> q, k, v;
  Mat<S> concat;
  std::vector<Mat<S>> weights;  // [batch * heads], tokens x tokens
  std::size_t batch = 0;
  std::size_t tokens = 0;
};

/// Softmax(Q Kᵀ / √(d/h)) V per head, heads concatenated, then projected.
template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  std::size_t heads = 4;

  static MultiHeadAttention create(Parameters<S>& params, const std::string& prefix, std::size_t d, std::size_t h,
                                   Rng& rng) {
    AttentionConfig{d, h, d}.validate();
    MultiHeadAttention m;
    m.heads = h;
    m.wq = Linear<S>::create(params, prefix + ".q", d, d, rng);
    m.wk = Linear<S>::create(params, prefix + ".k", d, d, rng);
    m.wv = Linear<S>::create(params, prefix + ".v", d, d, rng);
    m.wo = Linear<S>::create(params, prefix + ".out", d, d, rng);
    return m;
  }

  std::size_t width() const { return static_cast<std::size_t>(wq.w->value.rows()); }

  Tensor3<S> forward(const Tensor3<S>& x, AttentionCache<S>& cache) const {
    const std::size_t d = width();
    if (x.channels() != d) throw ShapeError("mha: input " + x.shape() + " but model width " + std::to_string(d));
    const auto dh = static_cast<Eigen::Index>(d / heads);
    const auto t = static_cast<Eigen::Index>(x.tokens());
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    cache.batch = x.batch();
    cache.tokens = x.tokens();
    cache.x = x.mat();
    cache.q = wq.forward(x.mat());
    cache.k = wk.forward(x.mat());
    cache.v = wv.forward(x.mat());
    cache.concat.resize(x.mat().rows(), static_cast<Eigen::Index>(d));
    cache.weights.resize(x.batch() * heads);
    for (std::size_t b = 0; b < x.batch(); ++b) {
      const auto r0 = static_cast<Eigen::Index>(b) * t;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const auto c0 = static_cast<Eigen::Index>(hd) * dh;
        Mat<S>& a = cache.weights[b * heads + hd];
        a.noalias() = (cache.q.block(r0, c0, t, dh) * cache.k.block(r0, c0, t, dh).transpose()) * scale;
        softmax_rows_inplace(a);
        cache.concat.block(r0, c0, t, dh).noalias() = a * cache.v.block(r0, c0, t, dh);
      }
    }
    return Tensor3<S>(x.batch(), x.tokens(), wo.forward(cache.concat));
  }

  Tensor3<S> backward(const Tensor3<S>& dy, const AttentionCache<S>& cache) const {
    const std::size_t d = width();
    const auto dh = static_cast<Eigen::Index>(d / heads);
    const auto t = static_cast<Eigen::Index>(cache.tokens);
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Mat<S> dconcat = wo.backward(cache.concat, dy.mat());
    Mat<S> dq(cache.q.rows(), cache.q.cols());
    Mat<S> dk(cache.k.rows(), cache.k.cols());
    Mat<S> dv(cache.v.rows(), cache.v.cols());
    for (std::size_t b = 0; b < cache.batch; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b) * t;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const auto c0 = static_cast<Eigen::Index>(hd) * dh;
        const Mat<S>& a = cache.weights[b * heads + hd];
        const auto dout = dconcat.block(r0, c0, t, dh);
        const Mat<S> da = dout * cache.v.block(r0, c0, t, dh).transpose();
        dv.block(r0, c0, t, dh).noalias() = a.transpose() * dout;
        const Mat<S> ds = softmax_rows_backward(a, da) * scale;
        dq.block(r0, c0, t, dh).noalias() = ds * cache.k.block(r0, c0, t, dh);
        dk.block(r0, c0, t, dh).noalias() = ds.transpose() * cache.q.block(r0, c0, t, dh);
      }
    }
    Mat<S> dx = wq.backward(cache.x, dq);
    dx += wk.backward(cache.x, dk);
    dx += wv.backward(cache.x, dv);
    return Tensor3<S>(cache.batch, cache.tokens, std::move(dx));
  }
};

// ---------------------------------------------------------------------------
// Pre-norm transformer block:
//   x' = Attn(LN(x)) + x
//   y  = MLP(LN(x')) + x'

template <typename S>
struct TransformerBlockCache {
  LayerNormCache<S> ln1;
  AttentionCache<S> attn;
  LayerNormCache<S> ln2;
  MlpCache<S> mlp;
};

template <typename S>
struct TransformerBlock {
  LayerNorm<S> ln1;
  MultiHeadAttention<S> attn;
  LayerNorm<S> ln2;
  Mlp<S> mlp;

  static TransformerBlock create(Parameters<S>& params, const std::string& prefix, const AttentionConfig& cfg,
                                 Rng& rng) {
    cfg.validate();
    TransformerBlock blk;
    blk.ln1 = LayerNorm<S>::create(params, prefix + ".ln1", cfg.d);
    blk.attn = MultiHeadAttention<S>::create(params, prefix + ".attn", cfg.d, cfg.h, rng);
    blk.ln2 = LayerNorm<S>::create(params, prefix + ".ln2", cfg.d);
    blk.mlp = Mlp<S>::create(params, prefix + ".mlp", cfg.d, cfg.d_m, rng);
    return blk;
  }

  Tensor3<S> forward(const Tensor3<S>& x, TransformerBlockCache<S>& cache) const {
    const Tensor3<S> normed(x.batch(), x.tokens(), ln1.forward(x.mat(), cache.ln1));
    Tensor3<S> mid = attn.forward(normed, cache.attn);
    mid.mat() += x.mat();
    Mat<S> out = mlp.forward(ln2.forward(mid.mat(), cache.ln2), cache.mlp);
    out += mid.mat();
    return Tensor3<S>(x.batch(), x.tokens(), std::move(out));
  }

  Tensor3<S> backward(const Tensor3<S>& dy, const TransformerBlockCache<S>& cache) const {
    Mat<S> dmid = ln2.backward(mlp.backward(dy.mat(), cache.mlp), cache.ln2);
    dmid += dy.mat();
    const Tensor3<S> dattn = attn.backward(Tensor3<S>(dy.batch(), dy.tokens(), dmid), cache.attn);
    Mat<S> dx = ln1.backward(dattn.mat(), cache.ln1);
    dx += dmid;
    return Tensor3<S>(dy.batch(), dy.tokens(), std::move(dx));
  }
};

// ---------------------------------------------------------------------------
// SGD with momentum: v <- m v + g; w <- w - lr v; then grads are zeroed.

template <typename S>
void sgd_step(Parameters<S>& params, double lr, double momentum) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<S>& p = params[i];
    p.velocity = static_cast<S>(momentum) * p.velocity + p.grad;
    p.value -= static_cast<S>(lr) * p.velocity;
    p.grad.setZero();
  }
}

}  // namespace stsmixer::nn
