#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "stsmixer/data/video.hpp"
#include "stsmixer/graph.hpp"
#include "stsmixer/model/config.hpp"
#include "stsmixer/nn/layers.hpp"

namespace stsmixer {

/// Greedy farthest point sampling starting from `first`. Each step picks the
/// point with the largest distance to the already-picked set; ties go to the
/// lower index.
inline std::vector<std::size_t> farthest_point_sample(const Matrix& pts, std::size_t count, std::size_t first = 0) {
  const std::size_t n = pts.rows();
  if (count > n) {
    throw ParameterError("farthest_point_sample: cannot pick " + std::to_string(count) + " of " + std::to_string(n));
  }
  if (count == 0) return {};
  if (first >= n) throw ParameterError("farthest_point_sample: start index out of range");
  std::vector<std::size_t> picked{first};
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t last = first;
  while (picked.size() < count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], squared_distance(pts, i, last));
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    picked.push_back(best);
    last = best;
  }
  return picked;
}

/// Point farthest from the centroid (lowest index on ties). Depends only on
/// the geometry, so sampling seeded from it does not depend on point order.
inline std::size_t fps_seed_index(const Matrix& pts) {
  double c[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < pts.rows(); ++i)
    for (std::size_t a = 0; a < 3; ++a) c[a] += pts(i, a);
  for (double& v : c) v /= static_cast<double>(pts.rows());
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    double d = 0.0;
    for (std::size_t a = 0; a < 3; ++a) d += (pts(i, a) - c[a]) * (pts(i, a) - c[a]);
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// Source point of a grouped neighbour.
struct PointRef {
  std::uint32_t frame = 0;
  std::uint32_t index = 0;
  friend bool operator==(const PointRef&, const PointRef&) = default;
};

/// Parameter-free part of the point 4D convolution: anchors, their
/// spatiotemporal groups, and the (dx, dy, dz, dt) displacement of every
/// group member, spatial part divided by the ball radius. Anchor tokens are ordered frame-major.
struct EncoderGeometry {
  std::size_t out_frames = 0;
  std::size_t anchors = 0;
  std::vector<std::size_t> center_frames;
  Matrix anchor_coords;                      // (T'·N') x 3
  std::vector<std::size_t> group_offsets;    // T'·N' + 1 entries
  std::vector<PointRef> parents;             // one per group member
  Matrix displacements;                      // members x 4

  std::size_t tokens() const noexcept { return out_frames * anchors; }
  Matrix frame_anchors(std::size_t t) const {
    Matrix m(anchors, 3);
    for (std::size_t n = 0; n < anchors; ++n)
      for (std::size_t a = 0; a < 3; ++a) m(n, a) = anchor_coords(t * anchors + n, a);
    return m;
  }
};

inline EncoderGeometry group_clip(const PointCloudVideo& clip, const ModelConfig& cfg) {
  const std::size_t frames = clip.frames;
  const std::size_t stride = cfg.temporal_stride;
  if (frames == 0 || frames % stride != 0) {
    throw ParameterError("point4d_conv: frame count " + std::to_string(frames) + " is not a multiple of stride " +
                         std::to_string(stride));
  }
  if (clip.points < cfg.anchors) {
    throw ParameterError("point4d_conv: " + std::to_string(clip.points) + " points cannot yield " +
                         std::to_string(cfg.anchors) + " anchors");
  }
  EncoderGeometry g;
  g.out_frames = frames / stride;
  g.anchors = cfg.anchors;
  g.anchor_coords = Matrix(g.tokens(), 3);
  g.group_offsets.push_back(0);
  const double r2 = cfg.spatial_radius * cfg.spatial_radius;
  const double inv_radius = 1.0 / cfg.spatial_radius;
  std::vector<std::pair<double, PointRef>> cand;
  std::vector<double> disp_data;

  for (std::size_t tp = 0; tp < g.out_frames; ++tp) {
    const std::size_t center = tp * stride;
    g.center_frames.push_back(center);
    const Matrix pts = clip.frame(center);
    const auto picked = farthest_point_sample(pts, cfg.anchors, fps_seed_index(pts));
    const std::size_t f0 = center >= cfg.temporal_radius ? center - cfg.temporal_radius : 0;
    const std::size_t f1 = std::min(frames - 1, center + cfg.temporal_radius);
    for (std::size_t a = 0; a < cfg.anchors; ++a) {
      const std::size_t tok = tp * cfg.anchors + a;
      double anchor[3];
      for (std::size_t ax = 0; ax < 3; ++ax) anchor[ax] = g.anchor_coords(tok, ax) = pts(picked[a], ax);
      cand.clear();
      for (std::size_t f = f0; f <= f1; ++f) {
        for (std::size_t n = 0; n < clip.points; ++n) {
          double d2 = 0.0;
          for (std::size_t ax = 0; ax < 3; ++ax) {
            const double d = static_cast<double>(clip.at(f, n, ax)) - anchor[ax];
            d2 += d * d;
          }
          if (d2 <= r2) cand.push_back({d2, {static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(n)}});
        }
      }
      const auto keep = std::min(cand.size(), cfg.group_size);
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                        [](const auto& x, const auto& y) {
                          if (x.first != y.first) return x.first < y.first;
                          if (x.second.frame != y.second.frame) return x.second.frame < y.second.frame;
                          return x.second.index < y.second.index;
                        });
      if (keep == 0) {
        // Unreachable for anchors drawn from the center frame; kept so that a
        // group is never empty.
        g.parents.push_back({static_cast<std::uint32_t>(center), static_cast<std::uint32_t>(picked[a])});
        disp_data.insert(disp_data.end(), {0.0, 0.0, 0.0, 0.0});
      }
      for (std::size_t m = 0; m < keep; ++m) {
        const PointRef ref = cand[m].second;
        g.parents.push_back(ref);
        for (std::size_t ax = 0; ax < 3; ++ax)
          disp_data.push_back((static_cast<double>(clip.at(ref.frame, ref.index, ax)) - anchor[ax]) * inv_radius);
        disp_data.push_back(static_cast<double>(ref.frame) - static_cast<double>(center));
      }
      g.group_offsets.push_back(g.parents.size());
    }
  }
  g.displacements = Matrix(g.parents.size(), 4, std::move(disp_data));
  return g;
}

template <typename S>
struct PointEncoderCache {
  nn::MlpCache<S> mlp;
  std::vector<Eigen::Index> argmax;  // tokens x C, member row that won the max
  std::size_t members = 0;
  nn::LayerNormCache<S> ln;
};

/// Shared two-layer displacement MLP, a max over each group, then LayerNorm.
template <typename S>
struct PointEncoder {
  nn::Mlp<S> mlp;
  nn::LayerNorm<S> ln;

  static PointEncoder create(nn::Parameters<S>& params, std::size_t channels, Rng& rng) {
    PointEncoder e;
    e.mlp = nn::Mlp<S>::create(params, "encoder.mlp", 4, channels, channels, rng);
    e.ln = nn::LayerNorm<S>::create(params, "encoder.ln", channels);
    return e;
  }

  std::size_t channels() const { return static_cast<std::size_t>(mlp.fc2.w->value.cols()); }

  /// Returns F' as a (T'·N') x C matrix.
  nn::Mat<S> forward(const EncoderGeometry& g, PointEncoderCache<S>& cache) const {
    const nn::Mat<S> h = mlp.forward(nn::to_mat<S>(g.displacements), cache.mlp);
    const auto c = h.cols();
    nn::Mat<S> out(static_cast<Eigen::Index>(g.tokens()), c);
    cache.members = static_cast<std::size_t>(h.rows());
    cache.argmax.assign(g.tokens() * static_cast<std::size_t>(c), 0);
    for (std::size_t tok = 0; tok < g.tokens(); ++tok) {
      const auto b = static_cast<Eigen::Index>(g.group_offsets[tok]);
      const auto e = static_cast<Eigen::Index>(g.group_offsets[tok + 1]);
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        Eigen::Index best = b;
        for (Eigen::Index r = b + 1; r < e; ++r)
          if (h(r, ch) > h(best, ch)) best = r;
        out(static_cast<Eigen::Index>(tok), ch) = h(best, ch);
        cache.argmax[tok * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)] = best;
      }
    }
    return ln.forward(out, cache.ln);
  }

  void backward(const nn::Mat<S>& dout, const PointEncoderCache<S>& cache) const {
    const nn::Mat<S> dfeat = ln.backward(dout, cache.ln);
    const auto c = dfeat.cols();
    nn::Mat<S> dh = nn::Mat<S>::Zero(static_cast<Eigen::Index>(cache.members), c);
    for (Eigen::Index tok = 0; tok < dfeat.rows(); ++tok)
      for (Eigen::Index ch = 0; ch < c; ++ch)
        dh(cache.argmax[static_cast<std::size_t>(tok * c + ch)], ch) += dfeat(tok, ch);
    mlp.backward(dh, cache.mlp);
  }
};

}  // namespace stsmixer
