#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "stsmixer/data/video.hpp"
#include "stsmixer/model/config.hpp"
#include "stsmixer/numerics/rng.hpp"

namespace stsmixer {

struct DatasetSpec {
  Task task = Task::classification;
  std::uint32_t num_classes = 4;       // motion classes, or labels (ground + cluster kinds)
  std::uint32_t clips_per_class = 8;   // segmentation: total clip count
  std::uint32_t frames = 8;
  std::uint32_t points = 128;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // segmentation only
  std::uint32_t min_clusters = 1;
  std::uint32_t max_clusters = 3;
  std::uint32_t cluster_points = 16;

  void validate() const {
    if (frames == 0 || points == 0 || clips_per_class == 0) {
      throw ParameterError("DatasetSpec: frames, points and clip counts must be positive");
    }
    if (!(noise_sigma >= 0.0)) throw ParameterError("DatasetSpec: noise_sigma must be >= 0");
    if (task == Task::classification && num_classes != 4) {
      throw ParameterError("DatasetSpec: the motion generator defines exactly 4 classes");
    }
    if (task == Task::segmentation) {
      if (min_clusters > max_clusters || max_clusters > 3) {
        throw ParameterError("DatasetSpec: require min_clusters <= max_clusters <= 3");
      }
      if (std::size_t{max_clusters} * cluster_points >= points) {
        throw ParameterError("DatasetSpec: clusters leave no ground points");
      }
      if (num_classes != 4) throw ParameterError("DatasetSpec: segmentation uses 4 labels (ground + 3 kinds)");
    }
  }
};

inline void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"task", task_name(s.task)},
                     {"num_classes", s.num_classes},
                     {"clips_per_class", s.clips_per_class},
                     {"frames", s.frames},
                     {"points", s.points},
                     {"noise_sigma", s.noise_sigma},
                     {"seed", s.seed},
                     {"min_clusters", s.min_clusters},
                     {"max_clusters", s.max_clusters},
                     {"cluster_points", s.cluster_points}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s.task = parse_task(j.at("task").get<std::string>());
  j.at("num_classes").get_to(s.num_classes);
  j.at("clips_per_class").get_to(s.clips_per_class);
  j.at("frames").get_to(s.frames);
  j.at("points").get_to(s.points);
  j.at("noise_sigma").get_to(s.noise_sigma);
  j.at("seed").get_to(s.seed);
  j.at("min_clusters").get_to(s.min_clusters);
  j.at("max_clusters").get_to(s.max_clusters);
  j.at("cluster_points").get_to(s.cluster_points);
}

enum class Motion : std::uint16_t { translate_x = 0, rotate_z = 1, expand = 2, oscillate = 3 };

inline constexpr std::array<const char*, 4> kMotionNames{"translate_x", "rotate_z", "expand", "oscillate"};
inline constexpr std::array<const char*, 4> kSegmentationLabelNames{"ground", "box", "column", "ball"};

/// Sampled motion parameters of one classification clip, in raw (pre-
/// normalization) units. normalized = (raw - center) * scale.
struct MotionParams {
  Motion motion = Motion::translate_x;
  double velocity = 0.0;   // translate_x: x shift per frame
  double omega = 0.0;      // rotate_z: radians per frame about the z axis through the origin
  double rate = 0.0;       // expand: scale grows by (1 + rate * t) about the frame-0 centroid
  double amplitude = 0.0;  // oscillate: y offset amplitude
  double period = 1.0;     // oscillate: frames per cycle
  std::array<double, 3> center{};
  double scale = 1.0;
};

/// Rigid mover of a segmentation scene, raw units.
struct ClusterParams {
  std::uint16_t label = 1;
  std::uint32_t first_point = 0;
  std::uint32_t count = 0;
  std::array<double, 3> velocity{};
};

struct GeneratedClip {
  std::string id;
  std::string group;     // class name or "scene"
  bool train = true;
  PointCloudVideo video;
  MotionParams motion;                  // classification only
  std::vector<ClusterParams> clusters;  // segmentation only
  std::array<double, 3> center{};
  double scale = 1.0;
};

namespace detail {

inline std::uint64_t clip_seed(std::uint64_t seed, std::uint64_t group, std::uint64_t index) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (group * 1000003ULL + index + 1));
}

inline std::array<double, 3> unit_vector(Rng& rng) {
  for (;;) {
    const std::array<double, 3> v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

/// Surface sample of a sphere or torus, then stretched along x so that
/// rotation about z changes the occupied region.
inline std::vector<std::array<double, 3>> sample_shape(Rng& rng, std::size_t n) {
  const bool torus = rng.uniform() < 0.5;
  const double stretch = rng.uniform(1.6, 2.2);
  const double squash = rng.uniform(0.6, 0.9);
  std::vector<std::array<double, 3>> pts(n);
  for (auto& p : pts) {
    if (torus) {
      const double u = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double v = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double big = 1.0, small = 0.35;
      p = {(big + small * std::cos(v)) * std::cos(u), (big + small * std::cos(v)) * std::sin(u), small * std::sin(v)};
    } else {
      p = unit_vector(rng);
    }
    p[0] *= stretch;
    p[2] *= squash;
  }
  return pts;
}

/// Scales the clip's joint bounding box to unit largest side, centered at the
/// origin; returns (center, scale).
inline std::pair<std::array<double, 3>, double> box_normalization(const std::vector<std::array<double, 3>>& all) {
  std::array<double, 3> lo = all.front(), hi = all.front();
  for (const auto& p : all)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  double extent = 0.0;
  std::array<double, 3> center{};
  for (int a = 0; a < 3; ++a) {
    extent = std::max(extent, hi[a] - lo[a]);
    center[a] = 0.5 * (lo[a] + hi[a]);
  }
  return {center, extent > 0.0 ? 1.0 / extent : 1.0};
}

inline void store(PointCloudVideo& v, const std::vector<std::array<double, 3>>& raw,
                  const std::array<double, 3>& center, double scale) {
  for (std::size_t i = 0; i < raw.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) v.coords[i * 3 + a] = static_cast<float>((raw[i][a] - center[a]) * scale);
}

}  // namespace detail

/// Frame-t position of a frame-0 point under the clip's motion (raw units).
inline std::array<double, 3> apply_motion(const MotionParams& m, const std::array<double, 3>& p0,
                                          const std::array<double, 3>& centroid0, double t) {
  switch (m.motion) {
    case Motion::translate_x: return {p0[0] + m.velocity * t, p0[1], p0[2]};
    case Motion::rotate_z: {
      const double c = std::cos(m.omega * t), s = std::sin(m.omega * t);
      return {c * p0[0] - s * p0[1], s * p0[0] + c * p0[1], p0[2]};
    }
    case Motion::expand: {
      const double f = 1.0 + m.rate * t;
      return {centroid0[0] + f * (p0[0] - centroid0[0]), centroid0[1] + f * (p0[1] - centroid0[1]),
              centroid0[2] + f * (p0[2] - centroid0[2])};
    }
    case Motion::oscillate:
      return {p0[0], p0[1] + m.amplitude * std::sin(2.0 * std::numbers::pi * t / m.period), p0[2]};
  }
  return p0;
}

/// One clip of class `motion`. Coordinates are normalized to the clip's unit
/// bounding box; per-point Gaussian jitter is added before normalization.
inline GeneratedClip generate_motion_clip(const DatasetSpec& spec, Motion motion, std::uint32_t index) {
  Rng rng(detail::clip_seed(spec.seed, static_cast<std::uint64_t>(motion), index));
  GeneratedClip out;
  out.group = kMotionNames[static_cast<std::size_t>(motion)];
  out.id = out.group + "_" + std::string(4 - std::min<std::size_t>(4, std::to_string(index).size()), '0') +
           std::to_string(index);
  out.train = index % 2 == 0;

  auto shape = detail::sample_shape(rng, spec.points);
  const double yaw = rng.uniform(-0.3, 0.3);
  const std::array<double, 3> offset{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
  for (auto& p : shape) {
    const double x = std::cos(yaw) * p[0] - std::sin(yaw) * p[1];
    const double y = std::sin(yaw) * p[0] + std::cos(yaw) * p[1];
    p = {x + offset[0], y + offset[1], p[2] + offset[2]};
  }

  MotionParams& m = out.motion;
  m.motion = motion;
  m.velocity = rng.uniform(0.25, 0.4);
  m.omega = rng.uniform(0.2, 0.35);
  m.rate = rng.uniform(0.08, 0.14);
  m.amplitude = rng.uniform(0.5, 0.8);
  m.period = rng.uniform(4.0, 6.0);

  std::array<double, 3> centroid0{};
  for (const auto& p : shape)
    for (int a = 0; a < 3; ++a) centroid0[a] += p[a] / static_cast<double>(shape.size());

  std::vector<std::array<double, 3>> raw;
  raw.reserve(std::size_t{spec.frames} * spec.points);
  for (std::uint32_t t = 0; t < spec.frames; ++t) {
    for (const auto& p0 : shape) {
      auto p = apply_motion(m, p0, centroid0, static_cast<double>(t));
      if (spec.noise_sigma > 0.0)
        for (double& c : p) c += rng.normal(0.0, spec.noise_sigma);
      raw.push_back(p);
    }
  }
  const auto [center, scale] = detail::box_normalization(raw);
  m.center = out.center = center;
  m.scale = out.scale = scale;
  out.video = PointCloudVideo(spec.frames, spec.points);
  detail::store(out.video, raw, center, scale);
  out.video.clip_label = static_cast<std::uint16_t>(motion);
  return out;
}

inline std::vector<GeneratedClip> generate_classification(const DatasetSpec& spec) {
  if (spec.task != Task::classification) throw ParameterError("generate_classification: spec task is not classification");
  spec.validate();
  std::vector<GeneratedClip> out;
  for (std::uint16_t c = 0; c < 4; ++c)
    for (std::uint32_t i = 0; i < spec.clips_per_class; ++i) out.push_back(generate_motion_clip(spec, static_cast<Motion>(c), i));
  return out;
}

/// Ground plane (label 0) plus movers with distinct, randomly drawn kinds.
/// Each kind is its own label: 1 a low wide box sliding along ±x, 2 a tall
/// column walking along ±y, 3 a ball floating above column height and
/// drifting diagonally.
inline GeneratedClip generate_scene_clip(const DatasetSpec& spec, std::uint32_t index) {
  Rng rng(detail::clip_seed(spec.seed, 17, index));
  GeneratedClip out;
  out.group = "scene";
  out.id = "scene_" + std::string(4 - std::min<std::size_t>(4, std::to_string(index).size()), '0') +
           std::to_string(index);
  out.train = index % 2 == 0;

  const auto movers =
      spec.min_clusters + static_cast<std::uint32_t>(rng.below(spec.max_clusters - spec.min_clusters + 1));
  const std::uint32_t ground = spec.points - movers * spec.cluster_points;

  std::vector<std::array<double, 3>> base(spec.points);
  std::vector<std::uint16_t> labels(spec.points, 0);
  for (std::uint32_t i = 0; i < ground; ++i) base[i] = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0};

  std::array<std::uint16_t, 3> kinds{1, 2, 3};
  rng.shuffle(std::span<std::uint16_t>(kinds));
  for (std::uint32_t j = 0; j < movers; ++j) {
    ClusterParams c;
    c.label = kinds[j];
    c.first_point = ground + j * spec.cluster_points;
    c.count = spec.cluster_points;
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const std::array<double, 2> start{rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
    for (std::uint32_t m = 0; m < c.count; ++m) {
      std::array<double, 3> p{};
      switch (c.label) {
        case 1: p = {rng.uniform(-0.25, 0.25), rng.uniform(-0.12, 0.12), rng.uniform(0.1, 0.3)}; break;
        case 2: p = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.05, 0.7)}; break;
        default: {
          const auto u = detail::unit_vector(rng);
          p = {0.15 * u[0], 0.15 * u[1], 0.9 + 0.15 * u[2]};
        }
      }
      base[c.first_point + m] = {start[0] + p[0], start[1] + p[1], p[2]};
      labels[c.first_point + m] = c.label;
    }
    switch (c.label) {
      case 1: c.velocity = {sign * rng.uniform(0.10, 0.15), 0.0, 0.0}; break;
      case 2: c.velocity = {0.0, sign * rng.uniform(0.08, 0.12), 0.0}; break;
      default: {
        const double v = rng.uniform(0.07, 0.10);
        c.velocity = {sign * v, v, 0.0};
      }
    }
    out.clusters.push_back(c);
  }

  std::vector<std::array<double, 3>> raw;
  raw.reserve(std::size_t{spec.frames} * spec.points);
  for (std::uint32_t t = 0; t < spec.frames; ++t) {
    for (std::uint32_t i = 0; i < spec.points; ++i) {
      auto p = base[i];
      for (const auto& c : out.clusters)
        if (i >= c.first_point && i < c.first_point + c.count)
          for (int a = 0; a < 3; ++a) p[a] += c.velocity[a] * static_cast<double>(t);
      if (spec.noise_sigma > 0.0)
        for (double& v : p) v += rng.normal(0.0, spec.noise_sigma);
      raw.push_back(p);
    }
  }
  const auto [center, scale] = detail::box_normalization(raw);
  out.center = center;
  out.scale = scale;
  out.video = PointCloudVideo(spec.frames, spec.points);
  detail::store(out.video, raw, center, scale);
  std::vector<std::uint16_t> all_labels;
  all_labels.reserve(std::size_t{spec.frames} * spec.points);
  for (std::uint32_t t = 0; t < spec.frames; ++t) all_labels.insert(all_labels.end(), labels.begin(), labels.end());
  out.video.point_labels = std::move(all_labels);
  return out;
}

inline std::vector<GeneratedClip> generate_segmentation(const DatasetSpec& spec) {
  if (spec.task != Task::segmentation) throw ParameterError("generate_segmentation: spec task is not segmentation");
  spec.validate();
  std::vector<GeneratedClip> out;
  for (std::uint32_t i = 0; i < spec.clips_per_class; ++i) out.push_back(generate_scene_clip(spec, i));
  return out;
}

inline std::vector<GeneratedClip> generate_dataset(const DatasetSpec& spec) {
  return spec.task == Task::classification ? generate_classification(spec) : generate_segmentation(spec);
}

/// `n` points drawn uniformly on the unit sphere surface.
inline Matrix sphere_sample(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = detail::unit_vector(rng);
    for (std::size_t a = 0; a < 3; ++a) m(i, a) = p[a];
  }
  return m;
}

/// Unlabelled clip whose frame t is sphere_sample(n, seed + t).
inline PointCloudVideo sphere_clip(std::uint32_t frames, std::uint32_t n, std::uint64_t seed) {
  PointCloudVideo v;
  v.frames = frames;
  v.points = n;
  v.coords.resize(std::size_t{frames} * n * 3);
  for (std::uint32_t t = 0; t < frames; ++t) v.set_frame(t, sphere_sample(n, seed + t));
  return v;
}

}  // namespace stsmixer
