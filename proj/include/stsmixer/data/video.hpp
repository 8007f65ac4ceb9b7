#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stsmixer/numerics/matrix.hpp"

namespace stsmixer {

/// T frames of N points each. Coordinates are stored frame-major:
/// coords[(t * N + n) * 3 + axis].
struct PointCloudVideo {
  std::uint32_t frames = 0;
  std::uint32_t points = 0;
  std::vector<float> coords;
  std::optional<std::vector<std::uint16_t>> point_labels;
  std::optional<std::uint16_t> clip_label;

  PointCloudVideo() = default;
  PointCloudVideo(std::uint32_t t, std::uint32_t n) : frames(t), points(n), coords(std::size_t{t} * n * 3, 0.0f) {}

  float& at(std::size_t t, std::size_t n, std::size_t axis) { return coords[(t * points + n) * 3 + axis]; }
  float at(std::size_t t, std::size_t n, std::size_t axis) const { return coords[(t * points + n) * 3 + axis]; }

  std::uint16_t label(std::size_t t, std::size_t n) const { return (*point_labels)[t * points + n]; }

  /// Frame t as an N x 3 double matrix.
  Matrix frame(std::size_t t) const {
    Matrix m(points, 3);
    for (std::size_t n = 0; n < points; ++n)
      for (std::size_t a = 0; a < 3; ++a) m(n, a) = at(t, n, a);
    return m;
  }

  void set_frame(std::size_t t, const Matrix& m) {
    if (m.rows() != points || m.cols() != 3) throw ShapeError("set_frame: expected " + Matrix::shape_string(points, 3));
    for (std::size_t n = 0; n < points; ++n)
      for (std::size_t a = 0; a < 3; ++a) at(t, n, a) = static_cast<float>(m(n, a));
  }

  bool coords_finite() const {
    for (float v : coords)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const PointCloudVideo&, const PointCloudVideo&) = default;
};

/// Centers the clip's joint bounding box at the origin and scales its largest
/// side to 1. A degenerate (single-point) box is only centered.
inline void normalize_unit_box(PointCloudVideo& v) {
  if (v.coords.empty()) return;
  double lo[3], hi[3];
  for (int a = 0; a < 3; ++a) lo[a] = hi[a] = v.coords[static_cast<std::size_t>(a)];
  for (std::size_t i = 0; i < v.coords.size(); ++i) {
    const auto a = i % 3;
    lo[a] = std::min(lo[a], static_cast<double>(v.coords[i]));
    hi[a] = std::max(hi[a], static_cast<double>(v.coords[i]));
  }
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo[a]);
  const double scale = extent > 0.0 ? 1.0 / extent : 1.0;
  for (std::size_t i = 0; i < v.coords.size(); ++i) {
    const auto a = i % 3;
    const double center = 0.5 * (lo[a] + hi[a]);
    v.coords[i] = static_cast<float>((static_cast<double>(v.coords[i]) - center) * scale);
  }
}

}  // namespace stsmixer
