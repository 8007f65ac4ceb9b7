#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "stsmixer/numerics/matrix.hpp"

namespace stsmixer {

/// One frame of points, n x 3.
struct PointSet {
  Matrix coords;

  PointSet() = default;
  explicit PointSet(Matrix c) : coords(std::move(c)) {
    if (coords.cols() != 3) throw ShapeError("PointSet: expected n x 3 coordinates, got " + coords.shape());
    if (!all_finite(coords)) throw ParameterError("PointSet: non-finite coordinate");
  }
  std::size_t size() const noexcept { return coords.rows(); }
};

struct EdgeWeight {
  enum class Kind { binary, gaussian };
  Kind kind = Kind::binary;
  double sigma = 1.0;

  static EdgeWeight binary() { return {}; }
  static EdgeWeight gaussian(double sigma) { return {Kind::gaussian, sigma}; }
};

struct GraphMatrices {
  Matrix adjacency;
  Matrix degree;
  Matrix laplacian;

  std::size_t size() const noexcept { return adjacency.rows(); }
};

inline double squared_distance(const Matrix& pts, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < pts.cols(); ++c) {
    const double d = pts(i, c) - pts(j, c);
    s += d * d;
  }
  return s;
}

/// Indices of the k nearest points to `i` (self excluded), nearest first;
/// equal distances resolve to the lower index.
inline std::vector<std::size_t> nearest_neighbors(const Matrix& pts, std::size_t i, std::size_t k) {
  const std::size_t n = pts.rows();
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) cand.emplace_back(squared_distance(pts, i, j), j);
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  std::vector<std::size_t> out(k);
  for (std::size_t m = 0; m < k; ++m) out[m] = cand[m].second;
  return out;
}

inline GraphMatrices graph_from_adjacency(Matrix w) {
  if (w.rows() != w.cols()) throw ShapeError("graph_from_adjacency: adjacency must be square, got " + w.shape());
  const std::size_t n = w.rows();
  GraphMatrices g;
  g.degree = Matrix(n, n);
  g.laplacian = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += w(i, j);
    g.degree(i, i) = d;
    for (std::size_t j = 0; j < n; ++j) g.laplacian(i, j) = (i == j ? d : 0.0) - w(i, j);
  }
  g.adjacency = std::move(w);
  return g;
}

/// Union-symmetrized k-nearest-neighbor graph with L = D - W.
inline GraphMatrices knn_graph(const PointSet& points, std::size_t k, EdgeWeight weight = {}) {
  const std::size_t n = points.size();
  if (n < 2) throw ParameterError("knn_graph: need at least 2 points, got " + std::to_string(n));
  if (k < 1 || k >= n) {
    throw ParameterError("knn_graph: k must satisfy 1 <= k < n, got k=" + std::to_string(k) +
                         " n=" + std::to_string(n));
  }
  if (weight.kind == EdgeWeight::Kind::gaussian && !(weight.sigma > 0.0)) {
    throw ParameterError("knn_graph: gaussian sigma must be positive");
  }
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : nearest_neighbors(points.coords, i, k)) {
      double value = 1.0;
      if (weight.kind == EdgeWeight::Kind::gaussian) {
        value = std::exp(-squared_distance(points.coords, i, j) / (2.0 * weight.sigma * weight.sigma));
      }
      w(i, j) = value;
      w(j, i) = value;
    }
  }
  return graph_from_adjacency(std::move(w));
}

/// Sum over channels of xᵀ L x.
inline double laplacian_energy_check(const GraphMatrices& g, const Matrix& signal) {
  if (signal.rows() != g.size()) {
    throw ShapeError("laplacian_energy_check: signal " + signal.shape() + " on graph of size " +
                     std::to_string(g.size()));
  }
  const Matrix lx = matmul(g.laplacian, signal);
  double e = 0.0;
  for (std::size_t i = 0; i < signal.rows(); ++i)
    for (std::size_t c = 0; c < signal.cols(); ++c) e += signal(i, c) * lx(i, c);
  return e;
}

}  // namespace stsmixer
