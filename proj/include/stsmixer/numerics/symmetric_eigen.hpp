#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "stsmixer/numerics/matrix.hpp"

namespace stsmixer {

/// Raised when the Jacobi sweeps hit their cap before the off-diagonal
/// mass drops below tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (off-diagonal residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Eigenvalues ascending; eigenvector i is column i of `eigenvectors`.
struct EigenDecomposition {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;

  std::size_t size() const noexcept { return eigenvalues.size(); }

  /// Q Λ Qᵀ
  Matrix reconstruct() const {
    const std::size_t n = size();
    Matrix scaled = eigenvectors;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= eigenvalues[j];
    return matmul(scaled, transpose(eigenvectors));
  }
};

inline constexpr int kJacobiMaxSweeps = 100;
inline constexpr double kDefaultEigenTol = 1e-10;

namespace detail {

inline double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace detail

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// The input is symmetrized as (M + Mᵀ)/2 first. Sweeps stop once the
/// off-diagonal Frobenius norm falls below tol·‖M‖_F; at most 100 sweeps.
/// Eigenpairs come back sorted ascending (stable on the original diagonal
/// position) and each eigenvector's first entry with |v| > 1e-12 is positive.
inline EigenDecomposition symmetric_eigen(const Matrix& m, double tol = kDefaultEigenTol) {
  if (m.rows() != m.cols()) {
    throw ShapeError("symmetric_eigen: matrix must be square, got " + m.shape());
  }
  const std::size_t n = m.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (m(i, j) + m(j, i));
  Matrix v = Matrix::identity(n);

  const double scale = frobenius_norm(a);
  const double threshold = tol * scale;
  double off = detail::off_diagonal_norm(a);
  int sweep = 0;
  while (scale > 0.0 && off >= threshold) {
    if (sweep == kJacobiMaxSweeps) {
      throw ConvergenceError("symmetric_eigen: no convergence after " +
                                 std::to_string(kJacobiMaxSweeps) + " sweeps",
                             off);
    }
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Rotation angle chosen to annihilate a(p, q); smaller root for stability.
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p);
          const double arq = a(r, q);
          const double nrp = arp - s * (arq + tau * arp);
          const double nrq = arq + s * (arp - tau * arq);
          a(r, p) = nrp;
          a(p, r) = nrp;
          a(r, q) = nrq;
          a(q, r) = nrq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = vrp - s * (vrq + tau * vrp);
          v(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
    off = detail::off_diagonal_norm(a);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.eigenvalues[k] = a(src, src);
    double sign = 1.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (std::abs(v(r, src)) > 1e-12) {
        sign = v(r, src) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, k) = sign * v(r, src);
  }
  return out;
}

}  // namespace stsmixer
