#pragma once

#include <array>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "stsmixer/graph.hpp"
#include "stsmixer/numerics/matrix.hpp"
#include "stsmixer/numerics/symmetric_eigen.hpp"

namespace stsmixer {

/// Laplacian eigenbasis of one frame. Eigenvalues are the graph frequencies,
/// ascending.
class GraphSpectrum {
 public:
  explicit GraphSpectrum(EigenDecomposition d) : decomposition_(std::move(d)) {}

  static GraphSpectrum of(const GraphMatrices& g, double tol = kDefaultEigenTol) {
    return GraphSpectrum(symmetric_eigen(g.laplacian, tol));
  }

  std::size_t size() const noexcept { return decomposition_.size(); }
  const Matrix& basis() const noexcept { return decomposition_.eigenvectors; }
  const std::vector<double>& frequencies() const noexcept { return decomposition_.eigenvalues; }
  const EigenDecomposition& decomposition() const noexcept { return decomposition_; }

 private:
  EigenDecomposition decomposition_;
};

enum class Band { low = 0, mid = 1, high = 2 };

inline constexpr std::array<Band, 3> kAllBands{Band::low, Band::mid, Band::high};

inline std::string_view band_name(Band b) {
  switch (b) {
    case Band::low: return "low";
    case Band::mid: return "mid";
    case Band::high: return "high";
  }
  return "?";
}

inline Band parse_band(std::string_view s) {
  if (s == "low") return Band::low;
  if (s == "mid") return Band::mid;
  if (s == "high") return Band::high;
  throw ParameterError("unknown band name '" + std::string(s) + "' (expected low, mid or high)");
}

/// Comma-separated band names; empty string gives the empty set.
inline std::set<Band> parse_band_list(std::string_view s) {
  std::set<Band> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto token = s.substr(0, comma);
    if (!token.empty()) out.insert(parse_band(token));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

/// Index thresholds into the ascending spectrum: low [0,f_l), mid [f_l,f_h),
/// high [f_h,n).
struct BandSpec {
  std::size_t f_l = 6;
  std::size_t f_h = 10;
  std::size_t n = 0;

  void validate() const {
    if (!(f_l <= f_h && f_h <= n)) {
      throw ParameterError("BandSpec: require 0 <= f_l <= f_h <= n, got f_l=" + std::to_string(f_l) +
                           " f_h=" + std::to_string(f_h) + " n=" + std::to_string(n));
    }
  }

  std::pair<std::size_t, std::size_t> range(Band b) const {
    switch (b) {
      case Band::low: return {0, f_l};
      case Band::mid: return {f_l, f_h};
      case Band::high: return {f_h, n};
    }
    return {0, 0};
  }
};

struct BandSignals {
  Matrix low;
  Matrix mid;
  Matrix high;

  const Matrix& operator[](Band b) const {
    switch (b) {
      case Band::low: return low;
      case Band::mid: return mid;
      default: return high;
    }
  }
};

inline void require_rows(const GraphSpectrum& s, const Matrix& x, const char* what) {
  if (x.rows() != s.size()) {
    throw ShapeError(std::string(what) + ": signal " + x.shape() + " on spectrum of size " +
                     std::to_string(s.size()));
  }
}

/// Uᵀ X
inline Matrix gft(const GraphSpectrum& spectrum, const Matrix& signal) {
  require_rows(spectrum, signal, "gft");
  return matmul_tn(spectrum.basis(), signal);
}

/// U X̂
inline Matrix igft(const GraphSpectrum& spectrum, const Matrix& coeffs) {
  require_rows(spectrum, coeffs, "igft");
  return matmul(spectrum.basis(), coeffs);
}

namespace detail {

/// Inverse transform of the coefficients whose index has keep[i] set.
inline Matrix masked_igft(const GraphSpectrum& spectrum, const Matrix& coeffs, const std::vector<bool>& keep) {
  Matrix masked = coeffs;
  for (std::size_t i = 0; i < masked.rows(); ++i)
    if (!keep[i])
      for (double& v : masked.row(i)) v = 0.0;
  return igft(spectrum, masked);
}

inline std::vector<bool> band_mask(const BandSpec& bands, const std::set<Band>& selected) {
  std::vector<bool> keep(bands.n, false);
  for (Band b : selected) {
    const auto [lo, hi] = bands.range(b);
    for (std::size_t i = lo; i < hi; ++i) keep[i] = true;
  }
  return keep;
}

}  // namespace detail

inline BandSignals band_decompose(const GraphSpectrum& spectrum, const Matrix& coords, const BandSpec& bands) {
  require_rows(spectrum, coords, "band_decompose");
  bands.validate();
  if (bands.n != spectrum.size()) {
    throw ParameterError("band_decompose: BandSpec n=" + std::to_string(bands.n) + " but spectrum has " +
                         std::to_string(spectrum.size()) + " frequencies");
  }
  const Matrix coeffs = gft(spectrum, coords);
  BandSignals out;
  out.low = detail::masked_igft(spectrum, coeffs, detail::band_mask(bands, {Band::low}));
  out.mid = detail::masked_igft(spectrum, coeffs, detail::band_mask(bands, {Band::mid}));
  out.high = detail::masked_igft(spectrum, coeffs, detail::band_mask(bands, {Band::high}));
  return out;
}

/// Per-frequency energy Σ_c X̂(i,c)²; sums to ‖X‖²_F.
inline std::vector<double> energy_spectrum(const GraphSpectrum& spectrum, const Matrix& coords) {
  const Matrix coeffs = gft(spectrum, coords);
  std::vector<double> e(coeffs.rows(), 0.0);
  for (std::size_t i = 0; i < coeffs.rows(); ++i)
    for (double v : coeffs.row(i)) e[i] += v * v;
  return e;
}

/// Fraction of total energy carried by indices [lo, hi).
inline double energy_fraction(const std::vector<double>& energy, std::size_t lo, std::size_t hi) {
  double total = 0.0, part = 0.0;
  for (std::size_t i = 0; i < energy.size(); ++i) {
    total += energy[i];
    if (i >= lo && i < hi) part += energy[i];
  }
  return total > 0.0 ? part / total : 0.0;
}

/// Reconstruction with the coefficients of every band in `drop` zeroed.
inline Matrix band_reject(const GraphSpectrum& spectrum, const Matrix& coords, const std::set<Band>& drop,
                          const BandSpec& bands) {
  require_rows(spectrum, coords, "band_reject");
  bands.validate();
  if (bands.n != spectrum.size()) {
    throw ParameterError("band_reject: BandSpec n=" + std::to_string(bands.n) + " but spectrum has " +
                         std::to_string(spectrum.size()) + " frequencies");
  }
  std::set<Band> kept;
  for (Band b : kAllBands)
    if (!drop.contains(b)) kept.insert(b);
  return detail::masked_igft(spectrum, gft(spectrum, coords), detail::band_mask(bands, kept));
}

inline Matrix band_reject(const GraphSpectrum& spectrum, const Matrix& coords, const std::vector<std::string>& drop,
                          const BandSpec& bands) {
  std::set<Band> parsed;
  for (const auto& name : drop) parsed.insert(parse_band(name));
  return band_reject(spectrum, coords, parsed, bands);
}

/// Root-mean-square entry difference.
inline double rmse(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "rmse");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace stsmixer
