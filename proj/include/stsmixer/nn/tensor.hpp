#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "stsmixer/numerics/matrix.hpp"
#include "stsmixer/numerics/rng.hpp"

namespace stsmixer::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// batch x tokens x channels, stored as a (batch·tokens) x channels matrix so
/// token-wise layers operate on the whole batch in one product.
template <typename S>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t batch, std::size_t tokens, std::size_t channels)
      : batch_(batch), tokens_(tokens), data_(Mat<S>::Zero(rows(batch, tokens), cols(channels))) {}
  Tensor3(std::size_t batch, std::size_t tokens, Mat<S> data) : batch_(batch), tokens_(tokens), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.rows()) != batch * tokens) {
      throw ShapeError("Tensor3: " + std::to_string(data_.rows()) + " rows for batch " + std::to_string(batch) +
                       " x tokens " + std::to_string(tokens));
    }
  }

  std::size_t batch() const noexcept { return batch_; }
  std::size_t tokens() const noexcept { return tokens_; }
  std::size_t channels() const noexcept { return static_cast<std::size_t>(data_.cols()); }

  Mat<S>& mat() noexcept { return data_; }
  const Mat<S>& mat() const noexcept { return data_; }

  auto slice(std::size_t b) { return data_.middleRows(static_cast<Eigen::Index>(b * tokens_), static_cast<Eigen::Index>(tokens_)); }
  auto slice(std::size_t b) const {
    return data_.middleRows(static_cast<Eigen::Index>(b * tokens_), static_cast<Eigen::Index>(tokens_));
  }

  S& at(std::size_t b, std::size_t t, std::size_t c) {
    return data_(static_cast<Eigen::Index>(b * tokens_ + t), static_cast<Eigen::Index>(c));
  }
  S at(std::size_t b, std::size_t t, std::size_t c) const {
    return data_(static_cast<Eigen::Index>(b * tokens_ + t), static_cast<Eigen::Index>(c));
  }

  bool same_shape(const Tensor3& o) const {
    return batch_ == o.batch_ && tokens_ == o.tokens_ && channels() == o.channels();
  }
  bool all_finite() const { return data_.allFinite(); }

  std::string shape() const {
    return "(" + std::to_string(batch_) + "," + std::to_string(tokens_) + "," + std::to_string(channels()) + ")";
  }

 private:
  static Eigen::Index rows(std::size_t b, std::size_t t) { return static_cast<Eigen::Index>(b * t); }
  static Eigen::Index cols(std::size_t c) { return static_cast<Eigen::Index>(c); }

  std::size_t batch_ = 0;
  std::size_t tokens_ = 0;
  Mat<S> data_;
};

/// A trainable tensor with its gradient and momentum buffer. Rank 1 entries
/// are stored as 1 x n.
template <typename S>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  Mat<S> value;
  Mat<S> grad;
  Mat<S> velocity;

  std::size_t count() const noexcept { return static_cast<std::size_t>(value.size()); }
};

/// Named parameter registry. Entries have stable addresses for the lifetime
/// of the registry; names are unique.
template <typename S>
class Parameters {
 public:
  Parameters() = default;
  Parameters(const Parameters&) = delete;
  Parameters& operator=(const Parameters&) = delete;
  Parameters(Parameters&&) noexcept = default;
  Parameters& operator=(Parameters&&) noexcept = default;

  Param<S>& add(const std::string& name, std::vector<std::size_t> shape) {
    if (index_.contains(name)) throw ParameterError("Parameters: duplicate name '" + name + "'");
    if (shape.empty() || shape.size() > 2) throw ShapeError("Parameters: rank must be 1 or 2 for '" + name + "'");
    const auto r = static_cast<Eigen::Index>(shape.size() == 2 ? shape[0] : 1);
    const auto c = static_cast<Eigen::Index>(shape.back());
    auto p = std::make_unique<Param<S>>();
    p->name = name;
    p->shape = std::move(shape);
    p->value = Mat<S>::Zero(r, c);
    p->grad = Mat<S>::Zero(r, c);
    p->velocity = Mat<S>::Zero(r, c);
    index_[name] = entries_.size();
    entries_.push_back(std::move(p));
    return *entries_.back();
  }

  Param<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("Parameters: no entry named '" + name + "'");
    return *entries_[it->second];
  }
  const Param<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("Parameters: no entry named '" + name + "'");
    return *entries_[it->second];
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const noexcept { return entries_.size(); }
  Param<S>& operator[](std::size_t i) { return *entries_[i]; }
  const Param<S>& operator[](std::size_t i) const { return *entries_[i]; }

  /// Names in sorted order.
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(index_.size());
    for (const auto& [name, _] : index_) out.push_back(name);
    return out;
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p->count();
    return n;
  }

  void zero_grad() {
    for (auto& p : entries_) p->grad.setZero();
  }

  bool grads_finite() const {
    for (const auto& p : entries_)
      if (!p->grad.allFinite()) return false;
    return true;
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& p : entries_) sq += static_cast<double>(p->grad.squaredNorm());
    return std::sqrt(sq);
  }

  /// Rescales all gradients so their joint L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    const double n = grad_norm();
    if (n > max_norm) {
      const S f = static_cast<S>(max_norm / n);
      for (auto& p : entries_) p->grad *= f;
    }
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param<S>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// uniform(-1/√fan_in, 1/√fan_in)
template <typename S>
void init_uniform_fan_in(Param<S>& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
Mat<S> to_mat(const Matrix& m) {
  Mat<S> out(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<S>(m(i, j));
  return out;
}

}  // namespace stsmixer::nn
