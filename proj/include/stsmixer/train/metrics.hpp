#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "stsmixer/nn/tensor.hpp"

namespace stsmixer {

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> per_class_iou;  // NaN for classes absent from prediction and truth
  double miou = 0.0;
  double loss = 0.0;
};

struct LossResult {
  double loss = 0.0;
  nn::Mat<double> grad;
};

/// Mean over rows of -log softmax(logits)[target]; grad = (softmax - onehot) / rows.
template <typename S>
LossResult cross_entropy(const nn::Mat<S>& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(logits.rows()) + " rows but " +
                     std::to_string(targets.size()) + " targets");
  }
  LossResult out;
  out.grad.resize(logits.rows(), logits.cols());
  const double inv_rows = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0 || target >= logits.cols()) {
      throw ParameterError("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                           std::to_string(logits.cols()) + ")");
    }
    double mx = static_cast<double>(logits(r, 0));
    for (Eigen::Index j = 1; j < logits.cols(); ++j) mx = std::max(mx, static_cast<double>(logits(r, j)));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(static_cast<double>(logits(r, j)) - mx);
    const double log_z = mx + std::log(sum);
    out.loss += (log_z - static_cast<double>(logits(r, target))) * inv_rows;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double p = std::exp(static_cast<double>(logits(r, j)) - log_z);
      out.grad(r, j) = (p - (j == target ? 1.0 : 0.0)) * inv_rows;
    }
  }
  return out;
}

/// Index of the largest entry in each row; ties go to the lower index.
template <typename S>
std::vector<int> argmax_rows(const nn::Mat<S>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()), 0);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (logits(r, j) > logits(r, best)) best = j;
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// IoU_c = TP / (TP + FP + FN). Classes absent from both prediction and truth
/// are left out of the mean (their entry is NaN).
inline Metrics compute_miou(std::span<const int> pred, std::span<const int> truth, std::size_t num_labels) {
  if (pred.size() != truth.size()) throw ShapeError("compute_miou: length mismatch");
  std::vector<std::size_t> tp(num_labels, 0), fp(num_labels, 0), fn(num_labels, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = static_cast<std::size_t>(pred[i]);
    const auto t = static_cast<std::size_t>(truth[i]);
    if (p >= num_labels || t >= num_labels) throw ParameterError("compute_miou: label out of range");
    if (p == t) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  Metrics m;
  m.accuracy = accuracy(pred, truth);
  m.per_class_iou.assign(num_labels, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_labels; ++c) {
    const std::size_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    m.per_class_iou[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
    sum += m.per_class_iou[c];
    ++present;
  }
  m.miou = present ? sum / static_cast<double>(present) : 0.0;
  return m;
}

}  // namespace stsmixer
