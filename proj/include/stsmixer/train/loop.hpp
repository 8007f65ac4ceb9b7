#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stsmixer/data/dataset.hpp"
#include "stsmixer/model/sts_mixer.hpp"
#include "stsmixer/train/checkpoint.hpp"
#include "stsmixer/train/metrics.hpp"
#include "stsmixer/train/run_config.hpp"

namespace stsmixer {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The requested model cannot consume the given data or checkpoint.
class ConfigMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Model = StsMixer<double>;

struct LabeledClip {
  std::string id;
  PreparedClip clip;
  std::vector<int> targets;  // one entry (classification) or one per token
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> metrics_csv;
  std::size_t threads = 1;
  std::ostream* log = nullptr;
  /// Evaluate on this split each epoch; falls back to "train" when empty.
  std::string val_split = "test";
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  double best_metric = -1.0;
  std::size_t best_epoch = 0;
  Metrics final_val;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,lr,train_loss,val_metric\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.lr) + "," + format_double(r.train_loss) + "," +
           format_double(r.val_metric) + "\n";
  }
  return out;
}

/// Checks that a dataset can feed a model built from `cfg`.
inline void require_matching_dataset(const ModelConfig& cfg, const Dataset& ds) {
  if (ds.task() != cfg.task) {
    throw ConfigMismatchError("dataset task is " + task_name(ds.task()) + " but config task is " + task_name(cfg.task));
  }
  if (ds.num_classes() != cfg.num_outputs) {
    throw ConfigMismatchError("dataset has " + std::to_string(ds.num_classes()) + " classes but config num_outputs is " +
                       std::to_string(cfg.num_outputs));
  }
}

inline LabeledClip label_clip(const DatasetClip& c, const ModelConfig& cfg, std::size_t threads) {
  LabeledClip out{c.id, prepare_clip(c.video, cfg, threads), {}};
  if (cfg.task == Task::classification) {
    if (!out.clip.clip_label) throw DatasetError("clip '" + c.id + "' has no clip label");
    out.targets = {*out.clip.clip_label};
  } else {
    if (out.clip.anchor_labels.empty()) throw DatasetError("clip '" + c.id + "' has no point labels");
    out.targets = out.clip.anchor_labels;
  }
  return out;
}

inline std::vector<LabeledClip> prepare_split(const Dataset& ds, const std::string& split, const ModelConfig& cfg,
                                              std::size_t threads = 1) {
  std::vector<LabeledClip> out;
  for (const DatasetClip* c : ds.split(split)) out.push_back(label_clip(*c, cfg, threads));
  return out;
}

/// Accuracy (classification) or mIoU (segmentation), plus mean loss.
inline Metrics evaluate(const Model& model, const std::vector<LabeledClip>& clips) {
  const auto& cfg = model.config();
  std::vector<int> pred, truth;
  double loss = 0.0;
  StsMixerCache<double> cache;
  for (const auto& c : clips) {
    const nn::Mat<double> logits = model.forward(c.clip, cache);
    loss += cross_entropy(logits, c.targets).loss;
    const auto p = argmax_rows(logits);
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), c.targets.begin(), c.targets.end());
  }
  Metrics m = compute_miou(pred, truth, cfg.num_outputs);
  m.loss = clips.empty() ? 0.0 : loss / static_cast<double>(clips.size());
  return m;
}

inline double headline_metric(const Metrics& m, Task task) {
  return task == Task::classification ? m.accuracy : m.miou;
}

/// One epoch of minibatch SGD over `order`. Returns the mean clip loss.
inline double train_epoch(Model& model, const std::vector<LabeledClip>& clips, const std::vector<std::size_t>& order,
                          const RunConfig& cfg, double lr, std::size_t epoch, std::size_t& steps) {
  auto& params = model.params();
  StsMixerCache<double> cache;
  double total = 0.0;
  for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const double scale = 1.0 / static_cast<double>(end - start);
    params.zero_grad();
    for (std::size_t i = start; i < end; ++i) {
      const auto& c = clips[order[i]];
      const nn::Mat<double> logits = model.forward(c.clip, cache);
      LossResult lr_ = cross_entropy(logits, c.targets);
      if (!std::isfinite(lr_.loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) +
                            " (clip '" + c.id + "')");
      }
      total += lr_.loss;
      model.backward(lr_.grad * scale, cache);
    }
    if (!params.grads_finite()) {
      throw TrainingError("non-finite gradient at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch));
    }
    if (cfg.grad_clip > 0.0) params.clip_grad_norm(cfg.grad_clip);
    nn::sgd_step(params, lr, cfg.momentum);
    ++steps;
  }
  return order.empty() ? 0.0 : total / static_cast<double>(order.size());
}

/// Trains on prepared clips. Deterministic for a fixed cfg.seed.
inline TrainResult train_prepared(Model& model, const RunConfig& cfg, const std::vector<LabeledClip>& train,
                                  const std::vector<LabeledClip>& val, const TrainOptions& opt = {}) {
  cfg.validate();
  if (train.empty()) throw DatasetError("training split is empty");
  TrainResult result;
  Rng shuffle_rng(cfg.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(train.size());
  const auto& eval_set = val.empty() ? train : val;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    const double lr = lr_at(epoch, cfg);
    const double loss = train_epoch(model, train, order, cfg, lr, epoch, result.steps);
    const Metrics m = evaluate(model, eval_set);
    const double metric = headline_metric(m, cfg.task());
    result.history.push_back({epoch, lr, loss, metric});
    result.final_val = m;
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      if (opt.checkpoint) save_checkpoint(*opt.checkpoint, cfg, model.params());
    }
    if (opt.log) {
      *opt.log << "epoch " << epoch << " lr=" << format_double(lr) << " loss=" << format_double(loss)
               << " val=" << format_double(metric) << "\n";
    }
    if (opt.metrics_csv) write_text_file(*opt.metrics_csv, metrics_csv(result.history));
  }
  return result;
}

/// Prepares the dataset splits, builds the model from cfg, and trains it.
inline TrainResult train_loop(const RunConfig& cfg, const Dataset& ds, const TrainOptions& opt = {}) {
  cfg.validate();
  require_matching_dataset(cfg.model, ds);
  const auto train = prepare_split(ds, "train", cfg.model, opt.threads);
  const auto val = prepare_split(ds, opt.val_split, cfg.model, opt.threads);
  Model model(cfg.model, cfg.seed);
  return train_prepared(model, cfg, train, val, opt);
}

}  // namespace stsmixer
