#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stsmixer/model/config.hpp"

namespace stsmixer {

/// Optimization recipe plus model config; serialized into checkpoints.
struct RunConfig {
  ModelConfig model;
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  double lr0 = 0.01;
  double decay_factor = 0.1;
  std::vector<std::size_t> decay_epochs{20, 30};
  double momentum = 0.9;
  double grad_clip = 1.0;  // global L2 norm cap per step; 0 disables
  std::uint64_t seed = 0;

  Task task() const { return model.task; }

  void validate() const {
    model.validate();
    if (!(lr0 > 0.0)) throw ParameterError("RunConfig: lr0 must be positive");
    if (batch_size == 0) throw ParameterError("RunConfig: batch_size must be positive");
    for (std::size_t i = 1; i < decay_epochs.size(); ++i)
      if (decay_epochs[i] <= decay_epochs[i - 1]) throw ParameterError("RunConfig: decay_epochs must ascend");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("RunConfig: momentum must be in [0, 1)");
    if (!(grad_clip >= 0.0)) throw ParameterError("RunConfig: grad_clip must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr0", c.lr0},
                     {"decay_factor", c.decay_factor},
                     {"decay_epochs", c.decay_epochs},
                     {"momentum", c.momentum},
                     {"grad_clip", c.grad_clip},
                     {"seed", c.seed},
                     {"task", task_name(c.model.task)}};
}

/// Missing keys keep their defaults; a top-level "task" overrides model.task.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::set<std::string> known{"model", "epochs", "batch_size", "lr0", "decay_factor",
                                           "decay_epochs", "momentum", "grad_clip", "seed", "task"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ParameterError("RunConfig: unknown key '" + key + "'");
  if (j.contains("model")) from_json(j.at("model"), c.model);
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("lr0", c.lr0);
  get("decay_factor", c.decay_factor);
  get("decay_epochs", c.decay_epochs);
  get("momentum", c.momentum);
  get("grad_clip", c.grad_clip);
  get("seed", c.seed);
  if (j.contains("task")) c.model.task = parse_task(j.at("task").get<std::string>());
}

/// Canonical form: compact, keys sorted.
inline std::string canonical_json(const RunConfig& c) { return nlohmann::json(c).dump(); }

/// lr0 · decay_factor^(number of decay epochs <= epoch)
inline double lr_at(std::size_t epoch, const RunConfig& cfg) {
  double lr = cfg.lr0;
  for (std::size_t d : cfg.decay_epochs)
    if (d <= epoch) lr *= cfg.decay_factor;
  return lr;
}

}  // namespace stsmixer
