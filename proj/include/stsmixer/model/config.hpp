#pragma once

#include <json.hpp>

#include <set>
#include <string>

#include "stsmixer/graph.hpp"
#include "stsmixer/spectral.hpp"

namespace stsmixer {

enum class Task { classification, segmentation };

inline std::string task_name(Task t) { return t == Task::classification ? "classification" : "segmentation"; }

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "segmentation") return Task::segmentation;
  throw ParameterError("unknown task '" + s + "' (expected classification or segmentation)");
}

/// Architecture and preprocessing knobs.
struct ModelConfig {
  std::size_t blocks = 3;        // L
  std::size_t channels = 128;    // C
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;     // hidden width = ratio x input width
  std::size_t k = 10;            // K-NN neighbours
  std::size_t f_l = 6;
  std::size_t f_h = 10;
  Task task = Task::classification;
  std::size_t num_outputs = 4;   // classes or labels

  // point 4D convolution
  std::size_t anchors = 64;      // N'
  std::size_t temporal_stride = 2;
  std::size_t temporal_radius = 1;
  double spatial_radius = 0.25;
  std::size_t group_size = 32;

  EdgeWeight edge_weight{};

  // ablation hooks
  std::set<Band> disabled_bands;
  bool disable_fm_mlp = false;
  bool disable_fa_attention = false;

  void validate() const {
    if (blocks < 1) throw ParameterError("ModelConfig: blocks must be >= 1");
    if (channels == 0 || heads == 0 || channels % heads != 0) {
      throw ParameterError("ModelConfig: channels " + std::to_string(channels) + " not divisible by heads " +
                           std::to_string(heads));
    }
    if (mlp_ratio < 1) throw ParameterError("ModelConfig: mlp_ratio must be >= 1");
    if (anchors < 2) throw ParameterError("ModelConfig: anchors must be >= 2");
    if (k < 1 || k >= anchors) throw ParameterError("ModelConfig: require 1 <= k < anchors");
    if (!(f_l <= f_h && f_h <= anchors)) throw ParameterError("ModelConfig: require f_l <= f_h <= anchors");
    if (temporal_stride < 1) throw ParameterError("ModelConfig: temporal_stride must be >= 1");
    if (!(spatial_radius > 0.0)) throw ParameterError("ModelConfig: spatial_radius must be positive");
    if (group_size < 1) throw ParameterError("ModelConfig: group_size must be >= 1");
    if (num_outputs < 2) throw ParameterError("ModelConfig: num_outputs must be >= 2");
  }

  BandSpec band_spec() const { return {f_l, f_h, anchors}; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json bands = nlohmann::json::array();
  for (Band b : c.disabled_bands) bands.push_back(std::string(band_name(b)));
  j = nlohmann::json{
      {"blocks", c.blocks},
      {"channels", c.channels},
      {"heads", c.heads},
      {"mlp_ratio", c.mlp_ratio},
      {"k", c.k},
      {"f_l", c.f_l},
      {"f_h", c.f_h},
      {"task", task_name(c.task)},
      {"num_outputs", c.num_outputs},
      {"anchors", c.anchors},
      {"temporal_stride", c.temporal_stride},
      {"temporal_radius", c.temporal_radius},
      {"spatial_radius", c.spatial_radius},
      {"group_size", c.group_size},
      {"edge_weight", c.edge_weight.kind == EdgeWeight::Kind::binary ? "binary" : "gaussian"},
      {"edge_sigma", c.edge_weight.sigma},
      {"disabled_bands", bands},
      {"disable_fm_mlp", c.disable_fm_mlp},
      {"disable_fa_attention", c.disable_fa_attention},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known{"blocks", "channels", "heads", "mlp_ratio", "k", "f_l", "f_h",
                                           "task", "num_outputs", "anchors", "temporal_stride",
                                           "temporal_radius", "spatial_radius", "group_size", "edge_weight",
                                           "edge_sigma", "disabled_bands", "disable_fm_mlp",
                                           "disable_fa_attention"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ParameterError("ModelConfig: unknown key '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("blocks", c.blocks);
  get("channels", c.channels);
  get("heads", c.heads);
  get("mlp_ratio", c.mlp_ratio);
  get("k", c.k);
  get("f_l", c.f_l);
  get("f_h", c.f_h);
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
  get("num_outputs", c.num_outputs);
  get("anchors", c.anchors);
  get("temporal_stride", c.temporal_stride);
  get("temporal_radius", c.temporal_radius);
  get("spatial_radius", c.spatial_radius);
  get("group_size", c.group_size);
  if (j.contains("edge_weight")) {
    const auto kind = j.at("edge_weight").get<std::string>();
    if (kind == "binary") c.edge_weight.kind = EdgeWeight::Kind::binary;
    else if (kind == "gaussian") c.edge_weight.kind = EdgeWeight::Kind::gaussian;
    else throw ParameterError("ModelConfig: edge_weight must be binary or gaussian");
  }
  get("edge_sigma", c.edge_weight.sigma);
  if (j.contains("disabled_bands")) {
    c.disabled_bands.clear();
    for (const auto& b : j.at("disabled_bands")) c.disabled_bands.insert(parse_band(b.get<std::string>()));
  }
  get("disable_fm_mlp", c.disable_fm_mlp);
  get("disable_fa_attention", c.disable_fa_attention);
}

}  // namespace stsmixer
