#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "stsmixer/data/pcv_io.hpp"
#include "stsmixer/data/synthetic.hpp"

namespace stsmixer {

// On-disk layout:
//   <root>/manifest.json
//   <root>/<split>/<class_or_scene>/<clip_id>.pcv
// Even clip indices go to "train", odd ones to "test".

struct DatasetClip {
  std::string id;
  std::string group;
  std::string split;
  std::optional<int> label;
  PointCloudVideo video;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<std::string> class_names;
  std::vector<DatasetClip> clips;

  Task task() const { return spec.task; }
  std::size_t num_classes() const { return spec.num_classes; }

  std::vector<const DatasetClip*> split(const std::string& name) const {
    std::vector<const DatasetClip*> out;
    for (const auto& c : clips)
      if (c.split == name) out.push_back(&c);
    return out;
  }
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::string> class_names_for(Task task) {
  const auto& names = task == Task::classification ? kMotionNames : kSegmentationLabelNames;
  return {names.begin(), names.end()};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DatasetError("write failed for '" + path.string() + "'");
}

/// Generates the dataset described by `spec` under `root`.
inline Dataset write_dataset(const std::filesystem::path& root, const DatasetSpec& spec) {
  auto generated = generate_dataset(spec);
  Dataset ds;
  ds.spec = spec;
  ds.class_names = class_names_for(spec.task);
  nlohmann::json clips = nlohmann::json::array();
  for (auto& g : generated) {
    const std::string split = g.train ? "train" : "test";
    const auto rel = std::filesystem::path(split) / g.group / (g.id + ".pcv");
    std::error_code ec;
    std::filesystem::create_directories(root / rel.parent_path(), ec);
    if (ec) throw DatasetError("cannot create '" + (root / rel.parent_path()).string() + "': " + ec.message());
    write_pcv(root / rel, g.video);
    nlohmann::json entry{{"id", g.id}, {"group", g.group}, {"split", split}, {"path", rel.generic_string()}};
    entry["label"] = g.video.clip_label ? nlohmann::json(*g.video.clip_label) : nlohmann::json(nullptr);
    clips.push_back(entry);
    ds.clips.push_back({g.id, g.group, split,
                        g.video.clip_label ? std::optional<int>(*g.video.clip_label) : std::nullopt,
                        std::move(g.video)});
  }
  const nlohmann::json manifest{{"format", "PCV1"},
                                {"task", task_name(spec.task)},
                                {"num_classes", spec.num_classes},
                                {"class_names", ds.class_names},
                                {"spec", spec},
                                {"clips", clips}};
  write_text_file(root / "manifest.json", manifest.dump(2) + "\n");
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw DatasetError("no manifest.json under '" + root.string() + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  try {
    ds.spec = manifest.at("spec").get<DatasetSpec>();
    ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    for (const auto& entry : manifest.at("clips")) {
      DatasetClip c;
      c.id = entry.at("id").get<std::string>();
      c.group = entry.at("group").get<std::string>();
      c.split = entry.at("split").get<std::string>();
      if (!entry.at("label").is_null()) c.label = entry.at("label").get<int>();
      c.video = read_pcv(root / entry.at("path").get<std::string>(), ds.spec.num_classes);
      ds.clips.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("manifest.json: ") + e.what());
  }
  return ds;
}

}  // namespace stsmixer
