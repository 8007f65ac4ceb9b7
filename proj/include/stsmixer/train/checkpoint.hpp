#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "stsmixer/model/sts_mixer.hpp"
#include "stsmixer/train/run_config.hpp"

namespace stsmixer {

// STSW layout, little-endian:
//   "STSW" | u32 version | u32 len | RunConfig canonical JSON (len bytes)
//   then per parameter, sorted by name:
//   u32 name_len | name | u32 rank | u32 dims[rank] | f32 values[prod(dims)]

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class CkptReader {
 public:
  explicit CkptReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename S>
std::vector<std::uint8_t> encode_checkpoint(const RunConfig& cfg, const nn::Parameters<S>& params) {
  std::vector<std::uint8_t> out{'S', 'T', 'S', 'W'};
  detail::put_u32le(out, kCheckpointVersion);
  const std::string json = canonical_json(cfg);
  detail::put_u32le(out, static_cast<std::uint32_t>(json.size()));
  out.insert(out.end(), json.begin(), json.end());
  for (const auto& name : params.names()) {
    const auto& p = params.at(name);
    detail::put_u32le(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_u32le(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) detail::put_u32le(out, static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < p.value.size(); ++i)
      detail::put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(p.value.data()[i])));
  }
  return out;
}

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const nn::Parameters<S>& params) {
  const auto bytes = encode_checkpoint(cfg, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

struct Checkpoint {
  RunConfig config;
  std::string config_json;
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
  };
  std::vector<Entry> entries;

  /// Builds a model from the stored config and copies the stored values in.
  template <typename S>
  StsMixer<S> instantiate() const {
    StsMixer<S> model(config.model, config.seed);
    load_into(model.params());
    return model;
  }

  /// Names and shapes must match the registry exactly.
  template <typename S>
  void load_into(nn::Parameters<S>& params) const {
    if (entries.size() != params.size()) {
      throw CheckpointError("checkpoint: " + std::to_string(entries.size()) + " tensors but model has " +
                            std::to_string(params.size()));
    }
    for (const auto& e : entries) {
      if (!params.contains(e.name)) throw CheckpointError("checkpoint: model has no tensor '" + e.name + "'");
      auto& p = params.at(e.name);
      if (p.shape != e.shape) throw CheckpointError("checkpoint: shape mismatch for '" + e.name + "'");
      for (std::size_t i = 0; i < e.values.size(); ++i) p.value.data()[i] = static_cast<S>(e.values[i]);
    }
  }
};

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::CkptReader r(bytes);
  if (r.str(4) != "STSW") throw CheckpointError("checkpoint: bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.config_json = r.str(r.u32());
  try {
    ck.config = nlohmann::json::parse(ck.config_json).get<RunConfig>();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad config: ") + e.what());
  }
  while (!r.done()) {
    Checkpoint::Entry e;
    e.name = r.str(r.u32());
    const auto rank = r.u32();
    if (rank == 0 || rank > 2) throw CheckpointError("checkpoint: bad rank for '" + e.name + "'");
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      e.shape.push_back(r.u32());
      count *= e.shape.back();
    }
    e.values.resize(count);
    for (auto& v : e.values) v = std::bit_cast<float>(r.u32());
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Architecture-relevant fields must agree; optimizer settings may differ.
inline void require_compatible(const RunConfig& stored, const RunConfig& expected) {
  if (nlohmann::json(stored.model) != nlohmann::json(expected.model)) {
    throw CheckpointError("checkpoint: model config " + nlohmann::json(stored.model).dump() +
                          " does not match requested " + nlohmann::json(expected.model).dump());
  }
}

}  // namespace stsmixer
