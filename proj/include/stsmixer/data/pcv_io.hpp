#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stsmixer/data/video.hpp"

namespace stsmixer {

// PCV1 layout, all little-endian:
//   "PCV1" | u32 version (=1) | u32 T | u32 N | u32 flags
//   T*N*3 f32 coords | [T*N u16 point labels] | [u16 clip label]
// flags bit0: point labels present, bit1: clip label present.

inline constexpr std::uint32_t kPcvVersion = 1;
inline constexpr std::uint32_t kPcvPointLabels = 1u << 0;
inline constexpr std::uint32_t kPcvClipLabel = 1u << 1;

class PcvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class PcvMagicError : public PcvError {
 public:
  using PcvError::PcvError;
};
class PcvTruncatedError : public PcvError {
 public:
  using PcvError::PcvError;
};
class PcvVersionError : public PcvError {
 public:
  using PcvError::PcvError;
};
class PcvLabelRangeError : public PcvError {
 public:
  using PcvError::PcvError;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw PcvTruncatedError(std::string("pcv: truncated while reading ") + what + " (need " + std::to_string(n) +
                              " bytes, have " + std::to_string(remaining()) + ")");
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_pcv(const PointCloudVideo& v) {
  const std::size_t count = std::size_t{v.frames} * v.points;
  if (v.coords.size() != count * 3) throw ShapeError("encode_pcv: coords length does not match T*N*3");
  if (!v.coords_finite()) throw ParameterError("encode_pcv: non-finite coordinate");
  if (v.point_labels && v.point_labels->size() != count) {
    throw ShapeError("encode_pcv: point label count does not match T*N");
  }
  std::vector<std::uint8_t> out{'P', 'C', 'V', '1'};
  out.reserve(20 + count * 14 + 2);
  detail::put_u32(out, kPcvVersion);
  detail::put_u32(out, v.frames);
  detail::put_u32(out, v.points);
  detail::put_u32(out, (v.point_labels ? kPcvPointLabels : 0u) | (v.clip_label ? kPcvClipLabel : 0u));
  for (float c : v.coords) detail::put_u32(out, std::bit_cast<std::uint32_t>(c));
  if (v.point_labels)
    for (auto l : *v.point_labels) detail::put_u16(out, l);
  if (v.clip_label) detail::put_u16(out, *v.clip_label);
  return out;
}

/// Parses a PCV1 buffer. When `label_limit` is given, every label must be
/// below it.
inline PointCloudVideo decode_pcv(std::span<const std::uint8_t> bytes,
                                  std::optional<std::uint32_t> label_limit = std::nullopt) {
  detail::ByteReader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "PCV1", 4) != 0) {
    throw PcvMagicError("pcv: bad magic '" + std::string(magic.begin(), magic.end()) + "'");
  }
  const auto version = r.u32("version");
  if (version != kPcvVersion) {
    throw PcvVersionError("pcv: unsupported version " + std::to_string(version));
  }
  const auto frames = r.u32("T");
  const auto points = r.u32("N");
  const auto flags = r.u32("flags");
  if (flags & ~(kPcvPointLabels | kPcvClipLabel)) throw PcvError("pcv: unknown flag bits");
  const std::size_t count = std::size_t{frames} * points;
  if (count * 12 > r.remaining()) {
    throw PcvTruncatedError("pcv: truncated coordinate block (T=" + std::to_string(frames) +
                            ", N=" + std::to_string(points) + ")");
  }
  PointCloudVideo v;
  v.frames = frames;
  v.points = points;
  v.coords.resize(count * 3);
  for (auto& c : v.coords) c = std::bit_cast<float>(r.u32("coords"));
  if (!v.coords_finite()) throw PcvError("pcv: non-finite coordinate");
  auto check = [&](std::uint16_t l) {
    if (label_limit && l >= *label_limit) {
      throw PcvLabelRangeError("pcv: label " + std::to_string(l) + " outside [0, " + std::to_string(*label_limit) +
                               ")");
    }
  };
  if (flags & kPcvPointLabels) {
    std::vector<std::uint16_t> labels(count);
    for (auto& l : labels) check(l = r.u16("point labels"));
    v.point_labels = std::move(labels);
  }
  if (flags & kPcvClipLabel) {
    const auto l = r.u16("clip label");
    check(l);
    v.clip_label = l;
  }
  if (r.remaining() != 0) throw PcvError("pcv: " + std::to_string(r.remaining()) + " trailing bytes");
  return v;
}

inline void write_pcv(const std::filesystem::path& path, const PointCloudVideo& v) {
  const auto bytes = encode_pcv(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("pcv: cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("pcv: write failed for '" + path.string() + "'");
}

inline PointCloudVideo read_pcv(const std::filesystem::path& path,
                                std::optional<std::uint32_t> label_limit = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pcv: cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pcv(bytes, label_limit);
}

}  // namespace stsmixer
