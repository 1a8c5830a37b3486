#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "swtr/config.hpp"
#include "swtr/error.hpp"

namespace swtr {

enum class Modality { kMR, kCT };

inline std::string modality_name(Modality m) { return m == Modality::kMR ? "MR" : "CT"; }
inline Modality parse_modality(const std::string& s) {
  if (s == "MR") return Modality::kMR;
  if (s == "CT") return Modality::kCT;
  fail(ErrorCode::kFormat, "unknown modality '" + s + "'");
}

struct Spacing {
  double x = 1.0, y = 1.0, z = 1.0;  // mm
  double voxel_volume() const { return x * y * z; }
  bool operator==(const Spacing&) const = default;
};

struct Dims {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::size_t count() const { return nx * ny * nz; }
  bool operator==(const Dims&) const = default;
};

// Dense 3D grid, x fastest: index = (z * ny + y) * nx + x. One axial slice
// (fixed z) is a contiguous ny x nx image.
template <typename V>
struct Grid3 {
  Dims dims;
  Spacing spacing;
  std::vector<V> data;

  Grid3() = default;
  Grid3(Dims d, Spacing s, V fill = V{}) : dims(d), spacing(s), data(d.count(), fill) {}

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (z * dims.ny + y) * dims.nx + x; }
  V& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  const V& at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < static_cast<std::int64_t>(dims.nx) &&
           y < static_cast<std::int64_t>(dims.ny) && z < static_cast<std::int64_t>(dims.nz);
  }
  std::size_t slice_size() const { return dims.nx * dims.ny; }
};

struct VolumeImage : Grid3<float> {
  Modality modality = Modality::kMR;

  VolumeImage() = default;
  VolumeImage(Dims d, Spacing s, Modality m, float fill = 0.0f) : Grid3<float>(d, s, fill), modality(m) {}
};

namespace label {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kLiver = 1;
inline constexpr std::uint8_t kLesion = 2;
}  // namespace label

// Integer-labeled mask: 0 background, 1 liver, 2 lesion. Also used for binary masks (0/1).
struct VoxelMask : Grid3<std::uint8_t> {
  VoxelMask() = default;
  VoxelMask(Dims d, Spacing s, std::uint8_t fill = 0) : Grid3<std::uint8_t>(d, s, fill) {}

  void validate_labels() const {
    for (auto v : data)
      if (v > label::kLesion) fail(ErrorCode::kFormat, "mask label " + std::to_string(v) + " outside {0,1,2}");
  }
};

// Liver binary (labels 1 or 2) and lesion binary (label 2).
inline VoxelMask liver_region(const VoxelMask& m) {
  VoxelMask out(m.dims, m.spacing);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = m.data[i] >= label::kLiver ? 1 : 0;
  return out;
}
inline VoxelMask lesion_region(const VoxelMask& m) {
  VoxelMask out(m.dims, m.spacing);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = m.data[i] == label::kLesion ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Raw volume files: a short text header, then little-endian voxels.
//
//   SWTRVOL 1
//   dims <nx> <ny> <nz>
//   spacing <sx> <sy> <sz>
//   modality <MR|CT|none>
//   dtype <f32|u8>
//   end
//   <payload>

namespace detail {

template <typename V>
void write_le(std::ostream& os, const std::vector<V>& data) {
  if constexpr (std::endian::native == std::endian::little || sizeof(V) == 1) {
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(V)));
  } else {
    std::vector<char> buf(data.size() * sizeof(V));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const char* p = reinterpret_cast<const char*>(&data[i]);
      std::reverse_copy(p, p + sizeof(V), buf.data() + i * sizeof(V));
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

template <typename V>
void from_le_bytes(const char* src, std::size_t n, std::vector<V>& out) {
  out.resize(n);
  if constexpr (std::endian::native == std::endian::little || sizeof(V) == 1) {
    std::memcpy(out.data(), src, n * sizeof(V));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      char* p = reinterpret_cast<char*>(&out[i]);
      std::reverse_copy(src + i * sizeof(V), src + (i + 1) * sizeof(V), p);
    }
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

struct RawHeader {
  Dims dims;
  Spacing spacing;
  std::string modality;
  std::string dtype;
  std::size_t payload_offset = 0;
};

inline std::string format_raw_header(const Dims& d, const Spacing& s, const std::string& modality,
                                     const std::string& dtype) {
  std::ostringstream os;
  os << "SWTRVOL 1\n"
     << "dims " << d.nx << ' ' << d.ny << ' ' << d.nz << '\n'
     << "spacing " << kv::format(s.x) << ' ' << kv::format(s.y) << ' ' << kv::format(s.z) << '\n'
     << "modality " << modality << '\n'
     << "dtype " << dtype << '\n'
     << "end\n";
  return os.str();
}

inline RawHeader parse_raw_header(const std::string& bytes, const std::string& path) {
  RawHeader h;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos || nl - pos > 256) fail(ErrorCode::kFormat, path + ": malformed volume header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "SWTRVOL 1") fail(ErrorCode::kFormat, path + ": not a SWTRVOL v1 file");
  bool have_dims = false, have_spacing = false, have_dtype = false;
  for (;;) {
    std::istringstream ls(next_line());
    std::string key;
    ls >> key;
    if (key == "end") break;
    if (key == "dims") have_dims = static_cast<bool>(ls >> h.dims.nx >> h.dims.ny >> h.dims.nz);
    else if (key == "spacing") have_spacing = static_cast<bool>(ls >> h.spacing.x >> h.spacing.y >> h.spacing.z);
    else if (key == "modality") ls >> h.modality;
    else if (key == "dtype") have_dtype = static_cast<bool>(ls >> h.dtype);
    else fail(ErrorCode::kFormat, path + ": unknown header field '" + key + "'");
  }
  if (!have_dims || !have_spacing || !have_dtype) fail(ErrorCode::kFormat, path + ": incomplete volume header");
  if (!(h.spacing.x > 0 && h.spacing.y > 0 && h.spacing.z > 0))
    fail(ErrorCode::kFormat, path + ": spacing must be strictly positive");
  h.payload_offset = pos;
  return h;
}

}  // namespace detail

inline std::string encode_volume(const VolumeImage& v) {
  std::ostringstream os(std::ios::binary);
  os << detail::format_raw_header(v.dims, v.spacing, modality_name(v.modality), "f32");
  detail::write_le(os, v.data);
  return os.str();
}

inline std::string encode_mask(const VoxelMask& m) {
  std::ostringstream os(std::ios::binary);
  os << detail::format_raw_header(m.dims, m.spacing, "none", "u8");
  detail::write_le(os, m.data);
  return os.str();
}

inline void write_volume(const std::string& path, const VolumeImage& v) { detail::write_file(path, encode_volume(v)); }
inline void write_mask(const std::string& path, const VoxelMask& m) { detail::write_file(path, encode_mask(m)); }

inline VolumeImage read_volume(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  const auto h = detail::parse_raw_header(bytes, path);
  if (h.dtype != "f32") fail(ErrorCode::kFormat, path + ": expected dtype f32, got '" + h.dtype + "'");
  const std::size_t need = h.dims.count() * sizeof(float);
  if (bytes.size() - h.payload_offset != need)
    fail(ErrorCode::kLength, path + ": payload has " + std::to_string(bytes.size() - h.payload_offset) +
                                 " bytes, header implies " + std::to_string(need));
  VolumeImage v(h.dims, h.spacing, parse_modality(h.modality));
  detail::from_le_bytes(bytes.data() + h.payload_offset, h.dims.count(), v.data);
  return v;
}

inline VoxelMask read_mask(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  const auto h = detail::parse_raw_header(bytes, path);
  if (h.dtype != "u8") fail(ErrorCode::kFormat, path + ": expected dtype u8, got '" + h.dtype + "'");
  if (bytes.size() - h.payload_offset != h.dims.count())
    fail(ErrorCode::kLength, path + ": payload length does not match dims");
  VoxelMask m(h.dims, h.spacing);
  detail::from_le_bytes(bytes.data() + h.payload_offset, h.dims.count(), m.data);
  m.validate_labels();
  return m;
}

// FNV-1a 64-bit, used for file and dataset checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace swtr
