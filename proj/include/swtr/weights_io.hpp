#pragma once

#include <cstring>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "swtr/model.hpp"
#include "swtr/volume.hpp"

namespace swtr {

// Weight file layout (all integers little-endian):
//   "SWTR" | u32 version | u64 manifest length | manifest (UTF-8 JSON) |
//   tensor payloads (f32) | u64 FNV-1a checksum of the payload region
// The manifest lists {name, dtype, shape, byte_offset, byte_len} per tensor,
// offsets relative to the start of the payload region, plus the model config.
inline constexpr char kWeightMagic[4] = {'S', 'W', 'T', 'R'};
inline constexpr std::uint32_t kWeightVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct WeightFile {
  std::string config;  // key=value text of the model config
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {
template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
template <typename U>
U get_le(const std::string& in, std::size_t pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}
}  // namespace detail

inline std::string encode_weight_file(const WeightFile& wf) {
  nlohmann::json manifest;
  manifest["config"] = wf.config;
  manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& t : wf.tensors) {
    require(numel(t.shape) == t.values.size(), ErrorCode::kDimension, "tensor '" + t.name + "' shape/length mismatch");
    const std::size_t off = payload.size();
    for (float v : t.values) detail::put_le<std::uint32_t>(payload, std::bit_cast<std::uint32_t>(v));
    manifest["tensors"].push_back(
        {{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"byte_offset", off}, {"byte_len", payload.size() - off}});
  }
  const std::string mtext = manifest.dump();
  std::string out(kWeightMagic, 4);
  detail::put_le<std::uint32_t>(out, kWeightVersion);
  detail::put_le<std::uint64_t>(out, mtext.size());
  out += mtext;
  out += payload;
  detail::put_le<std::uint64_t>(out, fnv1a64(payload.data(), payload.size()));
  return out;
}

inline WeightFile decode_weight_file(const std::string& bytes, const std::string& origin = "<memory>") {
  constexpr std::size_t kFixed = 4 + 4 + 8;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0)
    fail(ErrorCode::kFormat, origin + ": bad magic (expected \"SWTR\")");
  if (bytes.size() < kFixed) fail(ErrorCode::kLength, origin + ": truncated header");
  const auto version = detail::get_le<std::uint32_t>(bytes, 4);
  if (version != kWeightVersion)
    fail(ErrorCode::kFormat, origin + ": unsupported format version " + std::to_string(version));
  const auto mlen = detail::get_le<std::uint64_t>(bytes, 8);
  if (mlen > bytes.size() - kFixed) fail(ErrorCode::kLength, origin + ": manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(kFixed, mlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, origin + ": malformed manifest: " + e.what());
  }
  const std::size_t payload_start = kFixed + mlen;
  if (bytes.size() < payload_start + 8)
    fail(ErrorCode::kLength, origin + ": file truncated before checksum");
  const std::size_t payload_len = bytes.size() - payload_start - 8;

  WeightFile wf;
  try {
    wf.config = manifest.at("config").get<std::string>();
    std::size_t expected_off = 0;
    std::set<std::string> names;
    for (const auto& e : manifest.at("tensors")) {
      TensorRecord t;
      t.name = e.at("name").get<std::string>();
      if (!names.insert(t.name).second) fail(ErrorCode::kTensorName, origin + ": duplicate tensor name '" + t.name + "'");
      if (e.at("dtype").get<std::string>() != "f32")
        fail(ErrorCode::kFormat, origin + ": tensor '" + t.name + "' has unsupported dtype");
      t.shape = e.at("shape").get<Shape>();
      const auto off = e.at("byte_offset").get<std::size_t>();
      const auto len = e.at("byte_len").get<std::size_t>();
      if (off != expected_off || len != numel(t.shape) * sizeof(float) || off + len > payload_len)
        fail(ErrorCode::kLength, origin + ": tensor '" + t.name + "' byte range disagrees with manifest/payload");
      expected_off = off + len;
      t.values.resize(numel(t.shape));
      for (std::size_t i = 0; i < t.values.size(); ++i)
        t.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, payload_start + off + 4 * i));
      wf.tensors.push_back(std::move(t));
    }
    if (expected_off != payload_len)
      fail(ErrorCode::kLength, origin + ": payload has " + std::to_string(payload_len) + " bytes, manifest covers " +
                                   std::to_string(expected_off));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, origin + ": malformed manifest entry: " + e.what());
  }
  const auto stored = detail::get_le<std::uint64_t>(bytes, payload_start + payload_len);
  if (stored != fnv1a64(bytes.data() + payload_start, payload_len))
    fail(ErrorCode::kChecksum, origin + ": payload checksum mismatch");
  return wf;
}

inline std::string config_text(const SwtrConfig& cfg) {
  KeyValueConfig kvc;
  write_config(cfg, kvc, "model.");
  return kvc.to_string();
}

inline SwtrConfig config_from_text(const std::string& text) {
  SwtrConfig cfg;
  std::set<std::string> consumed;
  const auto kvc = KeyValueConfig::parse(text, "weights manifest");
  read_config(cfg, kvc, "model.", &consumed);
  reject_unknown_keys(kvc, consumed);
  return cfg;
}

template <typename T>
WeightFile to_weight_file(const SwtrModel<T>& model, std::vector<TensorRecord> extra = {}) {
  WeightFile wf;
  wf.config = config_text(model.config());
  for (const auto& [name, t] : model.parameters().items())
    wf.tensors.push_back({name, t.shape(), std::vector<float>(t.vec().begin(), t.vec().end())});
  for (auto& e : extra) wf.tensors.push_back(std::move(e));
  return wf;
}

template <typename T>
void save_weights(const SwtrModel<T>& model, const std::string& path, std::vector<TensorRecord> extra = {}) {
  detail::write_file(path, encode_weight_file(to_weight_file(model, std::move(extra))));
}

inline WeightFile read_weight_file(const std::string& path) {
  return decode_weight_file(detail::read_file(path), path);
}

// Copies the file's tensors into the model. Names under `reserved_prefix`
// (optimizer state) are ignored; any other mismatch is an error listing the
// missing and unexpected names.
template <typename T>
void assign_weights(SwtrModel<T>& model, const WeightFile& wf, const std::string& reserved_prefix = "optim.") {
  std::vector<std::string> missing, extra;
  for (const auto& [name, _] : model.parameters().items())
    if (!wf.find(name)) missing.push_back(name);
  for (const auto& t : wf.tensors)
    if (t.name.rfind(reserved_prefix, 0) != 0 && !model.parameters().contains(t.name)) extra.push_back(t.name);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "weight names do not match the model:";
    auto list = [&](const char* label, const std::vector<std::string>& v) {
      if (v.empty()) return;
      msg += std::string(" ") + label + " [";
      for (std::size_t i = 0; i < v.size(); ++i) msg += (i ? ", " : "") + v[i];
      msg += "]";
    };
    list("missing", missing);
    list("unexpected", extra);
    fail(ErrorCode::kTensorName, msg);
  }
  for (auto& [name, t] : model.parameters().items()) {
    const TensorRecord* r = wf.find(name);
    if (r->shape != t.shape())
      fail(ErrorCode::kDimension,
           "tensor '" + name + "' has shape " + shape_str(r->shape) + ", model expects " + shape_str(t.shape()));
    Tensor<T> dst = t;
    for (std::size_t i = 0; i < r->values.size(); ++i) dst.data()[i] = static_cast<T>(r->values[i]);
  }
}

template <typename T = float>
SwtrModel<T> load_weights(const std::string& path) {
  const WeightFile wf = read_weight_file(path);
  SwtrModel<T> model(config_from_text(wf.config));
  assign_weights(model, wf);
  return model;
}

template <typename T>
void load_weights_into(SwtrModel<T>& model, const std::string& path) {
  assign_weights(model, read_weight_file(path));
}

}  // namespace swtr
