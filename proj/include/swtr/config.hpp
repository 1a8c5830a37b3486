#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "swtr/error.hpp"

namespace swtr {

// Flat key=value configuration with dotted namespaces, e.g.
//   model.d_model = 96
//   train.lr = 1e-4
// '#' starts a comment. Later assignments override earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::kConfig, origin + ":" + std::to_string(lineno) + ": expected key=value");
      std::string key = trim(line.substr(0, eq));
      if (key.empty()) fail(ErrorCode::kConfig, origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.set(key, trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::kIo, "cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  // "key=value" command-line override.
  void apply_override(const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
      fail(ErrorCode::kConfig, "override '" + assignment + "' is not of the form key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void merge(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }
  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::string& get(const std::string& key) const { return values_.at(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  std::map<std::string, std::string> values_;
};

namespace kv {

inline std::string format(bool v) { return v ? "true" : "false"; }
inline std::string format(const std::string& v) { return v; }
template <typename N>
  requires std::is_arithmetic_v<N>
std::string format(N v) {
  if constexpr (std::is_floating_point_v<N>) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<N>::max_digits10) << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}
template <typename N>
std::string format(const std::vector<N>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format(v[i]);
  return out;
}

inline void parse_into(const std::string& key, const std::string& s, bool& out) {
  if (s == "true" || s == "1") out = true;
  else if (s == "false" || s == "0") out = false;
  else fail(ErrorCode::kConfig, "key '" + key + "': expected true/false, got '" + s + "'");
}
inline void parse_into(const std::string&, const std::string& s, std::string& out) { out = s; }
template <typename N>
  requires std::is_arithmetic_v<N>
void parse_into(const std::string& key, const std::string& s, N& out) {
  const std::string t = KeyValueConfig::trim(s);
  bool ok = false;
  if constexpr (std::is_floating_point_v<N>) {
    try {
      std::size_t used = 0;
      const double d = std::stod(t, &used);
      ok = used == t.size();
      out = static_cast<N>(d);
    } catch (const std::exception&) {
      ok = false;
    }
  } else {
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    ok = ec == std::errc() && p == t.data() + t.size();
  }
  if (!ok) fail(ErrorCode::kConfig, "key '" + key + "': cannot parse '" + s + "' as a number");
}
template <typename N>
void parse_into(const std::string& key, const std::string& s, std::vector<N>& out) {
  out.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    N v{};
    parse_into(key, item, v);
    out.push_back(v);
  }
}

// Visitor writing fields into a KeyValueConfig.
struct Writer {
  KeyValueConfig* cfg;
  std::string prefix;
  template <typename V>
  void operator()(const char* name, const V& v) {
    cfg->set(prefix + name, format(v));
  }
};

// Visitor reading fields present in a KeyValueConfig and recording the keys it consumed.
struct Reader {
  const KeyValueConfig* cfg;
  std::string prefix;
  std::set<std::string>* consumed;
  template <typename V>
  void operator()(const char* name, V& v) {
    const std::string key = prefix + name;
    if (cfg->contains(key)) {
      parse_into(key, cfg->get(key), v);
      if (consumed) consumed->insert(key);
    }
  }
};

}  // namespace kv

// Any struct exposing `template <class V> void visit(V&)` can round-trip
// through a KeyValueConfig under a namespace prefix.
template <typename S>
void write_config(const S& s, KeyValueConfig& cfg, const std::string& prefix) {
  kv::Writer w{&cfg, prefix};
  const_cast<S&>(s).visit(w);
}

template <typename S>
void read_config(S& s, const KeyValueConfig& cfg, const std::string& prefix,
                 std::set<std::string>* consumed = nullptr) {
  kv::Reader r{&cfg, prefix, consumed};
  s.visit(r);
}

// Rejects keys that no registered section consumed.
inline void reject_unknown_keys(const KeyValueConfig& cfg, const std::set<std::string>& consumed) {
  for (const auto& [k, _] : cfg.values())
    if (!consumed.contains(k)) fail(ErrorCode::kConfig, "unknown config key '" + k + "'");
}

}  // namespace swtr
