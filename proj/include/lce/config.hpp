#pragma once

// Flat key=value run configuration with section-prefixed keys
// (e.g. "sr.channels=144"), a known-key whitelist, and an FNV-1a digest
// so checkpoints can pin the configuration they were trained under.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "lce/core.hpp"

namespace lce {

class Config {
 public:
  Config() = default;

  // "# comment" and blank lines allowed; everything else must be key=value
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key=value, got '" + t + "'");
      c.kv_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  std::string require_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return parse_int(key, it->second);
  }
  double get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return parse_double(key, it->second);
  }
  bool get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected bool, got '" + v + "'");
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t pos = 0;
      const std::uint64_t v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected unsigned integer, got '" +
                        it->second + "'");
    }
  }

  // every key must be on the whitelist; typos die loudly
  void check_known(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : kv_)
      if (!allowed.count(k))
        throw ConfigError("unknown config key '" + k + "'");
  }

  // canonical text: sorted keys, one per line (std::map is already ordered)
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : kv_) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    }
    return out;
  }

  std::uint64_t digest() const { return fnv1a(canonical()); }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write config file " + path);
    f << canonical();
    if (!f) throw IoError("failed writing config file " + path);
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  static std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      const std::int64_t r = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return r;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
  }
  static double parse_double(const std::string& key, const std::string& v) {
    try {
      size_t pos = 0;
      const double r = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return r;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace lce
