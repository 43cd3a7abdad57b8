#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tsn/common.hpp"
#include "tsn/io.hpp"

namespace tsn {

// Flat key-value text with [section] headers. Sections may repeat (the
// benchmark manifests use one [task] section per task).
struct ConfigSection {
  std::string name;
  io::KvMap values;
};

struct SectionedConfig {
  std::vector<ConfigSection> sections;

  const ConfigSection* find(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }

  std::vector<const ConfigSection*> all(const std::string& name) const {
    std::vector<const ConfigSection*> out;
    for (const auto& s : sections)
      if (s.name == name) out.push_back(&s);
    return out;
  }
};

inline SectionedConfig parse_sections(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open config: " + path.string());
  SectionedConfig cfg;
  cfg.sections.push_back({"", {}});
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": unterminated section header");
      cfg.sections.push_back({io::trim(t.substr(1, t.size() - 2)), {}});
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    cfg.sections.back().values[io::trim(t.substr(0, eq))] = io::trim(t.substr(eq + 1));
  }
  return cfg;
}

inline std::string cfg_get(const io::KvMap& kv, const std::string& key,
                           const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

inline double cfg_get_double(const io::KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stod(it->second);
}

inline int cfg_get_int(const io::KvMap& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stoi(it->second);
}

inline int64_t cfg_get_i64(const io::KvMap& kv, const std::string& key, int64_t fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stoll(it->second);
}

inline bool cfg_get_bool(const io::KvMap& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "on") return true;
  if (it->second == "false" || it->second == "0" || it->second == "off") return false;
  throw InvalidInput("bad boolean for " + key + ": " + it->second);
}

}  // namespace tsn
