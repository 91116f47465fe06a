#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "error.hpp"
#include "io.hpp"

namespace blockunfold {

/// Flat key=value configuration with [section] headers; keys are stored as "section.key".
/// '#' and ';' start comments; blank lines are ignored.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(std::istream& is, const std::string& origin = "<config>") {
    ConfigFile cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw Error(origin + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static ConfigFile load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("missing or unreadable config file: " + path.string());
    return parse(is, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    return io::parse_double(get(key, ""));
  }

  long get_int(const std::string& key, long fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string v = get(key, "");
    size_t used = 0;
    long out = 0;
    try {
      out = std::stol(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw Error("config key " + key + ": expected an integer, got '" + v + "'");
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string v = get(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("config key " + key + ": expected a boolean, got '" + v + "'");
  }

  /// Keys present in the file that no getter has asked for.
  std::set<std::string> unused() const {
    std::set<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.insert(k);
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace blockunfold
