#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace blockunfold::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Level is read once from BLOCKUNFOLD_LOG (debug|info|warn|error|off); default warn.
inline Level& threshold() {
  static Level level = [] {
    const char* env = std::getenv("BLOCKUNFOLD_LOG");
    if (env == nullptr) return Level::Warn;
    const std::string_view v(env);
    if (v == "debug") return Level::Debug;
    if (v == "info") return Level::Info;
    if (v == "error") return Level::Error;
    if (v == "off") return Level::Off;
    return Level::Warn;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (level < threshold()) return;
  static constexpr const char* tags[] = {"debug", "info", "warn", "error"};
  std::cerr << "[blockunfold " << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::Debug, msg); }
inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void warn(std::string_view msg) { write(Level::Warn, msg); }

}  // namespace blockunfold::log
