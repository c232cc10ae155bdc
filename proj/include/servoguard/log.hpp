#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace servoguard::log {

enum class Level { error = 0, info = 1, debug = 2 };

/// Threshold read once from SERVOGUARD_LOG (error|info|debug). Defaults to error.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("SERVOGUARD_LOG");
    if (env == nullptr) return Level::error;
    std::string_view v(env);
    if (v == "debug") return Level::debug;
    if (v == "info") return Level::info;
    return Level::error;
  }();
  return level;
}

inline bool enabled(Level level) { return static_cast<int>(level) <= static_cast<int>(threshold()); }

template <typename... Args>
void write(Level level, const Args&... args) {
  if (!enabled(level)) return;
  static constexpr std::string_view tags[] = {"error", "info", "debug"};
  std::cerr << "[servoguard " << tags[static_cast<int>(level)] << "] ";
  (std::cerr << ... << args);
  std::cerr << '\n';
}

template <typename... Args>
void error(const Args&... args) { write(Level::error, args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, args...); }
template <typename... Args>
void debug(const Args&... args) { write(Level::debug, args...); }

}  // namespace servoguard::log
