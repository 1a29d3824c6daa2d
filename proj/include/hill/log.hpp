#pragma once

#include <atomic>
#include <iostream>
#include <string>

#include "hill/errors.hpp"

namespace hill::log {

enum class Level { Quiet = 0, Warn = 1, Info = 2, Debug = 3 };

inline std::atomic<int>& threshold() {
  static std::atomic<int> t{static_cast<int>(Level::Warn)};
  return t;
}

inline void set_level(Level l) { threshold().store(static_cast<int>(l)); }
inline Level level() { return static_cast<Level>(threshold().load()); }
inline bool enabled(Level l) { return static_cast<int>(l) <= threshold().load(); }

inline Level parse_level(const std::string& s) {
  if (s == "quiet") return Level::Quiet;
  if (s == "warn") return Level::Warn;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  throw ConfigError("unknown log level '" + s + "' (quiet | warn | info | debug)");
}

inline void warn(const std::string& msg) {
  if (enabled(Level::Warn)) std::cerr << "warning: " << msg << "\n";
}

inline void info(const std::string& msg) {
  if (enabled(Level::Info)) std::cerr << msg << "\n";
}

inline void debug(const std::string& msg) {
  if (enabled(Level::Debug)) std::cerr << msg << "\n";
}

}  // namespace hill::log
