#pragma once

#include <sstream>
#include <string>

namespace sslattn::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, quiet = 4 };

void set_level(Level level);
Level level();
void write(Level level, const std::string& message);

template <typename... Args>
void info(const Args&... args) {
  if (level() > Level::info) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::info, os.str());
}

template <typename... Args>
void warn(const Args&... args) {
  if (level() > Level::warn) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::warn, os.str());
}

}  // namespace sslattn::log
