#include "sslattn/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace sslattn::log {

namespace {

Level initial_level() {
  if (const char* env = std::getenv("SSLATTN_LOG")) {
    const std::string v(env);
    if (v == "debug") return Level::debug;
    if (v == "warn") return Level::warn;
    if (v == "error") return Level::error;
    if (v == "quiet") return Level::quiet;
  }
  return Level::info;
}

std::atomic<Level>& current() {
  static std::atomic<Level> lvl{initial_level()};
  return lvl;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

void set_level(Level lvl) { current().store(lvl); }

Level level() { return current().load(); }

void write(Level lvl, const std::string& message) {
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(sink_mutex());
  std::clog << "[sslattn " << names[static_cast<int>(lvl)] << "] " << message << '\n';
}

}  // namespace sslattn::log
