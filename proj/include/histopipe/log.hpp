#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace histopipe::log {

enum class Level { Quiet = 0, Info = 1, Debug = 2 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::Info};
  return level;
}

inline void set_level(Level level) { threshold() = level; }

/// One line to stderr, flushed; safe from several threads.
inline void write(Level level, std::string_view msg) {
  if (level > threshold().load()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[histopipe] " << msg << std::endl;
}

inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void debug(std::string_view msg) { write(Level::Debug, msg); }

}  // namespace histopipe::log
