#include "swarmplan/log.hpp"

#include <cstdlib>
#include <cstring>

namespace swarmplan {

LogLevel log_level() {
  static const LogLevel lvl = [] {
    const char* env = std::getenv("SWARMPLAN_LOG");
    if (env == nullptr) return LogLevel::error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    if (std::strcmp(env, "info") == 0) return LogLevel::info;
    return LogLevel::error;
  }();
  return lvl;
}

bool log_enabled(LogLevel lvl) { return static_cast<int>(lvl) <= static_cast<int>(log_level()); }

void log_msg(LogLevel lvl, const std::string& msg) {
  if (!log_enabled(lvl)) return;
  const char* tag = lvl == LogLevel::error ? "error" : (lvl == LogLevel::info ? "info" : "debug");
  std::fprintf(stderr, "[swarmplan:%s] %s\n", tag, msg.c_str());
}

}  // namespace swarmplan
