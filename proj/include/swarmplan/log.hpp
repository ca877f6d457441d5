#pragma once

#include <cstdio>
#include <string>

namespace swarmplan {

// Verbosity is read once from the SWARMPLAN_LOG environment variable
// (error | info | debug, default error). Messages go to stderr.
enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level();

bool log_enabled(LogLevel lvl);

void log_msg(LogLevel lvl, const std::string& msg);

#define SWARMPLAN_LOG_INFO(msg)                                        \
  do {                                                                 \
    if (::swarmplan::log_enabled(::swarmplan::LogLevel::info))         \
      ::swarmplan::log_msg(::swarmplan::LogLevel::info, (msg));        \
  } while (0)

#define SWARMPLAN_LOG_DEBUG(msg)                                       \
  do {                                                                 \
    if (::swarmplan::log_enabled(::swarmplan::LogLevel::debug))        \
      ::swarmplan::log_msg(::swarmplan::LogLevel::debug, (msg));       \
  } while (0)

#define SWARMPLAN_LOG_ERROR(msg) ::swarmplan::log_msg(::swarmplan::LogLevel::error, (msg))

}  // namespace swarmplan
