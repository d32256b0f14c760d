#include "trkp/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace trkp {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("TRKP_LOG");
    if (!env) return LogLevel::info;
    if (!std::strcmp(env, "quiet") || !std::strcmp(env, "0")) return LogLevel::quiet;
    if (!std::strcmp(env, "debug") || !std::strcmp(env, "2")) return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "[trkp] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fprintf(stderr, "[trkp:debug] %s\n", msg.c_str());
}

}  // namespace trkp
