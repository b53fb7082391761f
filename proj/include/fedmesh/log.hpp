#pragma once

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string_view>

#include <fmt/format.h>

// Line-oriented key=value logging on stderr. FEDMESH_LOG selects the level:
// error, info (default), debug.
namespace fedmesh {

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("FEDMESH_LOG");
    const std::string_view v = env ? env : "info";
    if (v == "error") return LogLevel::error;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

namespace detail {
inline std::mutex& log_mutex() {
  static std::mutex mu;
  return mu;
}

template <typename... Args>
void emit(LogLevel level, std::string_view tag, fmt::format_string<Args...> f, Args&&... args) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  const auto line = fmt::format(f, std::forward<Args>(args)...);
  std::lock_guard lock(log_mutex());
  std::fprintf(stderr, "level=%.*s %s\n", static_cast<int>(tag.size()), tag.data(), line.c_str());
}
}  // namespace detail

template <typename... Args>
void log_error(fmt::format_string<Args...> f, Args&&... args) {
  detail::emit(LogLevel::error, "error", f, std::forward<Args>(args)...);
}
template <typename... Args>
void log_warn(fmt::format_string<Args...> f, Args&&... args) {
  detail::emit(LogLevel::info, "warn", f, std::forward<Args>(args)...);
}
template <typename... Args>
void log_info(fmt::format_string<Args...> f, Args&&... args) {
  detail::emit(LogLevel::info, "info", f, std::forward<Args>(args)...);
}
template <typename... Args>
void log_debug(fmt::format_string<Args...> f, Args&&... args) {
  detail::emit(LogLevel::debug, "debug", f, std::forward<Args>(args)...);
}

}  // namespace fedmesh
