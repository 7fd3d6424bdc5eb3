#include "evoqf/log.hpp"

#include <atomic>
#include <iostream>

namespace evoqf {

namespace {
std::atomic<LogLevel> g_level{LogLevel::Warn};
}

void set_log_level(LogLevel level) noexcept { g_level.store(level); }
LogLevel log_level() noexcept { return g_level.load(); }

void log_warn(std::string_view message) {
  if (g_level.load() >= LogLevel::Warn) std::cerr << "[evoqf] warning: " << message << '\n';
}

void log_info(std::string_view message) {
  if (g_level.load() >= LogLevel::Info) std::cerr << "[evoqf] " << message << '\n';
}

}  // namespace evoqf
