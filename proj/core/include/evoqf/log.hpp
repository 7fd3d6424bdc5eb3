#pragma once

#include <string_view>

namespace evoqf {

enum class LogLevel { Silent = 0, Warn = 1, Info = 2 };

void set_log_level(LogLevel level) noexcept;
LogLevel log_level() noexcept;
void log_warn(std::string_view message);
void log_info(std::string_view message);

}  // namespace evoqf
