#pragma once

#include <string_view>

namespace bscat {

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

void set_log_level(LogLevel level) noexcept;
LogLevel log_level() noexcept;

void log_warn(std::string_view message);
void log_info(std::string_view message);

}  // namespace bscat
