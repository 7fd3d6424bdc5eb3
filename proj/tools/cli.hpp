#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "evoqf/error.hpp"

namespace evoqf::cli {

// 0 success, 2 bad arguments, 3 invalid config, 4 data error,
// 5 numerical failure, 1 anything unexpected.
int exit_code(ErrorCode code) noexcept;
std::string_view error_category(ErrorCode code) noexcept;

/// Runs one subcommand. `args` excludes the program name. Errors are
/// written to `err` as a single-line JSON object.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evoqf::cli
