#pragma once

#include <string>
#include <vector>

namespace kfreg::cli {

/// Runs one tool invocation. args excludes the program name. Exit codes:
/// 0 ok, 2 configuration/usage, 3 data or I/O, 4 numeric failure.
int run(const std::vector<std::string>& args);

}  // namespace kfreg::cli
