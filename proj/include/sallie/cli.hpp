#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "sallie/error.hpp"

namespace sallie::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitPath = 3;
inline constexpr int kExitParse = 4;
inline constexpr int kExitData = 5;
inline constexpr int kExitNumeric = 6;
inline constexpr int kExitInfeasible = 7;

int exit_code_for(ErrorCode code);

/// Runs one command line (without the program name). Results go to `out` unless an --out
/// path is given; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sallie::cli
