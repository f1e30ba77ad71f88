#pragma once

// Command-line front end. Commands: gen-synth, baseline, scan, eval, report.
// Exit codes: 0 ok, 1 internal error, 2 usage/config error, 3 validation failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace aop {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitUsage = 2, kExitValidation = 3 };

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aop
