// Command-line front end. Every command is a pure function of its flags,
// config file, input files and --seed.
//
// Exit codes: 0 success, 1 numeric failure, 2 usage error (bad flags,
// settings, malformed input files).

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace latentlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumeric = 1;
inline constexpr int kExitUsage = 2;

/// args excludes the program name. Results go to `out`, one-line
/// diagnostics to `err`.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace latentlab::cli
