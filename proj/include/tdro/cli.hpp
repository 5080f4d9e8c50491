#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tdro::cli {

/// Exit codes of the `tdro` binary.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;

/// Runs one subcommand (generate | cluster | train | evaluate | report).
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tdro::cli
