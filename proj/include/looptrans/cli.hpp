#pragma once

// Command-line front end: train, eval, synth, viz.

#include <iosfwd>
#include <string>
#include <vector>

namespace looptrans::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDataMismatch = 3;
inline constexpr int kExitNumeric = 4;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace looptrans::cli
