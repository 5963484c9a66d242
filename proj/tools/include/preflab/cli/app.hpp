#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace preflab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitVerifyFailed = 2;
inline constexpr int kExitDivergence = 3;

/// Runs the preflab command line with `args` (args[0] is the program name).
/// Human-readable output goes to `out`, diagnostics to `err`. Returns the
/// process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Relative paths resolve against $PREFLAB_DATA_ROOT when it is set.
std::filesystem::path resolve_data_path(const std::filesystem::path& p);

}  // namespace preflab::cli
