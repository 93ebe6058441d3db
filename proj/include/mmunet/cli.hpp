#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmunet {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Runs one `mmu` command. `args` excludes the program name. Progress and
/// errors go to `log`; results are files under the command's --out directory.
int run_cli(const std::vector<std::string>& args, std::ostream& log);

}  // namespace mmunet
