#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rescbm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one command line (args[0] is the program name). Never throws; failures become
/// exit codes with a message on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rescbm
