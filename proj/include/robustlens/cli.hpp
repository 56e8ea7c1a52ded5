#pragma once

#include <ostream>

namespace robustlens {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// Parses argv and runs one subcommand (train, train-adv, eval, attack,
/// gradcam, report). Errors are reported on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace robustlens
