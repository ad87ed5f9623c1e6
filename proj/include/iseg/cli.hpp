#pragma once

namespace iseg {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Parses argv, runs one subcommand and maps failures to exit codes. Usage errors
/// print the synopsis to standard error.
int dispatch(int argc, const char* const* argv);

} // namespace iseg
