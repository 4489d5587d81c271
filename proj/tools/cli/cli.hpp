#pragma once

namespace irtnet::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Parses argv, runs one subcommand and maps failures onto the exit codes
/// above. Usage text and errors go to stderr; results to stdout or files.
int run(int argc, char** argv);

}  // namespace irtnet::cli
