#pragma once

// Command-line front end. Every subcommand accepts --config FILE (TOML, one
// section per subcommand) and --dump-config, which prints the resolved
// options as JSON and exits without running. Precedence: flag, then config
// file, then built-in default.

#include <ostream>

namespace knobgen {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace knobgen
