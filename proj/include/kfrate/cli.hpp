#pragma once

#include <iosfwd>

namespace kfrate::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericalFailure = 3;

// Subcommands: simulate, kf, refine, converge, wave-demo, bounds.
// Flags: --config <path>, --seed <int>, --out <dir>, --set key=value.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kfrate::cli
