#pragma once

#include <iosfwd>

namespace monet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitMalicious = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

/// Entry point of the `monet` tool. Results go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

} // namespace monet::cli
