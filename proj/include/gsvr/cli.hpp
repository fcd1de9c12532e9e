#pragma once

#include <string>
#include <vector>

namespace gsvr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point of the `gsvr` tool. Subcommands: simulate, reconstruct,
/// evaluate, export, convergence. Returns 0 on success, 1 on usage errors and
/// 2 on data errors.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace gsvr
