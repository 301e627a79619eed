// SPDX-License-Identifier: Apache-2.0

#ifndef CTAD_CLI_HPP_
#define CTAD_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace ctad {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the command-line tool; `args` excludes the program name.
/// Subcommands: render, train, eval, infer, gradcheck.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctad

#endif  // CTAD_CLI_HPP_
