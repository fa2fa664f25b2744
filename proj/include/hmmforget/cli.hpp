#ifndef HMMFORGET_CLI_HPP_
#define HMMFORGET_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace hmmforget::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

/// Entry point for the `hmmforget` tool. `args` excludes the program name.
/// Subcommands: sample, filter, gap, sync-demo, tau, infer.
/// Returns 0 on success, 1 on usage/validation errors, 2 on numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hmmforget::cli

#endif  // HMMFORGET_CLI_HPP_
