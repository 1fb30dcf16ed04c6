#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace carbrec {

/// Exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;  // bad flags, config or names
inline constexpr int kExitNoCheckpoints = 3;

/// Runs one command line (without the program name). Human output goes to
/// `out`; failures write a single JSON object to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// FNV-1a 64 of `bytes` as 16 hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace carbrec
