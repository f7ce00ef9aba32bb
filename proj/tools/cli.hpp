#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "synlik/error.hpp"

namespace synlik::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitSampler = 3;

int exit_code(ErrorKind kind);

enum class Band { Pass, Warn, Fail };

std::string_view to_string(Band b);

// PASS below 0.5, WARN below 0.7, FAIL otherwise; a missing k-hat (no tail
// variance) passes.
Band khat_band(std::optional<double> k_hat);
Band rhat_band(double rhat);

// Reads <dir>/diagnostics.json and writes the human-readable report.
// Throws MissingBundle when the bundle is absent. Returns true when nothing
// failed.
bool diagnose(const std::string& dir, std::ostream& out);

// Full command line entry point: args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace synlik::cli
