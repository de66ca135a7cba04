#pragma once

#include <string>
#include <vector>

namespace oats::cli {

// Subcommands: gen-data | train-generator | train | eval | sample | report.
// Each takes --config <json>, optional --seed and --out overrides.
// Exit codes: 0 success, 1 validation error, 2 runtime error.
int run_command(const std::vector<std::string>& args);

}  // namespace oats::cli
