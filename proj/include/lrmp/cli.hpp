#pragma once

#include "lrmp/experiments.hpp"

#include <ostream>
#include <string>

namespace lrmp {

/// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Parse a JSON experiment file. Unknown keys and type mismatches throw ConfigError naming the key;
/// syntax errors name the line.
ExperimentConfig parse_config_json(const std::string& text);

/// Entry point shared by the executable and the tests. Commands: run, example, validate, slope.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lrmp
