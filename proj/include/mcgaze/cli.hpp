#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mcgaze/config.hpp"
#include "mcgaze/synthgen.hpp"

namespace mcgaze {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitTrainAbort = 3, kExitData = 4 };

/// Every configuration section resolved from defaults, a JSON file and
/// dotted-key overrides (later sources win).
struct RunConfig {
  ModelConfig model;
  TrainSchedule train;
  InferConfig infer;
  SplitConfig eval;
  SynthConfig synth;
};

/// All dotted keys a config file or override may set.
std::vector<std::string> valid_config_keys();

/// Parses "section.key=value"; the value is read as JSON when possible and as
/// a plain string otherwise.
json parse_override(const std::string& assignment);

/// file_json is merged with the overrides and checked against
/// valid_config_keys(). Choosing model.variant=full switches the model and
/// schedule defaults to the full-scale ones. Throws ConfigError.
RunConfig resolve_config(const json& file_json, const std::vector<std::string>& overrides);

/// Entry point of the command-line tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mcgaze
