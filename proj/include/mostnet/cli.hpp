#pragma once

// Run configuration and the `mostnet` command-line entry point.

#include "mostnet/model.hpp"
#include "mostnet/synthdata.hpp"
#include "mostnet/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace mostnet::cli {

enum class Profile { Desk, Paper };
Profile profile_from_string(const std::string& name);

struct EvalSection {
  std::string split = "test";
  int warmup = 0;  // unused steps before timing in `infer`

  nlohmann::json to_json() const;
};

/// Every section of one JSON config file. Unknown keys are rejected.
struct RunConfig {
  synth::DatasetPlan data;  // "data" (seed, clips_per_split), "scene", "degradation"
  ModelConfig model;
  training::TrainConfig train;
  EvalSection eval;

  static RunConfig for_profile(Profile profile);
  /// Applies the sections present in `j` on top of `base`.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  static RunConfig load(const std::filesystem::path& path, RunConfig base);
  nlohmann::json to_json() const;
  void validate() const;
};

enum ExitCode : int { kSuccess = 0, kValidationError = 2, kRuntimeFailure = 3 };

/// Parses arguments and runs one subcommand; returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace mostnet::cli
