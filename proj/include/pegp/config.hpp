#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pegp/experiment.hpp"

namespace pegp {

struct InputPaths {
  std::string field, trajectories, observations, model, truth, estimate;
};

struct DiagnosticsConfig {
  double v_threshold = 60.0 / 3.6;  // m/s
  int n = 400;
  std::uint64_t seed = 0;
  std::vector<double> penetrations{0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<KernelMode> modes{KernelMode::arz, KernelMode::lwr_bidirectional};
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  InputPaths input;
  SamplingConfig sampling;
  std::vector<std::uint64_t> sampling_seeds{1};
  ModelOptions model;       // `fit`; physics copied from the scenario
  MethodSettings methods;   // `sweep`; the model section's training settings apply to every SVGP method
  SweepConfig sweep;
  DiagnosticsConfig diagnostics;
  Units units;
  std::string output_dir = ".";
};

// Defaults used when a section or key is absent.
[[nodiscard]] ExperimentConfig default_experiment_config();

// Strict parse: unknown keys, wrong types and out-of-range values throw validation errors.
[[nodiscard]] ExperimentConfig parse_experiment_config(const nlohmann::json& j);

[[nodiscard]] std::string truth_model_name(TruthModel m);
[[nodiscard]] std::string sampling_mode_name(SamplingMode m);

}  // namespace pegp
