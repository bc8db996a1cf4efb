#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pegp/baselines.hpp"
#include "pegp/metrics.hpp"
#include "pegp/sim.hpp"
#include "pegp/svgp.hpp"

namespace pegp {

enum class TruthModel { godunov, advection, arz_relax };

struct ScenarioConfig {
  TruthModel model = TruthModel::godunov;
  SimScenario sim;
  std::optional<double> lambda0;  // advection speed, m/s; default: LWR wave speed at the mean initial density
  EmitOptions emit;
  std::uint64_t seed = 0;         // trajectory emission
};

struct TruthData {
  Field field;
  TrajectorySet trajectories;
};

[[nodiscard]] TruthData simulate(const ScenarioConfig& sc);

enum class SamplingMode { probe, loops, cells };

struct SamplingConfig {
  SamplingMode mode = SamplingMode::probe;
  double penetration = 0.2;  // probe: vehicle fraction; cells: cell fraction
  std::vector<double> positions{60.0, 180.0, 300.0, 420.0};
  double noise_rho = 0.0, noise_v = 0.0;  // observation noise sd
};

[[nodiscard]] ObservationSet sample_observations(const TruthData& truth, const SamplingConfig& cfg, double p,
                                                 std::uint64_t seed);

enum class Method { asm_filter, rotated_gp, pegp_lwr, pegp_arz, plain_gp };

[[nodiscard]] std::string method_name(Method m);
[[nodiscard]] Method parse_method(const std::string& name);

struct MethodSettings {
  ASMConfig asm_cfg;
  RotatedGPConfig rgp;
  ModelOptions lwr, arz, plain;
};

// Model options for each method, sharing the scenario's physics.
[[nodiscard]] MethodSettings default_method_settings(const FundamentalDiagram& fd, const PressureLaw& pl, double tau);

[[nodiscard]] Field run_method(Method m, const ObservationSet& obs, const SpaceTimeGrid& grid, const MethodSettings& s,
                               std::uint64_t seed);

struct SweepConfig {
  std::vector<Method> methods;
  std::vector<double> penetrations{0.05, 0.1, 0.2, 0.3, 0.5};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int jobs = 1;
  Units units;
};

struct SweepResult {
  std::vector<MetricRow> rows;   // (method, p, seed) order
  std::vector<MetricRow> means;  // (method, p) order, mean over successful seeds
};

// Every (method, p, seed) cell is independent; failures are recorded and the sweep continues.
[[nodiscard]] SweepResult penetration_sweep(const TruthData& truth, const SamplingConfig& sampling,
                                            const MethodSettings& settings, const SweepConfig& cfg);

}  // namespace pegp
