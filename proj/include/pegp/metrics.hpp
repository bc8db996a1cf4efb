#pragma once

#include <cstdint>
#include <string>

#include "pegp/data.hpp"

namespace pegp {

// Multipliers applied to speeds (from m/s) and densities (from veh/m) before scoring.
struct Units {
  double speed = 1.0;    // 3.6 for km/h
  double density = 1.0;  // 1000 for veh/km
};

struct MetricRow {
  std::string method;
  double p = 0.0;
  std::uint64_t seed = 0;
  double mae_v = 0.0, rmse_v = 0.0, mae_rho = 0.0, rmse_rho = 0.0;
  int n = 0;
  std::string error;  // non-empty when the run failed

  [[nodiscard]] bool ok() const noexcept { return error.empty(); }
};

// Scores over the truth mask intersected with the estimate mask.
[[nodiscard]] MetricRow mae_rmse(const Field& truth, const Field& estimate, const Units& units = {});

}  // namespace pegp
