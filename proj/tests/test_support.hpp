#pragma once

#include <cmath>
#include <cstdint>

#include "pegp/data.hpp"
#include "pegp/rng.hpp"

namespace pegp::testing {

// Smooth synthetic (rho, v) pairs on [0, 600] x [0, 300].
inline ObservationSet smooth_observations(int n, std::uint64_t seed, const FundamentalDiagram& fd = {}) {
  CounterRng rng(seed, 7);
  ObservationSet obs;
  for (int i = 0; i < n; ++i) {
    const double x = 600.0 * rng.uniform();
    const double t = 300.0 * rng.uniform();
    const double rho = 0.05 + 0.02 * std::sin(x / 90.0 - t / 40.0) + 0.004 * rng.normal();
    const double v = fd.speed(rho) + 0.3 * rng.normal();
    obs.entries.push_back({x, t, Output::density, rho});
    obs.entries.push_back({x, t, Output::speed, v});
  }
  obs.sort();
  return obs;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace pegp::testing
