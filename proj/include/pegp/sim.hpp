#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pegp/data.hpp"
#include "pegp/physics.hpp"

namespace pegp {

enum class Boundary { periodic, dirichlet };

struct DensityProfile {
  enum class Kind { plateaus, sine };
  Kind kind = Kind::plateaus;
  // plateaus: values[k] on [breaks[k-1], breaks[k]) with breaks ascending, values.size() == breaks.size() + 1
  std::vector<double> breaks{300.0};
  std::vector<double> values{0.035, 0.095};
  // sine: base + amplitude * sin(2 pi (x - x_min) / wavelength)
  double base = 0.055, amplitude = 0.01, wavelength = 600.0;

  [[nodiscard]] double operator()(double x, double x_min) const;
};

struct SimScenario {
  FundamentalDiagram fd;
  PressureLaw pressure;
  SpaceTimeGrid grid;
  DensityProfile initial;
  Boundary boundary = Boundary::periodic;
  double tau = 3.0;     // ARZ relaxation time, s
  double cfl = 0.9;
  int refine = 4;       // simulation cells per evaluation cell
  double dt_sim = 0.0;  // 0 picks the largest CFL-stable step dividing dt
  void validate() const;
};

// Godunov interface flux for the concave Greenshields flux: min(demand(left), supply(right)).
[[nodiscard]] double godunov_flux(const FundamentalDiagram& fd, double rho_left, double rho_right);

// Exact solution of dv/dt = (V - v) / tau over one step at fixed V.
[[nodiscard]] inline double relax_speed(double v, double v_eq, double dt, double tau) {
  return v_eq + (v - v_eq) * std::exp(-dt / tau);
}

// First-order Godunov solver on a uniform 1-D mesh.
class LwrSolver {
 public:
  LwrSolver(const FundamentalDiagram& fd, Eigen::VectorXd rho, double dx, Boundary boundary);
  void step(double dt);
  [[nodiscard]] const Eigen::VectorXd& density() const noexcept { return rho_; }
  [[nodiscard]] double mass() const noexcept { return rho_.sum() * dx_; }
  [[nodiscard]] double stable_dt(double cfl) const noexcept { return cfl * dx_ / fd_.v_f; }

 private:
  FundamentalDiagram fd_;
  Eigen::VectorXd rho_;
  Eigen::VectorXd flux_;
  double dx_;
  Boundary boundary_;
  double ghost_left_, ghost_right_;
};

// Substep count per evaluation interval for a scenario; throws on an unstable explicit dt_sim.
[[nodiscard]] int substeps_per_interval(const SimScenario& sc, double max_wave_speed);

[[nodiscard]] Field godunov_lwr(const SimScenario& sc);
[[nodiscard]] Field linear_advection_field(const SimScenario& sc, double lambda0);
[[nodiscard]] Field arz_relax(const SimScenario& sc);

struct EmitOptions {
  int n_vehicles = 0;  // 0: the expected physical count
  double step = 0.5;   // s
};

// Vehicles enter by systematic sampling of the cumulative count (initial mass, then upstream
// inflow) and are advected with RK2 steps through the bilinear speed field.
[[nodiscard]] TrajectorySet emit_trajectories(const Field& field, std::uint64_t seed, const EmitOptions& opt = {});

}  // namespace pegp
