#pragma once

#include <utility>

namespace pegp {

// Greenshields: V(rho) = v_f (1 - rho / rho_jam).
struct FundamentalDiagram {
  double v_f = 30.0;      // m/s
  double rho_jam = 0.12;  // veh/m

  [[nodiscard]] double speed(double rho) const noexcept { return v_f * (1.0 - rho / rho_jam); }
  [[nodiscard]] double dspeed(double) const noexcept { return -v_f / rho_jam; }
  [[nodiscard]] double flow(double rho) const noexcept { return rho * speed(rho); }
  [[nodiscard]] double dflow(double rho) const noexcept { return v_f * (1.0 - 2.0 * rho / rho_jam); }
  [[nodiscard]] double critical_density() const noexcept { return 0.5 * rho_jam; }
  void validate() const;
};

enum class PressureKind { half_square, power };

// Pressure term of the first invariant, w1 = v + P(rho).
//   half_square: P = (r^2)/2
//   power:       P = gamma/(gamma-1) r^(gamma-1), so P'(rho) = p'(rho)/rho for p = rho^gamma
// with r = rho / rho_ref.  rho_ref = 1 gives the unscaled laws.
struct PressureLaw {
  PressureKind kind = PressureKind::half_square;
  double gamma = 2.0;
  double rho_ref = 1.0;  // veh/m

  [[nodiscard]] double value(double rho) const;
  [[nodiscard]] double deriv(double rho) const;
  // Inverse of value() on [0, inf); negative arguments clamp to rho = 0.
  [[nodiscard]] double inverse(double p) const;
  void validate() const;
};

struct EquilibriumConstants {
  double rho0 = 0.0;
  double v0 = 0.0;
  double lambda1_0 = 0.0;
  double lambda2_0 = 0.0;
  double alpha = 0.0;
  double beta = 1.0;
  double tau = 1.0;
  double lambda0_lwr = 0.0;
};

[[nodiscard]] EquilibriumConstants equilibrium_constants(double rho0, const FundamentalDiagram& fd,
                                                         const PressureLaw& pl, double tau);

// Same, from raw V(rho0), V'(rho0) values instead of a Greenshields diagram.
[[nodiscard]] EquilibriumConstants equilibrium_constants(double rho0, double v_eq, double dv_eq,
                                                         const PressureLaw& pl, double tau);

[[nodiscard]] std::pair<double, double> map_invariants(double rho, double v, const PressureLaw& pl);
[[nodiscard]] std::pair<double, double> invert_invariants(double w1, double w2, const PressureLaw& pl);

}  // namespace pegp
