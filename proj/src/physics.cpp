#include "pegp/physics.hpp"

#include <algorithm>
#include <cmath>

#include "pegp/error.hpp"

namespace pegp {

void FundamentalDiagram::validate() const {
  if (!(v_f > 0.0) || !(rho_jam > 0.0)) throw validation_error("fundamental diagram needs v_f > 0 and rho_jam > 0");
}

double PressureLaw::value(double rho) const {
  const double r = std::max(rho, 0.0) / rho_ref;
  if (kind == PressureKind::half_square) return 0.5 * r * r;
  return gamma / (gamma - 1.0) * std::pow(r, gamma - 1.0);
}

double PressureLaw::deriv(double rho) const {
  const double r = std::max(rho, 0.0) / rho_ref;
  if (kind == PressureKind::half_square) return r / rho_ref;
  return gamma / rho_ref * std::pow(r, gamma - 2.0);
}

double PressureLaw::inverse(double p) const {
  const double q = std::max(p, 0.0);
  if (kind == PressureKind::half_square) return rho_ref * std::sqrt(2.0 * q);
  return rho_ref * std::pow((gamma - 1.0) / gamma * q, 1.0 / (gamma - 1.0));
}

void PressureLaw::validate() const {
  if (!(rho_ref > 0.0)) throw validation_error("pressure rho_ref must be positive");
  if (kind == PressureKind::power && !(gamma > 1.0)) throw validation_error("power pressure needs gamma > 1");
}

EquilibriumConstants equilibrium_constants(double rho0, double v_eq, double dv_eq, const PressureLaw& pl,
                                           double tau) {
  if (!(rho0 > 0.0)) throw validation_error("degenerate equilibrium");
  if (!(tau > 0.0)) throw validation_error("relaxation time tau must be positive");
  const double dp = pl.deriv(rho0);
  if (dp == 0.0 || !std::isfinite(dp)) throw numerical_error("singular pressure derivative");
  EquilibriumConstants c;
  c.rho0 = rho0;
  c.v0 = v_eq;
  c.lambda2_0 = v_eq;
  c.lambda1_0 = v_eq + rho0 * dp;
  c.alpha = dv_eq / dp;
  c.beta = 1.0 + c.alpha;
  c.tau = tau;
  c.lambda0_lwr = v_eq + rho0 * dv_eq;
  return c;
}

EquilibriumConstants equilibrium_constants(double rho0, const FundamentalDiagram& fd, const PressureLaw& pl,
                                           double tau) {
  if (!(rho0 > 0.0) || !(rho0 < fd.rho_jam)) throw validation_error("degenerate equilibrium");
  return equilibrium_constants(rho0, fd.speed(rho0), fd.dspeed(rho0), pl, tau);
}

std::pair<double, double> map_invariants(double rho, double v, const PressureLaw& pl) {
  return {v + pl.value(rho), v};
}

std::pair<double, double> invert_invariants(double w1, double w2, const PressureLaw& pl) {
  return {pl.inverse(w1 - w2), w2};
}

}  // namespace pegp
