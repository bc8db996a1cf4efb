#include "pegp/metrics.hpp"

#include <cmath>

#include "pegp/error.hpp"

namespace pegp {

MetricRow mae_rmse(const Field& truth, const Field& estimate, const Units& units) {
  if (!(truth.grid == estimate.grid)) throw validation_error("truth and estimate grids differ");
  const MaskMatrix omega = truth.mask && estimate.mask;
  const auto n = omega.count();
  if (n == 0) throw validation_error("empty valid set");
  double av = 0.0, sv = 0.0, ar = 0.0, sr = 0.0;
  for (Eigen::Index j = 0; j < omega.cols(); ++j)
    for (Eigen::Index i = 0; i < omega.rows(); ++i) {
      if (!omega(i, j)) continue;
      const double ev = units.speed * (estimate.v(i, j) - truth.v(i, j));
      const double er = units.density * (estimate.rho(i, j) - truth.rho(i, j));
      av += std::abs(ev);
      sv += ev * ev;
      ar += std::abs(er);
      sr += er * er;
    }
  const double dn = static_cast<double>(n);
  MetricRow r;
  r.mae_v = av / dn;
  r.rmse_v = std::sqrt(sv / dn);
  r.mae_rho = ar / dn;
  r.rmse_rho = std::sqrt(sr / dn);
  r.n = static_cast<int>(n);
  return r;
}

}  // namespace pegp
