#include "pegp/baselines.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "pegp/error.hpp"
#include "pegp/kernel.hpp"

namespace pegp {

void ASMConfig::validate() const {
  if (!(sigma_x > 0.0) || !(tau_t > 0.0)) throw validation_error("ASM smoothing widths must be positive");
  if (!(c_cong < 0.0 && c_free > 0.0)) throw validation_error("ASM wave speeds need c_cong < 0 < c_free");
  if (!(dv > 0.0)) throw validation_error("ASM transition width must be positive");
  if (!(dx > 0.0) || !(dt > 0.0)) throw validation_error("ASM grid steps must be positive");
}

namespace {

// Normalized exponential-kernel averages along one characteristic direction, computed in
// log space so far-away cells do not underflow.
struct BranchSums {
  std::vector<double> logw;
  double smooth(const std::vector<double>& values, const std::vector<int>& idx) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k : idx) mx = std::max(mx, logw[k]);
    double num = 0.0, den = 0.0;
    for (int k : idx) {
      const double w = std::exp(logw[k] - mx);
      num += w * values[k];
      den += w;
    }
    return num / den;
  }
};

}  // namespace

Field asm_reconstruct(const ObservationSet& obs, const SpaceTimeGrid& grid, const ASMConfig& cfg) {
  cfg.validate();
  if (obs.entries.empty()) throw validation_error("no observations");
  const auto n = obs.entries.size();
  std::vector<double> xs(n), ts(n), vals(n);
  std::array<std::vector<int>, 2> by_output;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& e = obs.entries[k];
    xs[k] = e.x;
    ts[k] = e.t;
    vals[k] = e.value;
    by_output[static_cast<int>(e.output)].push_back(static_cast<int>(k));
  }
  Field f = Field::zeros(grid);
  BranchSums free_b, cong_b;
  free_b.logw.resize(n);
  cong_b.logw.resize(n);
  for (int j = 0; j < grid.nt; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      const double x = grid.x_center(i), t = grid.t_center(j);
      for (std::size_t k = 0; k < n; ++k) {
        const double ddx = xs[k] - x, ddt = ts[k] - t;
        const double base = -std::abs(ddx) / cfg.sigma_x;
        free_b.logw[k] = base - std::abs(ddt - ddx / cfg.c_free) / cfg.tau_t;
        cong_b.logw[k] = base - std::abs(ddt - ddx / cfg.c_cong) / cfg.tau_t;
      }
      // Congested-branch speed drives the blend; without speed data both branches count equally.
      double w_cong = 0.5;
      if (!by_output[1].empty()) {
        const double v_cong = cong_b.smooth(vals, by_output[1]);
        const double v_free = free_b.smooth(vals, by_output[1]);
        w_cong = 0.5 * (1.0 + std::tanh((cfg.v_thresh - v_cong) / cfg.dv));
        f.v(i, j) = w_cong * v_cong + (1.0 - w_cong) * v_free;
      }
      if (!by_output[0].empty())
        f.rho(i, j) = w_cong * cong_b.smooth(vals, by_output[0]) + (1.0 - w_cong) * free_b.smooth(vals, by_output[0]);
    }
  f.mask.setConstant(true);
  if (by_output[0].empty() || by_output[1].empty()) f.mask.setConstant(false);
  return f;
}

void RotatedGPConfig::validate() const {
  if (!(signal_var > 0.0) || !(noise_var > 0.0)) throw validation_error("rotated GP variances must be positive");
  if (!(ell_rot_x > 0.0) || !(ell_rot_t > 0.0)) throw validation_error("rotated GP lengthscales must be positive");
  if (iterations < 0 || max_points < 2) throw validation_error("rotated GP optimizer settings out of range");
}

double rotated_se(double dx, double dt, const RotatedSEHyper& h) noexcept {
  const double c = std::cos(h.theta), s = std::sin(h.theta);
  const double u = (c * dx + s * dt) / h.ell_u, w = (-s * dx + c * dt) / h.ell_w;
  return h.signal_var * std::exp(-0.5 * (u * u + w * w));
}

DenseGP::DenseGP(Eigen::MatrixXd x, Eigen::VectorXd y, const RotatedSEHyper& h)
    : x_(std::move(x)), y_(std::move(y)), h_(h) {
  const auto n = x_.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      k(i, j) = k(j, i) = rotated_se(x_(i, 0) - x_(j, 0), x_(i, 1) - x_(j, 1), h_);
  k.diagonal().array() += h_.noise_var;
  llt_.compute(k);
  double extra = 1e-10 * (h_.signal_var + h_.noise_var);
  for (int tries = 0; llt_.info() != Eigen::Success; ++tries) {
    if (tries > 6) throw numerical_error("rotated GP Cholesky failed after jitter escalation");
    k.diagonal().array() += extra;
    extra *= 100.0;
    llt_.compute(k);
  }
  alpha_ = llt_.solve(y_);
  const Eigen::MatrixXd l = llt_.matrixL();
  lml_ = -0.5 * y_.dot(alpha_) - l.diagonal().array().log().sum() - 0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
}

Eigen::Matrix<double, 5, 1> DenseGP::gradient() const {
  const auto n = x_.rows();
  const Eigen::MatrixXd w = alpha_ * alpha_.transpose() - llt_.solve(Eigen::MatrixXd::Identity(n, n));
  const double c = std::cos(h_.theta), s = std::sin(h_.theta);
  const double iu2 = 1.0 / (h_.ell_u * h_.ell_u), iw2 = 1.0 / (h_.ell_w * h_.ell_w);
  Eigen::Matrix<double, 5, 1> g = Eigen::Matrix<double, 5, 1>::Zero();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double ddx = x_(i, 0) - x_(j, 0), ddt = x_(i, 1) - x_(j, 1);
      const double u = c * ddx + s * ddt, v = -s * ddx + c * ddt;
      const double kf = h_.signal_var * std::exp(-0.5 * (u * u * iu2 + v * v * iw2));
      const double wij = w(i, j);
      g[0] += wij * kf;
      g[2] += wij * kf * u * u * iu2;
      g[3] += wij * kf * v * v * iw2;
      g[4] -= wij * kf * u * v * (iu2 - iw2);
    }
  g[1] = w.trace() * h_.noise_var;
  return 0.5 * g;
}

Eigen::VectorXd DenseGP::mean(const Eigen::MatrixXd& q) const {
  Eigen::VectorXd out(q.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < x_.rows(); ++j) acc += rotated_se(q(i, 0) - x_(j, 0), q(i, 1) - x_(j, 1), h_) * alpha_[j];
    out[i] = acc;
  }
  return out;
}

Eigen::VectorXd DenseGP::variance(const Eigen::MatrixXd& q) const {
  Eigen::MatrixXd kxq(x_.rows(), q.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < x_.rows(); ++j) kxq(j, i) = rotated_se(q(i, 0) - x_(j, 0), q(i, 1) - x_(j, 1), h_);
  const Eigen::MatrixXd v = llt_.matrixL().solve(kxq);
  return (Eigen::VectorXd::Constant(q.rows(), h_.signal_var) - v.colwise().squaredNorm().transpose()).cwiseMax(0.0);
}

RotatedSEHyper fit_rotated_se(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, RotatedSEHyper init, int iterations,
                              double lr, bool train_theta, std::vector<double>* trace) {
  Eigen::Matrix<double, 5, 1> p;
  p << std::log(init.signal_var), std::log(init.noise_var), std::log(init.ell_u), std::log(init.ell_w), init.theta;
  auto hyper_of = [](const Eigen::Matrix<double, 5, 1>& v) {
    return RotatedSEHyper{std::exp(v[0]), std::max(std::exp(v[1]), 1e-6), std::exp(v[2]), std::exp(v[3]), v[4]};
  };
  Eigen::Matrix<double, 5, 1> m1 = Eigen::Matrix<double, 5, 1>::Zero(), m2 = m1;
  RotatedSEHyper best = init;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int it = 0; it <= iterations; ++it) {
    const RotatedSEHyper h = hyper_of(p);
    double val;
    Eigen::Matrix<double, 5, 1> g;
    try {
      const DenseGP gp(x, y, h);
      val = gp.log_marginal();
      g = gp.gradient();
    } catch (const Error&) {
      if (it == 0) throw;
      break;
    }
    if (!std::isfinite(val) || !g.allFinite()) break;
    if (val > best_val) {
      best_val = val;
      best = h;
    }
    if (trace) trace->push_back(best_val);
    if (it == iterations) break;
    if (!train_theta) g[4] = 0.0;
    m1 = 0.9 * m1 + 0.1 * g;
    m2 = 0.999 * m2 + 0.001 * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(0.9, it + 1), c2 = 1.0 - std::pow(0.999, it + 1);
    p.array() += lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
  }
  return best;
}

RotatedGPResult rotated_gp_reconstruct(const ObservationSet& obs, const SpaceTimeGrid& grid,
                                       const RotatedGPConfig& cfg) {
  cfg.validate();
  RotatedGPResult res;
  res.mean = Field::zeros(grid);
  res.mean.mask.setConstant(true);
  const auto cells = static_cast<Eigen::Index>(grid.nx) * grid.nt;
  for (int a = 0; a < 2; ++a) {
    std::vector<double> xs, ts, ys;
    for (const auto& e : obs.entries)
      if (static_cast<int>(e.output) == a) {
        xs.push_back(e.x);
        ts.push_back(e.t);
        ys.push_back(e.value);
      }
    if (ys.size() < 2) throw validation_error("rotated GP needs at least 2 observations per output");
    const TaskScale sx = fit_task_scale(xs), st = fit_task_scale(ts), sy = fit_task_scale(ys);
    const auto n = static_cast<Eigen::Index>(ys.size());
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      x(k, 0) = sx.standardize(xs[k]);
      x(k, 1) = st.standardize(ts[k]);
      y[k] = sy.standardize(ys[k]);
    }
    RotatedSEHyper h{cfg.signal_var, cfg.noise_var, cfg.ell_rot_x / sx.scale, cfg.ell_rot_t / st.scale, 0.0};
    h.theta = cfg.theta ? *cfg.theta : std::atan2(1.0 / st.scale, cfg.c_cong / sx.scale);
    if (cfg.optimize && cfg.iterations > 0) {
      const Eigen::Index m = std::min<Eigen::Index>(n, cfg.max_points);
      Eigen::MatrixXd xsub(m, 2);
      Eigen::VectorXd ysub(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index src = k * n / m;
        xsub.row(k) = x.row(src);
        ysub[k] = y[src];
      }
      h = fit_rotated_se(xsub, ysub, h, cfg.iterations, cfg.learning_rate, cfg.train_theta);
    }
    res.hyper[a] = h;
    const DenseGP gp(x, y, h);
    Eigen::MatrixXd q(cells, 2);
    for (int j = 0; j < grid.nt; ++j)
      for (int i = 0; i < grid.nx; ++i) {
        const auto k = static_cast<Eigen::Index>(j) * grid.nx + i;
        q(k, 0) = sx.standardize(grid.x_center(i));
        q(k, 1) = st.standardize(grid.t_center(j));
      }
    const Eigen::VectorXd mu = gp.mean(q);
    Eigen::MatrixXd& target = a == 0 ? res.mean.rho : res.mean.v;
    for (Eigen::Index k = 0; k < cells; ++k) target(k % grid.nx, k / grid.nx) = sy.destandardize(mu[k]);
    if (cfg.want_variance) {
      const Eigen::VectorXd var = gp.variance(q) * (sy.scale * sy.scale);
      Eigen::MatrixXd& vt = a == 0 ? res.var_rho : res.var_v;
      vt.resize(grid.nx, grid.nt);
      for (Eigen::Index k = 0; k < cells; ++k) vt(k % grid.nx, k / grid.nx) = var[k];
    }
  }
  return res;
}

}  // namespace pegp
