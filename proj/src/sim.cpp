#include "pegp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pegp/error.hpp"
#include "pegp/rng.hpp"

namespace pegp {

namespace {

constexpr std::uint64_t kEmitStream = 0x656d6974ULL;

Eigen::VectorXd fine_initial(const SimScenario& sc) {
  const auto& g = sc.grid;
  const int nf = g.nx * sc.refine;
  const double dxf = g.dx / sc.refine;
  Eigen::VectorXd rho(nf);
  for (int k = 0; k < nf; ++k) rho[k] = sc.initial(g.x_min + (k + 0.5) * dxf, g.x_min);
  return rho;
}

// Average groups of `refine` fine cells into one evaluation cell.
void coarsen_into(const Eigen::VectorXd& fine, int refine, Eigen::MatrixXd& out, int col) {
  for (int i = 0; i < out.rows(); ++i) out(i, col) = fine.segment(i * refine, refine).mean();
}

double wrap(double x, double lo, double hi) {
  const double len = hi - lo;
  double r = std::fmod(x - lo, len);
  if (r < 0.0) r += len;
  return lo + r;
}

struct ArzState {
  Eigen::VectorXd rho, y;  // y = rho * w1
};

}  // namespace

double DensityProfile::operator()(double x, double x_min) const {
  if (kind == Kind::sine) return base + amplitude * std::sin(2.0 * M_PI * (x - x_min) / wavelength);
  std::size_t k = 0;
  while (k < breaks.size() && x >= breaks[k]) ++k;
  return values[k];
}

void SimScenario::validate() const {
  fd.validate();
  pressure.validate();
  if (!(cfl > 0.0) || cfl > 1.0) throw validation_error("cfl must lie in (0, 1]");
  if (refine < 1) throw validation_error("refine must be at least 1");
  if (!(tau > 0.0)) throw validation_error("tau must be positive");
  if (initial.kind == DensityProfile::Kind::plateaus) {
    if (initial.values.size() != initial.breaks.size() + 1)
      throw validation_error("plateau profile needs one more value than breaks");
    for (double v : initial.values)
      if (v < 0.0 || v > fd.rho_jam) throw validation_error("initial density outside [0, rho_jam]");
  } else {
    if (initial.base - std::abs(initial.amplitude) < 0.0 || initial.base + std::abs(initial.amplitude) > fd.rho_jam)
      throw validation_error("initial density outside [0, rho_jam]");
    if (!(initial.wavelength > 0.0)) throw validation_error("wavelength must be positive");
  }
}

double godunov_flux(const FundamentalDiagram& fd, double rho_left, double rho_right) {
  // demand(r) = q(min(r, rho_c)), supply(r) = q(max(r, rho_c))
  const double rc = fd.critical_density();
  const double demand = fd.flow(std::min(rho_left, rc));
  const double supply = fd.flow(std::max(rho_right, rc));
  return std::min(demand, supply);
}

LwrSolver::LwrSolver(const FundamentalDiagram& fd, Eigen::VectorXd rho, double dx, Boundary boundary)
    : fd_(fd), rho_(std::move(rho)), flux_(rho_.size() + 1), dx_(dx), boundary_(boundary) {
  ghost_left_ = rho_[0];
  ghost_right_ = rho_[rho_.size() - 1];
}

void LwrSolver::step(double dt) {
  const auto n = rho_.size();
  for (Eigen::Index k = 1; k < n; ++k) flux_[k] = godunov_flux(fd_, rho_[k - 1], rho_[k]);
  if (boundary_ == Boundary::periodic) {
    flux_[0] = godunov_flux(fd_, rho_[n - 1], rho_[0]);
    flux_[n] = flux_[0];
  } else {
    flux_[0] = godunov_flux(fd_, ghost_left_, rho_[0]);
    flux_[n] = godunov_flux(fd_, rho_[n - 1], ghost_right_);
  }
  const double r = dt / dx_;
  for (Eigen::Index k = 0; k < n; ++k) rho_[k] -= r * (flux_[k + 1] - flux_[k]);
}

int substeps_per_interval(const SimScenario& sc, double max_wave_speed) {
  const double dxf = sc.grid.dx / sc.refine;
  const double limit = sc.cfl * dxf / max_wave_speed;
  if (sc.dt_sim > 0.0) {
    if (sc.dt_sim > limit * (1.0 + 1e-12))
      throw validation_error("CFL violation: dt_sim must not exceed " + std::to_string(limit) + " s");
    return std::max(1, static_cast<int>(std::ceil(sc.grid.dt / sc.dt_sim - 1e-9)));
  }
  return std::max(1, static_cast<int>(std::ceil(sc.grid.dt / limit)));
}

Field godunov_lwr(const SimScenario& sc) {
  sc.validate();
  const auto& g = sc.grid;
  LwrSolver solver(sc.fd, fine_initial(sc), g.dx / sc.refine, sc.boundary);
  const int nsub = substeps_per_interval(sc, sc.fd.v_f);
  const double h = g.dt / nsub;
  Field f = Field::zeros(g);
  f.mask.setConstant(true);
  Eigen::VectorXd acc(solver.density().size());
  for (int j = 0; j < g.nt; ++j) {
    acc.setZero();
    for (int k = 0; k < nsub; ++k) {
      acc += 0.5 * solver.density();
      solver.step(h);
      acc += 0.5 * solver.density();
    }
    acc /= nsub;
    coarsen_into(acc, sc.refine, f.rho, j);
  }
  f.v = f.rho.unaryExpr([&](double r) { return sc.fd.speed(r); });
  return f;
}

Field linear_advection_field(const SimScenario& sc, double lambda0) {
  const auto& g = sc.grid;
  Field f = Field::zeros(g);
  f.mask.setConstant(true);
  for (int j = 0; j < g.nt; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const double xs = wrap(g.x_center(i) - lambda0 * (g.t_center(j) - g.t_min), g.x_min, g.x_max);
      f.rho(i, j) = sc.initial(xs, g.x_min);
      f.v(i, j) = sc.fd.speed(f.rho(i, j));
    }
  return f;
}

Field arz_relax(const SimScenario& sc) {
  sc.validate();
  const auto& g = sc.grid;
  const auto& fd = sc.fd;
  const auto& pl = sc.pressure;
  const double dxf = g.dx / sc.refine;
  ArzState st;
  st.rho = fine_initial(sc);
  const auto n = st.rho.size();
  st.y.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) st.y[k] = st.rho[k] * (fd.speed(st.rho[k]) + pl.value(st.rho[k]));
  const ArzState ghost{Eigen::Vector2d(st.rho[0], st.rho[n - 1]), Eigen::Vector2d(st.y[0], st.y[n - 1])};

  double bound = fd.v_f;
  for (int k = 0; k <= 100; ++k) {
    const double r = fd.rho_jam * k / 100.0;
    bound = std::max(bound, fd.v_f + r * pl.deriv(r));
  }
  const int nsub = substeps_per_interval(sc, bound);
  const double h = g.dt / nsub;

  auto speed_of = [&](double rho, double y) {
    if (rho < 1e-12) return fd.v_f;
    return std::max(y / rho - pl.value(rho), 0.0);
  };
  Eigen::VectorXd f1(n + 1), f2(n + 1), v(n);
  auto interface_flux = [&](double rl, double yl, double rr, double yr, double& o1, double& o2) {
    const double vl = speed_of(rl, yl), vr = speed_of(rr, yr);
    const double al = std::max(std::abs(vl), std::abs(vl - rl * pl.deriv(rl)));
    const double ar = std::max(std::abs(vr), std::abs(vr - rr * pl.deriv(rr)));
    const double a = std::max(al, ar);
    o1 = 0.5 * (rl * vl + rr * vr) - 0.5 * a * (rr - rl);
    o2 = 0.5 * (yl * vl + yr * vr) - 0.5 * a * (yr - yl);
  };

  Field f = Field::zeros(g);
  f.mask.setConstant(true);
  Eigen::VectorXd acc_r(n), acc_v(n);
  for (Eigen::Index k = 0; k < n; ++k) v[k] = speed_of(st.rho[k], st.y[k]);
  for (int j = 0; j < g.nt; ++j) {
    acc_r.setZero();
    acc_v.setZero();
    for (int s = 0; s < nsub; ++s) {
      acc_r += 0.5 * st.rho;
      acc_v += 0.5 * v;
      for (Eigen::Index k = 1; k < n; ++k) interface_flux(st.rho[k - 1], st.y[k - 1], st.rho[k], st.y[k], f1[k], f2[k]);
      if (sc.boundary == Boundary::periodic) {
        interface_flux(st.rho[n - 1], st.y[n - 1], st.rho[0], st.y[0], f1[0], f2[0]);
        f1[n] = f1[0];
        f2[n] = f2[0];
      } else {
        interface_flux(ghost.rho[0], ghost.y[0], st.rho[0], st.y[0], f1[0], f2[0]);
        interface_flux(st.rho[n - 1], st.y[n - 1], ghost.rho[1], ghost.y[1], f1[n], f2[n]);
      }
      const double r = h / dxf;
      for (Eigen::Index k = 0; k < n; ++k) {
        double rho = std::max(st.rho[k] - r * (f1[k + 1] - f1[k]), 0.0);
        const double y = st.y[k] - r * (f2[k + 1] - f2[k]);
        // stiff relaxation toward equilibrium, integrated exactly
        const double veq = std::max(fd.speed(rho), 0.0);
        const double vk = relax_speed(speed_of(rho, y), veq, h, sc.tau);
        st.rho[k] = rho;
        st.y[k] = rho * (vk + pl.value(rho));
        v[k] = vk;
      }
      acc_r += 0.5 * st.rho;
      acc_v += 0.5 * v;
    }
    acc_r /= nsub;
    acc_v /= nsub;
    coarsen_into(acc_r, sc.refine, f.rho, j);
    coarsen_into(acc_v, sc.refine, f.v, j);
  }
  return f;
}

TrajectorySet emit_trajectories(const Field& field, std::uint64_t seed, const EmitOptions& opt) {
  const auto& g = field.grid;
  // Cumulative vehicle count: initial mass along x, then upstream inflow along t.
  std::vector<double> piece;
  piece.reserve(g.nx + g.nt);
  for (int i = 0; i < g.nx; ++i) piece.push_back(std::max(field.rho(i, 0), 0.0) * g.dx);
  for (int j = 0; j < g.nt; ++j) piece.push_back(std::max(field.rho(0, j) * field.v(0, j), 0.0) * g.dt);
  double total = 0.0;
  for (double p : piece) total += p;
  TrajectorySet out;
  if (!(total > 0.0)) return out;
  const int n = opt.n_vehicles > 0 ? opt.n_vehicles : std::max(1, static_cast<int>(std::lround(total)));
  out.weight = total / n;

  auto speed_at = [&](double x, double t) {
    const double fx = std::clamp((x - g.x_min) / g.dx - 0.5, 0.0, g.nx - 1.0);
    const double ft = std::clamp((t - g.t_min) / g.dt - 0.5, 0.0, g.nt - 1.0);
    const int i0 = std::min(static_cast<int>(fx), g.nx - 2);
    const int j0 = std::min(static_cast<int>(ft), g.nt - 2);
    const double a = fx - i0, b = ft - j0;
    return (1 - a) * (1 - b) * field.v(i0, j0) + a * (1 - b) * field.v(i0 + 1, j0) + (1 - a) * b * field.v(i0, j0 + 1) +
           a * b * field.v(i0 + 1, j0 + 1);
  };

  CounterRng rng(seed, kEmitStream);
  const double offset = rng.uniform();
  std::size_t pc = 0;
  double cum = 0.0;
  const double h = opt.step;
  for (int k = 0; k < n; ++k) {
    const double target = (k + offset) / n * total;
    while (pc + 1 < piece.size() && cum + piece[pc] <= target) cum += piece[pc++];
    const double frac = piece[pc] > 0.0 ? std::clamp((target - cum) / piece[pc], 0.0, 1.0) : 0.0;
    double x, t;
    if (pc < static_cast<std::size_t>(g.nx)) {
      x = g.x_min + (static_cast<double>(pc) + frac) * g.dx;
      t = g.t_min;
    } else {
      x = g.x_min;
      t = g.t_min + (static_cast<double>(pc - g.nx) + frac) * g.dt;
    }
    while (x <= g.x_max && t <= g.t_max) {
      const double k1 = speed_at(x, t);
      out.samples.push_back({k, t, x, k1});
      const double k2 = speed_at(x + h * k1, t + h);
      x += 0.5 * h * (k1 + k2);
      t += h;
    }
    // the first sample past the boundary closes the last segment inside the grid
    out.samples.push_back({k, t, x, speed_at(x, t)});
  }
  return out;
}

}  // namespace pegp
