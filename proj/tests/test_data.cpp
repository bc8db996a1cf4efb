#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pegp/baselines.hpp"
#include "pegp/error.hpp"
#include "pegp/metrics.hpp"
#include "pegp/rng.hpp"
#include "pegp/sim.hpp"

using namespace pegp;

namespace {

SpaceTimeGrid small_grid() { return SpaceTimeGrid::make(0, 600, 0, 300, 10, 5); }

TrajectorySet one_vehicle(double x0, double speed, double t0, double t1, double step) {
  TrajectorySet t;
  for (double s = t0; s <= t1 + 1e-12; s += step) t.samples.push_back({7, s, x0 + speed * (s - t0), speed});
  return t;
}

Field stop_and_go() {
  SimScenario sc;
  sc.grid = small_grid();
  return godunov_lwr(sc);
}

}  // namespace

TEST_CASE("grid geometry and cell lookup") {
  const auto g = small_grid();
  CHECK(g.nx == 60);
  CHECK(g.nt == 60);
  CHECK(g.x_center(0) == 5.0);
  CHECK(g.cell_x(10.0) == 0);  // boundary goes to the lower cell
  CHECK(g.cell_x(10.0001) == 1);
  CHECK(g.cell_x(600.0) == 59);
  CHECK_FALSE(g.cell_x(-1.0).has_value());
  CHECK_THROWS_AS((void)SpaceTimeGrid::make(0, 10, 0, 300, 10, 5), Error);
}

TEST_CASE("aggregation of a single vehicle crossing one cell") {
  // 10 m/s for 5 s over a 50 m x 5 s cell
  const auto g = SpaceTimeGrid::make(0, 100, 0, 10, 50, 5);
  const TrajectorySet t = one_vehicle(0.0, 10.0, 0.0, 4.99, 0.01);
  AggregateStats st;
  const Field f = aggregate_trajectories(t, g, &st);
  CHECK(f.mask(0, 0));
  CHECK(f.v(0, 0) == doctest::Approx(10.0));
  CHECK(f.rho(0, 0) == doctest::Approx(1.0 / 50.0).epsilon(1e-3));
}

TEST_CASE("aggregated speed is the sample mean") {
  const auto g = SpaceTimeGrid::make(0, 100, 0, 10, 50, 5);
  TrajectorySet t;
  t.samples = {{1, 1.0, 10.0, 8.0}, {1, 2.0, 18.0, 8.0}, {2, 1.0, 5.0, 12.0}, {2, 2.0, 17.0, 12.0}};
  const Field f = aggregate_trajectories(t, g);
  CHECK(f.v(0, 0) == doctest::Approx(10.0));
  CHECK_FALSE(f.mask(1, 1));
  CHECK_THROWS_AS((void)aggregate_trajectories(TrajectorySet{}, g), Error);
}

TEST_CASE("aggregation conserves vehicle time") {
  const Field truth = stop_and_go();
  EmitOptions opt;
  opt.n_vehicles = 60;
  const TrajectorySet t = emit_trajectories(truth, 3, opt);
  AggregateStats st;
  const Field f = aggregate_trajectories(t, truth.grid, &st);
  const double binned = f.rho.sum() * truth.grid.dx * truth.grid.dt;
  CHECK(std::abs(binned - st.vehicle_time) <= 1e-9 * st.vehicle_time);
}

TEST_CASE("a dense trajectory swarm reproduces the simulated density") {
  const Field truth = stop_and_go();
  EmitOptions opt;
  opt.n_vehicles = 20000;
  const TrajectorySet t = emit_trajectories(truth, 11, opt);
  const Field f = aggregate_trajectories(t, truth.grid);
  int occupied = 0, close = 0;
  for (int j = 0; j < truth.grid.nt; ++j)
    for (int i = 0; i < truth.grid.nx; ++i) {
      if (!f.mask(i, j)) continue;
      ++occupied;
      if (std::abs(f.rho(i, j) - truth.rho(i, j)) <= 0.1 * truth.rho(i, j)) ++close;
    }
  REQUIRE(occupied > 0);
  CHECK(static_cast<double>(close) >= 0.9 * occupied);
}

TEST_CASE("probe selection keeps round(p n) ids and is deterministic") {
  std::vector<std::int64_t> ids(100);
  for (int k = 0; k < 100; ++k) ids[k] = k;
  CHECK(select_probe_ids(ids, 0.1, 5).size() == 10u);
  CHECK(select_probe_ids(ids, 1.0, 5).size() == 100u);
  CHECK(select_probe_ids(ids, 0.1, 5) == select_probe_ids(ids, 0.1, 5));
  CHECK(select_probe_ids(ids, 0.1, 5) != select_probe_ids(ids, 0.1, 6));
  CHECK_THROWS_AS((void)select_probe_ids(ids, 0.0, 1), Error);
  CHECK_THROWS_AS((void)select_probe_ids(ids, 1.5, 1), Error);
}

TEST_CASE("full penetration observes exactly the occupied cells") {
  const Field truth = stop_and_go();
  EmitOptions opt;
  opt.n_vehicles = 80;
  const TrajectorySet t = emit_trajectories(truth, 2, opt);
  const Field agg = aggregate_trajectories(t, truth.grid);
  const ObservationSet obs = sample_probe(t, truth.grid, 1.0, 9);
  CHECK(obs.size() == 2u * static_cast<std::size_t>(agg.count()));
  const ObservationSet again = sample_probe(t, truth.grid, 1.0, 9);
  REQUIRE(again.size() == obs.size());
  for (std::size_t k = 0; k < obs.size(); ++k) CHECK(again.entries[k].value == obs.entries[k].value);
  for (std::size_t k = 1; k < obs.size(); ++k) {
    const auto& a = obs.entries[k - 1];
    const auto& b = obs.entries[k];
    CHECK(std::tie(a.t, a.x, a.output) <= std::tie(b.t, b.x, b.output));
  }
}

TEST_CASE("loop detectors observe one row per position") {
  const Field truth = stop_and_go();
  const ObservationSet obs = sample_loops(truth, {60, 180, 300, 420});
  CHECK(obs.size() == 4u * 2u * static_cast<std::size_t>(truth.grid.nt));
  CHECK(sample_loops(truth, {}).size() == 0u);
  CHECK_THROWS_AS((void)sample_loops(truth, {700.0}), Error);

  // x = 60 is the boundary between cells 5 and 6: the lower one wins
  std::set<double> xs;
  for (const auto& e : sample_loops(truth, {60.0}).entries) xs.insert(e.x);
  REQUIRE(xs.size() == 1u);
  CHECK(*xs.begin() == doctest::Approx(truth.grid.x_center(5)));
}

TEST_CASE("noise is deterministic in the seed") {
  const Field truth = stop_and_go();
  ObservationSet a = sample_loops(truth, {100.0}), b = a, c = a;
  add_observation_noise(a, 0.001, 0.5, 4);
  add_observation_noise(b, 0.001, 0.5, 4);
  add_observation_noise(c, 0.001, 0.5, 5);
  bool differs = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a.entries[k].value == b.entries[k].value);
    differs |= a.entries[k].value != c.entries[k].value;
  }
  CHECK(differs);
}

TEST_CASE("task scale uses the population standard deviation") {
  const TaskScale s = fit_task_scale({0.0, 2.0});
  CHECK(s.mean == 1.0);
  CHECK(s.scale == 1.0);
  const TaskScale c = fit_task_scale({3.0, 3.0, 3.0});
  CHECK(c.scale == 1.0);
  CHECK(c.clamped);

  CounterRng rng(8, 0);
  std::vector<double> v(1000);
  for (auto& x : v) x = 50.0 * rng.normal() + 7.0;
  const TaskScale r = fit_task_scale(v);
  double worst = 0.0;
  for (double x : v) worst = std::max(worst, std::abs(r.destandardize(r.standardize(x)) - x) / std::abs(x));
  CHECK(worst < 1e-12);
}

TEST_CASE("invariant standardizer maps pairs to (v + P(rho), v)") {
  ObservationSet obs;
  PressureLaw pl;
  pl.rho_ref = 0.0155;
  const double rho[] = {0.02, 0.05, 0.08}, v[] = {25.0, 15.0, 6.0};
  for (int k = 0; k < 3; ++k) {
    obs.entries.push_back({10.0 * k, 1.0, Output::density, rho[k]});
    obs.entries.push_back({10.0 * k, 1.0, Output::speed, v[k]});
  }
  obs.sort();
  const Standardizer s = fit_standardizer(obs, TaskSpace::invariants, pl);
  std::vector<double> w1;
  for (int k = 0; k < 3; ++k) w1.push_back(v[k] + pl.value(rho[k]));
  CHECK(s.task[0].mean == doctest::Approx(fit_task_scale(w1).mean));
  CHECK(s.task[1].mean == doctest::Approx(15.333333333333));
}

TEST_CASE("metric examples") {
  const auto g = SpaceTimeGrid::make(0, 20, 0, 10, 10, 5);
  Field truth = Field::zeros(g), est = Field::zeros(g);
  truth.mask.setConstant(true);
  est.mask.setConstant(true);
  CHECK(mae_rmse(truth, truth).mae_v == 0.0);

  est.v(0, 0) = 1.0;
  est.v(1, 0) = 3.0;
  truth.mask(0, 1) = truth.mask(1, 1) = false;
  const MetricRow r = mae_rmse(truth, est);
  CHECK(r.n == 2);
  CHECK(r.mae_v == doctest::Approx(2.0));
  CHECK(r.rmse_v == doctest::Approx(std::sqrt(5.0)));
  CHECK(r.rmse_v >= r.mae_v);

  const MetricRow kmh = mae_rmse(truth, est, Units{3.6, 1000.0});
  CHECK(kmh.mae_v == doctest::Approx(3.6 * r.mae_v).epsilon(1e-15));

  // estimate mask further restricts the scored set
  est.mask(1, 0) = false;
  CHECK(mae_rmse(truth, est).n == 1);
  CHECK(mae_rmse(truth, est).mae_v == doctest::Approx(1.0));

  est.mask.setConstant(false);
  CHECK_THROWS_AS((void)mae_rmse(truth, est), Error);
  CHECK_THROWS_AS((void)mae_rmse(truth, Field::zeros(small_grid())), Error);
}

TEST_CASE("metrics are invariant to permuting cells") {
  const auto g = SpaceTimeGrid::make(0, 40, 0, 20, 10, 5);
  CounterRng rng(2, 2);
  Field a = Field::zeros(g), b = Field::zeros(g);
  a.mask.setConstant(true);
  b.mask.setConstant(true);
  for (Eigen::Index k = 0; k < a.v.size(); ++k) {
    a.v.data()[k] = rng.normal();
    b.v.data()[k] = rng.normal();
  }
  Field ap = a, bp = b;
  ap.v = a.v.reverse();
  bp.v = b.v.reverse();
  CHECK(mae_rmse(a, b).mae_v == doctest::Approx(mae_rmse(ap, bp).mae_v).epsilon(1e-14));
}

TEST_CASE("ASM on constant and single observations") {
  const auto g = small_grid();
  ObservationSet obs;
  for (int k = 0; k < 20; ++k) {
    obs.entries.push_back({15.0 + 29.0 * k, 3.0 + 14.0 * k, Output::speed, 20.0});
    obs.entries.push_back({15.0 + 29.0 * k, 3.0 + 14.0 * k, Output::density, 0.03});
  }
  obs.sort();
  const Field f = asm_reconstruct(obs, g);
  CHECK((f.v.array() - 20.0).abs().maxCoeff() < 1e-9);
  CHECK((f.rho.array() - 0.03).abs().maxCoeff() < 1e-12);

  ObservationSet one;
  one.entries = {{300.0, 150.0, Output::density, 0.07}, {300.0, 150.0, Output::speed, 12.0}};
  const Field s = asm_reconstruct(one, g);
  CHECK((s.v.array() - 12.0).abs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS((void)asm_reconstruct(ObservationSet{}, g), Error);
}

TEST_CASE("ASM output is bounded by the observations and translation invariant") {
  const Field truth = stop_and_go();
  const ObservationSet obs = sample_cells(truth, 0.1, 3);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& e : obs.entries)
    if (e.output == Output::speed) lo = std::min(lo, e.value), hi = std::max(hi, e.value);
  const Field f = asm_reconstruct(obs, truth.grid);
  CHECK(f.v.minCoeff() >= lo - 1e-9);
  CHECK(f.v.maxCoeff() <= hi + 1e-9);

  ObservationSet shifted = obs;
  for (auto& e : shifted.entries) e.x += 100.0, e.t += 50.0;
  const auto g2 = SpaceTimeGrid::make(100, 700, 50, 350, 10, 5);
  const Field f2 = asm_reconstruct(shifted, g2);
  CHECK((f2.v - f.v).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((f2.rho - f.rho).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rotated SE kernel identities") {
  RotatedSEHyper h{0.7, 0.1, 1.3, 0.4, 0.0};
  CHECK(rotated_se(0.5, 0.2, h) == doctest::Approx(0.7 * std::exp(-0.5 * (0.25 / 1.69 + 0.04 / 0.16))));
  // rotating the displacement and theta together leaves the kernel unchanged
  CounterRng rng(4, 4);
  for (int k = 0; k < 20; ++k) {
    const double dx = rng.normal(), dt = rng.normal(), phi = rng.uniform() * 3.0;
    RotatedSEHyper r = h;
    r.theta = 0.3;
    RotatedSEHyper rr = r;
    rr.theta += phi;
    const double c = std::cos(phi), s = std::sin(phi);
    CHECK(rotated_se(dx, dt, r) == doctest::Approx(rotated_se(c * dx - s * dt, s * dx + c * dt, rr)).epsilon(1e-12));
  }
}

TEST_CASE("rotated GP is equivariant under joint rotation of data and angle") {
  CounterRng rng(5, 5);
  const int n = 25;
  Eigen::MatrixXd x(n, 2), q(6, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x.row(i) << rng.normal(), rng.normal();
    y[i] = std::sin(x(i, 0)) + 0.3 * x(i, 1);
  }
  for (int i = 0; i < 6; ++i) q.row(i) << rng.normal(), rng.normal();
  const RotatedSEHyper h{1.0, 0.05, 1.2, 0.6, 0.4};
  const double phi = 0.9;
  Eigen::Matrix2d rot;
  rot << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  RotatedSEHyper hr = h;
  hr.theta += phi;
  const DenseGP a(x, y, h), b(x * rot.transpose(), y, hr);
  CHECK((a.mean(q) - b.mean(q * rot.transpose())).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::abs(a.log_marginal() - b.log_marginal()) < 1e-8);
}

TEST_CASE("rotated GP marginal likelihood gradient matches finite differences") {
  CounterRng rng(6, 6);
  const int n = 20;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x.row(i) << rng.normal(), rng.normal();
    y[i] = std::cos(x(i, 0) - x(i, 1)) + 0.1 * rng.normal();
  }
  const RotatedSEHyper h{0.8, 0.2, 0.9, 0.7, 0.3};
  const auto g = DenseGP(x, y, h).gradient();
  const auto lml = [&](int k, double e) {
    RotatedSEHyper p = h;
    double* fields[] = {&p.signal_var, &p.noise_var, &p.ell_u, &p.ell_w};
    if (k < 4) *fields[k] *= std::exp(e);
    else p.theta += e;
    return DenseGP(x, y, p).log_marginal();
  };
  for (int k = 0; k < 5; ++k) {
    const double fd = (lml(k, 1e-5) - lml(k, -1e-5)) / 2e-5;
    CAPTURE(k);
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("rotated GP with zero angle matches an axis-aligned GP and interpolates noise-free data") {
  CounterRng rng(7, 7);
  const int n = 15;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x.row(i) << 3.0 * rng.uniform(), 3.0 * rng.uniform();
    y[i] = std::sin(x(i, 0)) * std::cos(x(i, 1));
  }
  const RotatedSEHyper h{1.0, 1e-10, 1.0, 0.8, 0.0};
  const DenseGP gp(x, y, h);
  CHECK((gp.mean(x) - y).cwiseAbs().maxCoeff() < 1e-4);

  // axis-aligned reference by direct solve
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double u = (x(i, 0) - x(j, 0)) / 1.0, w = (x(i, 1) - x(j, 1)) / 0.8;
      k(i, j) = std::exp(-0.5 * (u * u + w * w)) + (i == j ? 1e-10 : 0.0);
    }
  const Eigen::VectorXd alpha = k.llt().solve(y);
  const Eigen::RowVector2d q(1.1, 0.7);
  double ref = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = (q[0] - x(i, 0)), w = (q[1] - x(i, 1)) / 0.8;
    ref += std::exp(-0.5 * (u * u + w * w)) * alpha[i];
  }
  CHECK(gp.mean(q)[0] == doctest::Approx(ref).epsilon(1e-6));
}

TEST_CASE("rotated GP hyperparameter ascent keeps a non-decreasing best") {
  const Field truth = stop_and_go();
  const ObservationSet obs = sample_cells(truth, 0.05, 2);
  RotatedGPConfig cfg;
  cfg.iterations = 25;
  const RotatedGPResult r = rotated_gp_reconstruct(obs, truth.grid, cfg);
  CHECK(r.mean.rho.minCoeff() > -1.0);
  CHECK(r.var_v.minCoeff() >= 0.0);

  CounterRng rng(3, 3);
  Eigen::MatrixXd x(40, 2);
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) {
    x.row(i) << rng.normal(), rng.normal();
    y[i] = std::sin(2.0 * x(i, 0)) + 0.1 * rng.normal();
  }
  std::vector<double> trace;
  const RotatedSEHyper init{0.2, 0.3, 1.0, 1.0, 0.0};
  const RotatedSEHyper best = fit_rotated_se(x, y, init, 30, 0.05, true, &trace);
  REQUIRE(trace.size() >= 2u);
  for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] >= trace[k - 1]);
  CHECK(DenseGP(x, y, best).log_marginal() >= DenseGP(x, y, init).log_marginal());
}
