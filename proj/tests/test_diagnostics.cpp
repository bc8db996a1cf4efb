#include <doctest.h>

#include <Eigen/QR>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "pegp/config.hpp"
#include "pegp/diagnostics.hpp"
#include "pegp/error.hpp"
#include "pegp/io.hpp"
#include "pegp/plot.hpp"
#include "pegp/rng.hpp"
#include "test_support.hpp"

using namespace pegp;
using pegp::testing::smooth_observations;

namespace {

Eigen::MatrixXd random_matrix(CounterRng& rng, int r, int c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

SVGPState fitted_state(KernelMode mode, double b_res) {
  ModelOptions opt;
  opt.mode = mode;
  opt.inducing = 20;
  opt.pressure.rho_ref = 0.0155;
  const auto obs = smooth_observations(80, 12);
  SVGPState st = initialize_state(obs, opt);
  for (auto& r : st.kernel.residual) r.b_res = b_res;
  set_optimal_variational(st, make_training_data(obs, st));
  return st;
}

std::vector<Point> query_points(int n) {
  std::vector<Point> q;
  for (int k = 0; k < n; ++k) q.push_back({15.0 + 590.0 * k / n, 290.0 * ((k * 37) % n) / n});
  return q;
}

}  // namespace

TEST_CASE("share identities on random vectors") {
  CounterRng rng(1, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd phys = random_matrix(rng, 40, 1), res = random_matrix(rng, 40, 1);
    const Eigen::VectorXd mu = phys + res;
    const Shares s = shares(mu, phys, res);
    CHECK(std::abs(s.s_phys + s.s_res - 1.0) <= 1e-10);
    const double cross = 2.0 * phys.dot(res) / mu.squaredNorm();
    CHECK(std::abs(s.e_phys + s.e_res + cross - 1.0) <= 1e-9);
    CHECK(s.e_phys >= 0.0);
  }
  const Eigen::Vector3d mu(1, 2, 3), perp(2, -1, 0);
  CHECK(shares(mu, mu, Eigen::Vector3d::Zero()).s_phys == doctest::Approx(1.0));
  CHECK(shares(mu, mu, Eigen::Vector3d::Zero()).e_phys == doctest::Approx(1.0));
  CHECK(shares(mu, perp, mu - perp).s_phys == doctest::Approx(0.0));
  CHECK_THROWS_AS((void)shares(Eigen::Vector3d::Zero(), mu, mu), Error);
}

TEST_CASE("joint ratio orders physics-dominant below residual-dominant") {
  CounterRng rng(2, 0);
  const Eigen::MatrixXd big = random_matrix(rng, 30, 2), small = 0.1 * random_matrix(rng, 30, 2);
  CHECK(joint_ratio(big + small, big, small) < 1.0);
  CHECK(joint_ratio(big + small, small, big) > 1.0);
}

TEST_CASE("mean decomposition is additive and matches the predictive mean") {
  for (KernelMode mode : {KernelMode::arz, KernelMode::lwr_bidirectional, KernelMode::lwr_scalar}) {
    CAPTURE(static_cast<int>(mode));
    const SVGPState st = fitted_state(mode, 0.1);
    const auto q = query_points(50);
    const MeanDecomposition d = decompose_mean(st, q);
    const double scale = d.total.cwiseAbs().maxCoeff();
    CHECK((d.total - d.phys - d.res).cwiseAbs().maxCoeff() <= 1e-10 * scale);

    std::vector<Point> sq;
    for (const auto& p : q) sq.push_back(to_standard(st.standardizer, p.x, p.t));
    const auto pred = predict_latent(st, sq);
    for (int a = 0; a < st.outputs(); ++a)
      CHECK((pred.mean.col(a) * st.standardizer.task[a].scale - d.total.col(a)).cwiseAbs().maxCoeff() <= 1e-8 * scale);

    const ShareReport r = share_report(d);
    for (int a = 0; a < st.outputs(); ++a) {
      const Eigen::VectorXd mu = d.total.col(a), ph = d.phys.col(a);
      double dot = 0.0, nn = 0.0;
      for (Eigen::Index k = 0; k < mu.size(); ++k) dot += mu[k] * ph[k], nn += mu[k] * mu[k];
      CHECK(r.per_output[a].s_phys == doctest::Approx(dot / nn).epsilon(1e-12));
    }
  }
}

TEST_CASE("without a residual the physics part carries the whole mean") {
  const SVGPState st = fitted_state(KernelMode::lwr_bidirectional, 0.0);
  const MeanDecomposition d = decompose_mean(st, query_points(30));
  CHECK(d.res.cwiseAbs().maxCoeff() == 0.0);
  CHECK(share_report(d).per_output[0].s_phys == doctest::Approx(1.0));
  CHECK_THROWS_AS((void)decompose_mean(fitted_state(KernelMode::plain_se, 0.1), query_points(5)), Error);
}

TEST_CASE("CKA bounds and invariances") {
  CounterRng rng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd x = random_matrix(rng, 50, 3), y = random_matrix(rng, 50, 2);
    CHECK(cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    const double base = cka(x, y);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    const Eigen::MatrixXd r = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(rng, 3, 3)).householderQ();
    const double c = trial % 2 ? -2.5 : 0.3;
    CHECK(std::abs(cka(c * x * r, y) - base) <= 1e-10);
  }
  Eigen::MatrixXd a(4, 1), b(4, 1);
  a << 1, -1, 1, -1;
  b << 1, 1, -1, -1;
  CHECK(cka(a, b) == doctest::Approx(0.0));
  CHECK_THROWS_AS((void)cka(Eigen::MatrixXd::Ones(4, 1), b), Error);
}

TEST_CASE("principal angles on constructed subspaces") {
  // centering removes the constant direction, so use three orthogonal zero-mean columns as e1, e2, e3
  Eigen::MatrixXd basis(4, 3);
  basis.col(0) << 1, 1, -1, -1;
  basis.col(1) << 1, -1, 1, -1;
  basis.col(2) << 1, -1, -1, 1;
  Eigen::MatrixXd x(4, 2), y(4, 2);
  x << basis.col(0), basis.col(1);
  y << basis.col(0), basis.col(2);
  const auto ang = principal_angles(x, y, 5);
  REQUIRE(ang.degrees.size() == 2u);
  CHECK(ang.truncated);
  CHECK(ang.degrees[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(ang.degrees[1] == doctest::Approx(90.0).epsilon(1e-9));
  const auto same = principal_angles(x, x * 3.0, 2);
  for (double a : same.degrees) CHECK(a < 1e-6);

  CounterRng rng(4, 0);
  const Eigen::MatrixXd p = random_matrix(rng, 30, 4), q = random_matrix(rng, 30, 3);
  const auto pq = principal_angles(p, q, 5), qp = principal_angles(q, p, 5);
  REQUIRE(pq.degrees.size() == qp.degrees.size());
  for (std::size_t k = 0; k < pq.degrees.size(); ++k) {
    CHECK(std::abs(pq.degrees[k] - qp.degrees[k]) <= 1e-9);
    CHECK(pq.degrees[k] >= 0.0);
    CHECK(pq.degrees[k] <= 90.0);
    if (k) CHECK(pq.degrees[k] >= pq.degrees[k - 1]);
  }
}

TEST_CASE("regime masks and cell sampling") {
  const auto g = SpaceTimeGrid::make(0, 100, 0, 50, 10, 5);
  Field f = Field::zeros(g);
  f.mask.setConstant(true);
  for (int i = 0; i < g.nx; ++i) f.v.row(i).setConstant(5.0 + 2.0 * i);
  CHECK(regime_mask(f, 1.0).congested.count() == 0);
  const RegimeMasks r = regime_mask(f, 12.0);
  CHECK(r.free.count() + r.congested.count() == f.mask.count());

  const auto all = sample_points(f.mask, static_cast<int>(f.mask.count()), 3);
  CHECK(all.cells.size() == static_cast<std::size_t>(f.mask.count()));
  CHECK_FALSE(all.short_mask);
  const auto some = sample_points(f.mask, 17, 3);
  CHECK(some.cells == sample_points(f.mask, 17, 3).cells);
  CHECK(some.cells != sample_points(f.mask, 17, 4).cells);
  CHECK(sample_points(f.mask, 1000, 3).short_mask);
}

TEST_CASE("uncertainty maps are non-negative and split into latent and noise parts") {
  const SVGPState st = fitted_state(KernelMode::arz, 0.1);
  const auto g = SpaceTimeGrid::make(0, 600, 0, 300, 20, 10);
  const UQFields u = uq_fields(st, g);
  CHECK(u.field.var_v_obs.minCoeff() >= 0.0);
  CHECK(u.field.var_rho_latent.minCoeff() >= 0.0);
  CHECK(u.floor_v.minCoeff() >= 0.0);
}

TEST_CASE("CSV round-trips keep nine significant digits") {
  CHECK(fmt9(0.1234567891234) == "0.123456789");
  const auto g = SpaceTimeGrid::make(0, 40, 0, 20, 10, 5);
  Field f = Field::zeros(g);
  CounterRng rng(6, 0);
  for (Eigen::Index k = 0; k < f.rho.size(); ++k) {
    f.rho.data()[k] = round9(0.1 * rng.uniform());
    f.v.data()[k] = round9(30.0 * rng.uniform());
    f.mask.data()[k] = k % 3 != 0;
  }
  std::stringstream ss;
  write_field_csv(ss, f);
  const Field back = read_field_csv(ss);
  CHECK(back.grid == g);
  CHECK((back.mask == f.mask).all());
  for (Eigen::Index k = 0; k < f.rho.size(); ++k)
    if (f.mask.data()[k]) CHECK(back.v.data()[k] == f.v.data()[k]);

  ObservationSet obs = smooth_observations(10, 1);
  for (auto& e : obs.entries) e.value = round9(e.value), e.x = round9(e.x), e.t = round9(e.t);
  std::stringstream so;
  write_observations_csv(so, obs);
  const ObservationSet ob = read_observations_csv(so);
  REQUIRE(ob.size() == obs.size());
  for (std::size_t k = 0; k < ob.size(); ++k) {
    CHECK(ob.entries[k].value == obs.entries[k].value);
    CHECK(ob.entries[k].output == obs.entries[k].output);
  }

  TrajectorySet t;
  t.samples = {{3, 0.5, 12.25, 20.0}, {3, 1.0, 22.25, 20.0}, {8, 0.5, 1.0, 7.5}};
  std::stringstream st;
  write_trajectories_csv(st, t);
  CHECK(st.str().rfind("vehicle_id,t_s,x_m,v_mps\n", 0) == 0);
  const TrajectorySet tb = read_trajectories_csv(st);
  REQUIRE(tb.samples.size() == 3u);
  CHECK(tb.samples[2].vehicle_id == 8);
  CHECK(tb.samples[1].x == 22.25);

  std::stringstream bad("x_m,t_s,output,value\n1,2,pressure,3\n");
  CHECK_THROWS_AS((void)read_observations_csv(bad), Error);
}

TEST_CASE("model JSON round-trip is stable") {
  const SVGPState st = fitted_state(KernelMode::arz, 0.1);
  const std::string text = model_to_json(st).dump();
  const SVGPState back = model_from_json(nlohmann::json::parse(text));
  // stored values carry nine significant digits, so a second pass is exact
  CHECK(model_to_json(back).dump() == text);
  const std::vector<Point> q{{0.2, 0.1}, {-1.0, 0.5}};
  const auto a = predict_latent(st, q), b = predict_latent(back, q);
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-6 * a.mean.cwiseAbs().maxCoeff());
}

TEST_CASE("experiment config is strict") {
  const ExperimentConfig d = parse_experiment_config(nlohmann::json::object());
  CHECK(d.sampling.positions.size() == 4u);
  CHECK(d.scenario.sim.grid.nx == 60);
  CHECK(d.scenario.sim.pressure.rho_ref == doctest::Approx(d.scenario.sim.fd.rho_jam / std::sqrt(2.0 * d.scenario.sim.fd.v_f)));

  const auto j = nlohmann::json::parse(R"({"sampling": {"mode": "loops", "positions": [100, 200]},
                                           "model": {"kernel": "lwr_bidirectional", "inducing": 32},
                                           "sweep": {"methods": ["asm", "pegp_arz"], "penetrations": [0.1]}})");
  const ExperimentConfig c = parse_experiment_config(j);
  CHECK(c.sampling.mode == SamplingMode::loops);
  CHECK(c.model.mode == KernelMode::lwr_bidirectional);
  CHECK(c.methods.arz.inducing == 32);
  CHECK(c.sweep.methods.size() == 2u);

  CHECK_THROWS_AS((void)parse_experiment_config(nlohmann::json::parse(R"({"sampling": {"penetraton": 0.2}})")), Error);
  CHECK_THROWS_AS((void)parse_experiment_config(nlohmann::json::parse(R"({"extra": 1})")), Error);
  CHECK_THROWS_AS((void)parse_experiment_config(nlohmann::json::parse(R"({"model": {"inducing": "many"}})")), Error);
  CHECK_THROWS_AS((void)parse_experiment_config(nlohmann::json::parse(R"({"sweep": {"methods": ["kriging"]}})")), Error);
  CHECK_THROWS_AS((void)parse_experiment_config(nlohmann::json::parse(R"({"scenario": {"cfl": 2.0}})")), Error);
}

TEST_CASE("heatmap of a constant field is a single color with labeled extents") {
  const auto g = SpaceTimeGrid::make(0, 600, 0, 300, 10, 5);
  HeatmapPanel p{g, Eigen::MatrixXd::Constant(g.nx, g.nt, 3.0), {}};
  std::vector<PanelLayout> layout;
  const RgbImage img = render_heatmaps({p}, &layout);
  REQUIRE(layout.size() == 1u);
  const auto& l = layout[0];
  const auto c = img.at(l.plot_x, l.plot_y);
  CHECK(c == viridis(0.5));
  for (int y = l.plot_y; y < l.plot_y + l.plot_h; ++y)
    for (int x = l.plot_x; x < l.plot_x + l.plot_w; ++x) REQUIRE(img.at(x, y) == c);
  CHECK(l.lo == 3.0);
  CHECK(l.hi == 3.0);

  // masked cells turn gray, non-masked keep the map
  HeatmapPanel m = p;
  m.values(0, 0) = std::nan("");
  const RgbImage im = render_heatmaps({m}, &layout);
  const auto corner = im.at(layout[0].plot_x, layout[0].plot_y + layout[0].plot_h - 1);  // x = 0 at the bottom
  CHECK(corner == std::array<std::uint8_t, 3>{160, 160, 160});

  const auto path = (std::filesystem::temp_directory_path() / "pegp_plot_test.png").string();
  write_png(path, img);
  CHECK(std::filesystem::file_size(path) > 100u);
  std::remove(path.c_str());
}

TEST_CASE("viridis endpoints") {
  const auto lo = viridis(0.0), hi = viridis(1.0);
  CHECK(std::abs(int(lo[0]) - 68) <= 3);
  CHECK(std::abs(int(lo[2]) - 84) <= 3);
  CHECK(std::abs(int(hi[0]) - 253) <= 3);
  CHECK(std::abs(int(hi[1]) - 231) <= 3);
  CHECK(viridis(-1.0) == lo);
}
