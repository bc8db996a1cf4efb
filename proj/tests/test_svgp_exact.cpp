#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pegp/svgp.hpp"
#include "test_support.hpp"

using namespace pegp;
using pegp::testing::smooth_observations;

namespace {

struct Exact {
  SVGPState st;
  TrainingData data;
};

// Inducing inputs at every training point, so the variational posterior can be exact.
Exact inducing_at_data(KernelMode mode, int n, std::uint64_t seed) {
  ModelOptions opt;
  opt.mode = mode;
  opt.inducing = n;
  opt.jitter = 1e-10;
  opt.pressure.rho_ref = 0.0155;
  const auto obs = smooth_observations(n, seed);
  Exact e{initialize_state(obs, opt), {}};
  e.data = make_training_data(obs, e.st);
  return e;
}

}  // namespace

TEST_CASE("with Z = X the optimal ELBO equals the dense log marginal likelihood") {
  for (KernelMode mode : {KernelMode::arz, KernelMode::lwr_bidirectional, KernelMode::plain_se, KernelMode::lwr_scalar}) {
    CAPTURE(static_cast<int>(mode));
    auto [st, d] = inducing_at_data(mode, 30, 21);
    REQUIRE(st.inducing() == 30);
    const auto dense = oracle::dense_gp(st, d);
    CHECK(std::abs(elbo(st, d) - dense.lml) < 1e-3);

    const std::vector<Point> q{{0.1, -0.2}, {1.3, 0.4}, {-0.7, 0.9}, {2.5, -1.5}};
    const auto pred = predict_latent(st, q);
    for (std::size_t k = 0; k < q.size(); ++k)
      for (int a = 0; a < st.outputs(); ++a) {
        const auto [mu, var] = oracle::dense_predict(dense, st, d, q[k], a);
        CHECK(std::abs(pred.mean(static_cast<Eigen::Index>(k), a) - mu) < 1e-6);
        CHECK(std::abs(pred.cov[k](a, a) - var) < 1e-6);
      }
  }
}

TEST_CASE("the ELBO never exceeds the dense log marginal likelihood") {
  auto [st, d] = inducing_at_data(KernelMode::arz, 30, 22);
  st.jitter = 1e-6;
  const double lml = oracle::dense_gp(st, d).lml;
  CounterRng rng(9, 0);
  for (int trial = 0; trial < 50; ++trial) {
    SVGPState s = st;
    const int m = 3 + static_cast<int>(rng.uniform() * 20);
    s.Z.resize(m, 2);
    for (int j = 0; j < m; ++j) s.Z.row(j) << oracle::uniform(rng, -1.8, 1.8), oracle::uniform(rng, -1.8, 1.8);
    const auto dim = m * s.outputs();
    s.m = Eigen::VectorXd::Zero(dim);
    s.S_factor = Eigen::MatrixXd::Identity(dim, dim);
    if (trial % 2 == 0) {
      set_optimal_variational(s, d);
    } else {
      for (Eigen::Index i = 0; i < dim; ++i) s.m[i] = rng.normal();
      for (Eigen::Index c = 0; c < dim; ++c)
        for (Eigen::Index r = c; r < dim; ++r) s.S_factor(r, c) = (r == c ? 0.5 : 0.1) * rng.normal() + (r == c ? 1.0 : 0.0);
    }
    CHECK(elbo(s, d) <= lml + 1e-6);
  }
}

TEST_CASE("KL divergence is zero at the prior and positive elsewhere") {
  auto [st, d] = inducing_at_data(KernelMode::lwr_bidirectional, 12, 3);
  (void)d;
  SVGPState prior = st;
  prior.m.setZero();
  Eigen::MatrixXd kuu = gram_all_outputs(
      [&] {
        std::vector<Point> z;
        for (int j = 0; j < st.inducing(); ++j) z.push_back({st.Z(j, 0), st.Z(j, 1)});
        return z;
      }(),
      st.kernel);
  kuu.diagonal().array() += st.jitter * kuu.diagonal().mean();
  prior.S_factor = kuu.llt().matrixL();
  CHECK(std::abs(kl_divergence(prior)) < 1e-6);
  CHECK(kl_divergence(st) > 0.0);
}

TEST_CASE("training increases the ELBO and is deterministic") {
  ModelOptions opt;
  opt.mode = KernelMode::lwr_bidirectional;
  opt.inducing = 12;
  opt.iterations = 15;
  opt.optimizer = Optimizer::lbfgs;
  opt.variational = VariationalUpdate::closed_form;
  const auto obs = smooth_observations(60, 4);
  const SVGPState init = initialize_state(obs, opt);
  const double e0 = elbo(init, make_training_data(obs, init));
  const SVGPState a = train(obs, opt), b = train(obs, opt);
  CHECK(a.meta.final_elbo >= e0);
  CHECK(a.meta.final_elbo == b.meta.final_elbo);
  CHECK(a.m == b.m);

  opt.optimizer = Optimizer::adam;
  opt.variational = VariationalUpdate::adam;
  opt.iterations = 40;
  const SVGPState c = train(obs, opt);
  CHECK(c.meta.final_elbo >= e0);
  CHECK(c.meta.trace.size() == 40u);
}

TEST_CASE("physical maps push moments through the invariant transform") {
  PressureLaw pl;
  pl.rho_ref = 0.0155;
  const double rho = 0.05, v = 15.0;
  const auto [w1, w2] = map_invariants(rho, v, pl);
  const Eigen::Matrix2d zero = Eigen::Matrix2d::Zero();
  const auto m = arz_delta_map({w1, w2}, zero, zero, pl);
  CHECK(m.rho == doctest::Approx(rho).epsilon(1e-10));
  CHECK(m.v == doctest::Approx(v).epsilon(1e-10));
  Eigen::Matrix2d cov;
  cov << 0.3, 0.1, 0.1, 0.2;
  const auto mc = arz_delta_map({w1, w2}, cov, Eigen::Matrix2d::Identity() * 0.05, pl);
  CHECK(mc.var_v_latent == doctest::Approx(cov(1, 1)));
  CHECK(mc.var_v_obs == doctest::Approx(cov(1, 1) + 0.05));
  const double dp = pl.deriv(rho);
  CHECK(mc.var_rho_latent == doctest::Approx((cov(0, 0) + cov(1, 1) - 2 * cov(0, 1)) / (dp * dp)));

  const auto l = lwr_joint_map(0.01, 0.04, 0.01, 0.05, 15.0, -250.0, 0.0, 0.0);
  CHECK(l.rho == doctest::Approx(0.06));
  CHECK(l.v == doctest::Approx(15.0 - 2.5));
  CHECK(l.var_v_latent == doctest::Approx(250.0 * 250.0 * 0.04));
}
