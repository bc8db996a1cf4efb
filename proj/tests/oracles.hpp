#pragma once

// Independent reference computations: kernels by nested finite differences of the plain SE
// function, and exact dense GP regression.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "pegp/kernel.hpp"
#include "pegp/rng.hpp"
#include "pegp/svgp.hpp"

namespace oracle {

using pegp::Point;

inline double se(Point s, Point sp, const pegp::SEHyper& h) {
  const double u = (s.x - sp.x) / h.ell_x, w = (s.t - sp.t) / h.ell_t;
  return h.sigma * h.sigma * std::exp(-0.5 * (u * u + w * w));
}

// Central difference with one Richardson step: O(h^4).
inline double deriv(const std::function<double(double)>& f, double z, double h) {
  const auto c = [&](double e) { return (f(z + e) - f(z - e)) / (2.0 * e); };
  return (4.0 * c(0.5 * h) - c(h)) / 3.0;
}

// Operator row: dt * d/dt + dx * d/dx + c * identity.
struct Op {
  double dt = 0.0, dx = 0.0, c = 0.0;
};

using Fn2 = std::function<double(Point)>;

inline double apply(const Op& op, const Fn2& f, Point p, double h) {
  double v = op.c * f(p);
  if (op.dt != 0.0) v += op.dt * deriv([&](double t) { return f({p.x, t}); }, p.t, h);
  if (op.dx != 0.0) v += op.dx * deriv([&](double x) { return f({x, p.t}); }, p.x, h);
  return v;
}

// sum_k w_k (A_k on s)(B_k on s') k0(s, s')
inline double operator_entry(const std::vector<std::array<Op, 2>>& terms, const std::vector<double>& weights, Point s,
                             Point sp, const pegp::SEHyper& base, double h) {
  double total = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& [a, b] = terms[k];
    const Fn2 outer = [&](Point q) { return apply(b, [&](Point qp) { return se(q, qp, base); }, sp, h); };
    total += weights[k] * apply(a, outer, s, h);
  }
  return total;
}

// Physics kernel block built from finite differences of the SE base for every mode.
inline Eigen::MatrixXd physics_kernel_fd(Point s, Point sp, const pegp::KernelSpec& spec, double h = 1e-3) {
  const auto& c = spec.coef;
  const auto& b = spec.base;
  using pegp::KernelMode;
  switch (spec.mode) {
    case KernelMode::plain_se: {
      Eigen::MatrixXd k = Eigen::MatrixXd::Zero(2, 2);
      k(0, 0) = k(1, 1) = se(s, sp, b);
      return k;
    }
    case KernelMode::lwr_scalar: {
      const Op d{1.0, c.lambda0, 0.0};
      return Eigen::MatrixXd::Constant(1, 1, operator_entry({{d, d}}, {1.0}, s, sp, b, h));
    }
    case KernelMode::lwr_bidirectional: {
      const Op f{1.0, c.c_f, 0.0}, r{1.0, c.c_b, 0.0};
      const double phys = operator_entry({{f, f}, {r, r}}, {c.w_f, 1.0 - c.w_f}, s, sp, b, h);
      Eigen::MatrixXd k(2, 2);
      if (spec.task_coupling) {
        const Eigen::Vector2d g(1.0, c.coupling);
        k = phys * g * g.transpose();
      } else {
        k = phys * Eigen::Matrix2d::Identity();
      }
      return k;
    }
    case KernelMode::arz: {
      const double a = c.relax_a(), bb = c.relax_b();
      // operator matrix rows over the two independent base processes
      std::array<std::array<Op, 2>, 2> L;
      if (spec.expansion == pegp::ArzExpansion::as_printed) {
        // each output is its own operator applied to one shared base process
        const Op l1{1.0, c.lambda1, -a}, l2{1.0, c.lambda2, bb};
        const std::array<Op, 2> rows{l1, l2};
        Eigen::MatrixXd k(2, 2);
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) k(i, j) = operator_entry({{rows[i], rows[j]}}, {1.0}, s, sp, b, h);
        return k;
      }
      L[0] = {Op{1.0, c.lambda1, -a}, Op{0.0, 0.0, bb}};
      L[1] = {Op{0.0, 0.0, -a}, Op{1.0, c.lambda2, bb}};
      Eigen::MatrixXd k(2, 2);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          k(i, j) = operator_entry({{L[i][0], L[j][0]}, {L[i][1], L[j][1]}}, {1.0, 1.0}, s, sp, b, h);
      return k;
    }
  }
  return {};
}

inline double uniform(pegp::CounterRng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// Hyperparameters drawn from moderate ranges in standardized units.
inline pegp::KernelSpec random_spec(pegp::KernelMode mode, pegp::ArzExpansion ex, pegp::CounterRng& rng) {
  pegp::KernelSpec k;
  k.mode = mode;
  k.expansion = ex;
  k.base = {uniform(rng, 0.5, 2.0), uniform(rng, 0.3, 1.5), uniform(rng, 0.3, 1.5)};
  for (auto& r : k.residual) r = {uniform(rng, 0.01, 0.5), 1.0, uniform(rng, 0.3, 1.5), uniform(rng, 0.3, 1.5)};
  auto& c = k.coef;
  c.lambda1 = uniform(rng, -2.0, 2.0);
  c.lambda2 = uniform(rng, -2.0, 2.0);
  c.alpha = uniform(rng, -0.9, 0.5);
  c.tau = uniform(rng, 0.3, 3.0);
  c.lambda0 = uniform(rng, -2.0, 2.0);
  c.w_f = uniform(rng, 0.1, 0.9);
  c.c_f = uniform(rng, 0.2, 2.0);
  c.c_b = uniform(rng, -2.0, -0.2);
  c.coupling = uniform(rng, -2.0, 2.0);
  return k;
}

inline Point random_point(pegp::CounterRng& rng, double half_width = 1.5) {
  return {uniform(rng, -half_width, half_width), uniform(rng, -half_width, half_width)};
}

// |a - b| relative to max(|b|, floor).
inline double rel_err(double a, double b, double floor) { return std::abs(a - b) / std::max(std::abs(b), floor); }

struct DenseGP {
  Eigen::MatrixXd kff;  // latent covariance over training rows
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd alpha;
  double lml = 0.0;
};

// Exact GP on the regression rows of `d` with the state's kernel and noise.
inline DenseGP dense_gp(const pegp::SVGPState& st, const pegp::TrainingData& d) {
  std::vector<Point> pts;
  for (int r = 0; r < d.rows(); ++r) pts.push_back({d.points(d.row_point[r], 0), d.points(d.row_point[r], 1)});
  DenseGP g;
  g.kff = pegp::gram(pts, d.row_output, st.kernel);
  Eigen::MatrixXd k = g.kff;
  for (int r = 0; r < d.rows(); ++r) k(r, r) += st.noise[d.row_output[r]];
  g.llt.compute(k);
  g.alpha = g.llt.solve(d.y);
  const Eigen::MatrixXd l = g.llt.matrixL();
  g.lml = -0.5 * d.y.dot(g.alpha) - l.diagonal().array().log().sum() -
          0.5 * static_cast<double>(d.rows()) * std::log(2.0 * M_PI);
  return g;
}

// Posterior latent mean and variance of output `out` at standardized `q`.
inline std::pair<double, double> dense_predict(const DenseGP& g, const pegp::SVGPState& st, const pegp::TrainingData& d,
                                               Point q, int out) {
  Eigen::VectorXd kx(d.rows());
  for (int r = 0; r < d.rows(); ++r) {
    const Point p{d.points(d.row_point[r], 0), d.points(d.row_point[r], 1)};
    kx[r] = pegp::total_kernel(q, p, st.kernel)(out, d.row_output[r]);
  }
  const double kqq = pegp::total_kernel(q, q, st.kernel)(out, out);
  return {kx.dot(g.alpha), kqq - kx.dot(g.llt.solve(kx))};
}

}  // namespace oracle
