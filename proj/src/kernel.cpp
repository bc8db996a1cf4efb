#include "pegp/kernel.hpp"

#include <algorithm>
#include <cmath>

#include "pegp/dual.hpp"
#include "pegp/error.hpp"

namespace pegp {

namespace {

using std::exp;

// SE family at lag (u, w) = s - s' with unit signal variance, ordered as the operator
// component product (p, q) with p, q in {d/dt, d/dx, identity}:
//   [Ktt', Ktx', Kt, Kxt', Kxx', Kx, Kt', Kx', K]
template <class T>
std::array<T, 9> se_family(const T& u, const T& w, const T& lx, const T& lt) {
  const T a = 1.0 / (lx * lx);
  const T b = 1.0 / (lt * lt);
  const T au = a * u;
  const T bw = b * w;
  const T k = exp(-0.5 * (au * u + bw * w));
  const T cross = -(au * bw) * k;
  return {(b - bw * bw) * k, cross, -bw * k, cross, (a - au * au) * k, -au * k, bw * k, au * k, k};
}

template <class T>
struct OpRow {
  T c[3];  // coefficients of d/dt, d/dx, identity
};

template <class T>
OpRow<T> row(const T& dt, const T& dx, const T& c) {
  return OpRow<T>{{dt, dx, c}};
}

template <class T>
T sigmoid(const T& z) {
  return 1.0 / (T(1.0) + exp(-z));
}

// C[a*O + b][p*3 + q] = sum_k w_k op[a][k]_p op[b][k]_q, so that a physics block is
// sigma^2 * sum_f C[ab][f] family[f].
template <class T>
std::vector<std::array<T, 9>> coefficient_tensor(const KernelSpec& spec, const std::array<T, 4>& p) {
  const T one(1.0), zero(0.0);
  std::vector<std::vector<OpRow<T>>> op;
  std::vector<T> w;
  switch (spec.mode) {
    case KernelMode::plain_se:
      op = {{row(zero, zero, one), row(zero, zero, zero)}, {row(zero, zero, zero), row(zero, zero, one)}};
      w = {one, one};
      break;
    case KernelMode::lwr_scalar:
      op = {{row(one, p[0], zero)}};
      w = {one};
      break;
    case KernelMode::arz: {
      const T tau = exp(p[3]);
      const T a = p[2] / tau;
      const T b = (one + p[2]) / tau;
      if (spec.expansion == ArzExpansion::as_printed) {
        op = {{row(one, p[0], -a)}, {row(one, p[1], b)}};
        w = {one};
      } else {
        op = {{row(one, p[0], -a), row(zero, zero, b)}, {row(zero, zero, -a), row(one, p[1], b)}};
        w = {one, one};
      }
      break;
    }
    case KernelMode::lwr_bidirectional: {
      const T wf = sigmoid(p[0]);
      if (spec.task_coupling) {
        const T g = p[3];
        op = {{row(one, p[1], zero), row(one, p[2], zero)}, {row(g, g * p[1], zero), row(g, g * p[2], zero)}};
        w = {wf, one - wf};
      } else {
        const auto z = row(zero, zero, zero);
        op = {{row(one, p[1], zero), row(one, p[2], zero), z, z}, {z, z, row(one, p[1], zero), row(one, p[2], zero)}};
        w = {wf, one - wf, wf, one - wf};
      }
      break;
    }
  }
  const int o = spec.outputs();
  std::vector<std::array<T, 9>> c(static_cast<std::size_t>(o * o));
  for (int a = 0; a < o; ++a)
    for (int b = 0; b < o; ++b)
      for (int pi = 0; pi < 3; ++pi)
        for (int qi = 0; qi < 3; ++qi) {
          T acc(0.0);
          for (std::size_t k = 0; k < w.size(); ++k) acc = acc + w[k] * op[a][k].c[pi] * op[b][k].c[qi];
          c[a * o + b][pi * 3 + qi] = acc;
        }
  return c;
}

std::array<double, 4> operator_params(const KernelSpec& spec) {
  const auto& c = spec.coef;
  switch (spec.mode) {
    case KernelMode::arz:
      return {c.lambda1, c.lambda2, c.alpha, std::log(c.tau)};
    case KernelMode::lwr_scalar:
      return {c.lambda0, 0.0, 0.0, 0.0};
    case KernelMode::lwr_bidirectional: {
      const double wf = std::clamp(c.w_f, 1e-12, 1.0 - 1e-12);
      return {std::log(wf / (1.0 - wf)), c.c_f, c.c_b, c.coupling};
    }
    case KernelMode::plain_se:
      break;
  }
  return {0.0, 0.0, 0.0, 0.0};
}

void check_positive(double v, const char* name) {
  if (!std::isfinite(v) || !(v > 0.0)) throw validation_error(std::string("kernel hyperparameter ") + name + " must be finite and positive");
}

double residual_value(double dx, double dt, const ResidualHyper& h) {
  return h.b_res * h.sigma_res * h.sigma_res *
         std::exp(-0.5 * (dx * dx / (h.ell_x * h.ell_x) + dt * dt / (h.ell_t * h.ell_t)));
}

}  // namespace

void KernelSpec::validate() const {
  check_positive(base.sigma, "sigma");
  check_positive(base.ell_x, "ell_x");
  check_positive(base.ell_t, "ell_t");
  for (int o = 0; o < outputs(); ++o) {
    const auto& r = residual[o];
    if (!std::isfinite(r.b_res) || r.b_res < 0.0) throw validation_error("kernel hyperparameter b_res must be finite and non-negative");
    check_positive(r.sigma_res, "sigma_res");
    check_positive(r.ell_x, "residual ell_x");
    check_positive(r.ell_t, "residual ell_t");
  }
  const auto& c = coef;
  for (double v : {c.lambda1, c.lambda2, c.alpha, c.lambda0, c.c_f, c.c_b, c.coupling, c.w_f})
    if (!std::isfinite(v)) throw validation_error("kernel operator coefficient is not finite");
  if (mode == KernelMode::arz) check_positive(c.tau, "tau");
  if (mode == KernelMode::lwr_bidirectional && (c.w_f < 0.0 || c.w_f > 1.0))
    throw validation_error("w_f must lie in [0, 1]");
}

SEFamily se_derivative_family(Point s, Point sp, const SEHyper& h) {
  const auto f = se_family<double>(s.x - sp.x, s.t - sp.t, h.ell_x, h.ell_t);
  const double s2 = h.sigma * h.sigma;
  SEFamily r{};
  r.kttp = s2 * f[0];
  r.ktxp = s2 * f[1];
  r.kt = s2 * f[2];
  r.kxtp = s2 * f[3];
  r.kxxp = s2 * f[4];
  r.kx = s2 * f[5];
  r.ktp = s2 * f[6];
  r.kxp = s2 * f[7];
  r.k = s2 * f[8];
  return r;
}

Eigen::Matrix2d arz_block_kernel(Point s, Point sp, const KernelSpec& spec) {
  const auto f = se_derivative_family(s, sp, spec.base);
  const double l1 = spec.coef.lambda1, l2 = spec.coef.lambda2;
  const double a = spec.coef.relax_a(), b = spec.coef.relax_b();
  Eigen::Matrix2d k;
  k(0, 0) = f.kttp + l1 * l1 * f.kxxp + l1 * (f.ktxp + f.kxtp) - a * (f.kt + f.ktp + l1 * (f.kx + f.kxp)) +
            a * a * f.k;
  k(0, 1) = f.kttp + l1 * l2 * f.kxxp + l1 * f.kxtp + l2 * f.ktxp - a * (f.ktp + l2 * f.kxp) +
            b * (f.kt + l1 * f.kx) - a * b * f.k;
  k(1, 0) = f.kttp + l1 * l2 * f.kxxp + l1 * f.ktxp + l2 * f.kxtp + b * (f.ktp + l1 * f.kxp) -
            a * (f.kt + l2 * f.kx) - a * b * f.k;
  k(1, 1) = f.kttp + l2 * l2 * f.kxxp + l2 * (f.ktxp + f.kxtp) + b * (f.kt + f.ktp + l2 * (f.kx + f.kxp)) +
            b * b * f.k;
  return k;
}

Eigen::Matrix2d arz_block_kernel_full(Point s, Point sp, const KernelSpec& spec) {
  const auto f = se_derivative_family(s, sp, spec.base);
  const double l1 = spec.coef.lambda1, l2 = spec.coef.lambda2;
  const double a = spec.coef.relax_a(), b = spec.coef.relax_b();
  const Eigen::Matrix2d diag_rows = arz_block_kernel(s, sp, spec);
  // L = [[D1 - a, b], [-a, D2 + b]],  K_ij = sum_q L_iq L'_jq k0
  Eigen::Matrix2d k;
  k(0, 0) = diag_rows(0, 0) + b * b * f.k;
  k(0, 1) = -a * (f.kt + l1 * f.kx) + a * a * f.k + b * (f.ktp + l2 * f.kxp) + b * b * f.k;
  k(1, 0) = -a * (f.ktp + l1 * f.kxp) + a * a * f.k + b * (f.kt + l2 * f.kx) + b * b * f.k;
  k(1, 1) = a * a * f.k + diag_rows(1, 1);
  return k;
}

double lwr_scalar_kernel(Point s, Point sp, const KernelSpec& spec) {
  const auto f = se_derivative_family(s, sp, spec.base);
  const double l0 = spec.coef.lambda0;
  return f.kttp + l0 * (f.ktxp + f.kxtp) + l0 * l0 * f.kxxp;
}

Eigen::Matrix2d lwr_bidirectional_kernel(Point s, Point sp, const KernelSpec& spec) {
  const auto& c = spec.coef;
  if (c.w_f < 0.0 || c.w_f > 1.0) throw validation_error("w_f must lie in [0, 1]");
  const auto f = se_derivative_family(s, sp, spec.base);
  auto directional = [&](double speed) { return f.kttp + speed * (f.ktxp + f.kxtp) + speed * speed * f.kxxp; };
  double phys = 0.0;
  if (c.w_f > 0.0) phys += c.w_f * directional(c.c_f);
  if (c.w_f < 1.0) phys += (1.0 - c.w_f) * directional(c.c_b);
  Eigen::Matrix2d k;
  if (spec.task_coupling) {
    const Eigen::Vector2d g(1.0, c.coupling);
    k = phys * (g * g.transpose());
  } else {
    k = phys * Eigen::Matrix2d::Identity();
  }
  return k;
}

double residual_kernel(Point s, Point sp, const ResidualHyper& h) { return residual_value(s.x - sp.x, s.t - sp.t, h); }

Eigen::MatrixXd physics_kernel(Point s, Point sp, const KernelSpec& spec) {
  KernelEvaluator ev(spec);
  const int o = ev.outputs();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> k(o, o);
  ev.eval(s.x - sp.x, s.t - sp.t, k.data(), nullptr);
  return k;
}

Eigen::MatrixXd residual_block(Point s, Point sp, const KernelSpec& spec) {
  const int o = spec.outputs();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(o, o);
  for (int a = 0; a < o; ++a) k(a, a) = residual_kernel(s, sp, spec.residual[a]);
  return k;
}

Eigen::MatrixXd total_kernel(Point s, Point sp, const KernelSpec& spec) {
  return physics_kernel(s, sp, spec) + residual_block(s, sp, spec);
}

Eigen::MatrixXd gram(const std::vector<Point>& points, const std::vector<int>& outputs, const KernelSpec& spec,
                     KernelPart part) {
  spec.validate();
  if (points.size() != outputs.size()) throw validation_error("gram: points and outputs differ in length");
  const KernelEvaluator ev(spec);
  const int o = ev.outputs();
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd g(n, n);
  std::vector<double> phys(o * o), res(o * o);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      ev.eval(points[i].x - points[j].x, points[i].t - points[j].t, phys.data(), res.data());
      const int ab = outputs[i] * o + outputs[j];
      double v = 0.0;
      if (part != KernelPart::residual) v += phys[ab];
      if (part != KernelPart::physics) v += res[ab];
      g(i, j) = v;
      g(j, i) = v;
    }
  return g;
}

Eigen::MatrixXd gram_all_outputs(const std::vector<Point>& points, const KernelSpec& spec, KernelPart part) {
  const int o = spec.outputs();
  std::vector<Point> p;
  std::vector<int> out;
  for (int a = 0; a < o; ++a)
    for (const auto& q : points) {
      p.push_back(q);
      out.push_back(a);
    }
  return gram(p, out, spec, part);
}

void add_jitter(Eigen::MatrixXd& g, double jitter) {
  if (g.rows() == 0) return;
  const double add = jitter * g.diagonal().mean();
  g.diagonal().array() += add;
}

JitteredCholesky robust_cholesky(const Eigen::MatrixXd& k, double jitter, int doublings) {
  if (!k.allFinite()) throw numerical_error("ill-conditioned K_uu");
  JitteredCholesky out;
  const double mean_diag = k.rows() ? k.diagonal().mean() : 0.0;
  double j = jitter;
  for (int attempt = 0; attempt <= doublings; ++attempt, j *= 2.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += j * mean_diag;
    out.llt.compute(kj);
    if (out.llt.info() == Eigen::Success && out.llt.matrixLLT().diagonal().allFinite() &&
        (out.llt.matrixLLT().diagonal().array() > 0.0).all()) {
      out.jitter = j;
      return out;
    }
  }
  throw numerical_error("ill-conditioned K_uu");
}

int operator_param_count(KernelMode mode) noexcept {
  switch (mode) {
    case KernelMode::arz:
    case KernelMode::lwr_bidirectional:
      return 4;
    case KernelMode::lwr_scalar:
      return 1;
    case KernelMode::plain_se:
      return 0;
  }
  return 0;
}

int kernel_param_count(const KernelSpec& spec) noexcept {
  return 3 + operator_param_count(spec.mode) + 4 * spec.outputs();
}

Eigen::VectorXd kernel_to_vector(const KernelSpec& spec) {
  Eigen::VectorXd th(kernel_param_count(spec));
  th[0] = std::log(spec.base.sigma);
  th[1] = std::log(spec.base.ell_x);
  th[2] = std::log(spec.base.ell_t);
  const int nop = operator_param_count(spec.mode);
  const auto p = operator_params(spec);
  for (int k = 0; k < nop; ++k) th[3 + k] = p[k];
  for (int o = 0; o < spec.outputs(); ++o) {
    const auto& r = spec.residual[o];
    const int i = 3 + nop + 4 * o;
    th[i] = std::log(r.b_res);
    th[i + 1] = std::log(r.sigma_res);
    th[i + 2] = std::log(r.ell_x);
    th[i + 3] = std::log(r.ell_t);
  }
  return th;
}

KernelSpec kernel_from_vector(const KernelSpec& like, const Eigen::VectorXd& th) {
  KernelSpec s = like;
  if (th.size() != kernel_param_count(like)) throw validation_error("kernel parameter vector has wrong length");
  s.base.sigma = std::exp(th[0]);
  s.base.ell_x = std::exp(th[1]);
  s.base.ell_t = std::exp(th[2]);
  auto& c = s.coef;
  switch (s.mode) {
    case KernelMode::arz:
      c.lambda1 = th[3];
      c.lambda2 = th[4];
      c.alpha = th[5];
      c.tau = std::exp(th[6]);
      break;
    case KernelMode::lwr_scalar:
      c.lambda0 = th[3];
      break;
    case KernelMode::lwr_bidirectional:
      c.w_f = 1.0 / (1.0 + std::exp(-th[3]));
      c.c_f = th[4];
      c.c_b = th[5];
      c.coupling = th[6];
      break;
    case KernelMode::plain_se:
      break;
  }
  const int nop = operator_param_count(s.mode);
  for (int o = 0; o < s.outputs(); ++o) {
    auto& r = s.residual[o];
    const int i = 3 + nop + 4 * o;
    r.b_res = std::exp(th[i]);
    r.sigma_res = std::exp(th[i + 1]);
    r.ell_x = std::exp(th[i + 2]);
    r.ell_t = std::exp(th[i + 3]);
  }
  return s;
}

std::vector<std::string> kernel_param_names(const KernelSpec& spec) {
  std::vector<std::string> n = {"log_sigma", "log_ell_x", "log_ell_t"};
  switch (spec.mode) {
    case KernelMode::arz:
      n.insert(n.end(), {"lambda1", "lambda2", "alpha", "log_tau"});
      break;
    case KernelMode::lwr_scalar:
      n.emplace_back("lambda0");
      break;
    case KernelMode::lwr_bidirectional:
      n.insert(n.end(), {"logit_w_f", "c_f", "c_b", "coupling"});
      break;
    case KernelMode::plain_se:
      break;
  }
  for (int o = 0; o < spec.outputs(); ++o)
    for (const char* p : {"log_b_res", "log_sigma_res", "log_res_ell_x", "log_res_ell_t"})
      n.push_back(std::string(p) + "_" + std::to_string(o));
  return n;
}

KernelEvaluator::KernelEvaluator(const KernelSpec& spec)
    : spec_(spec), o_(spec.outputs()), n_op_(operator_param_count(spec.mode)) {
  sigma2_ = spec.base.sigma * spec.base.sigma;
  const auto p = operator_params(spec);
  coef_ = coefficient_tensor<double>(spec, p);
  std::array<Dual<4>, 4> pd;
  for (int k = 0; k < 4; ++k) pd[k] = Dual<4>::variable(p[k], k);
  const auto cd = coefficient_tensor<Dual<4>>(spec, pd);
  dcoef_.assign(n_op_, std::vector<std::array<double, 9>>(cd.size()));
  for (int k = 0; k < n_op_; ++k)
    for (std::size_t ab = 0; ab < cd.size(); ++ab)
      for (int f = 0; f < 9; ++f) dcoef_[k][ab][f] = cd[ab][f].d[k];
  coef_acc_.assign(coef_.size(), std::array<double, 9>{});
}

void KernelEvaluator::eval(double dx, double dt, double* phys, double* res) const {
  if (phys) {
    const auto fam = se_family<double>(dx, dt, spec_.base.ell_x, spec_.base.ell_t);
    for (int ab = 0; ab < o_ * o_; ++ab) {
      double acc = 0.0;
      for (int f = 0; f < 9; ++f) acc += coef_[ab][f] * fam[f];
      phys[ab] = sigma2_ * acc;
    }
  }
  if (res) {
    for (int ab = 0; ab < o_ * o_; ++ab) res[ab] = 0.0;
    for (int a = 0; a < o_; ++a) res[a * o_ + a] = residual_value(dx, dt, spec_.residual[a]);
  }
}

void KernelEvaluator::eval_total(double dx, double dt, double* out) const {
  double res[4];
  eval(dx, dt, out, res);
  for (int ab = 0; ab < o_ * o_; ++ab) out[ab] += res[ab];
}

void KernelEvaluator::accumulate(double dx, double dt, const double* g, Eigen::VectorXd& grad, double* dlag) {
  using D = Dual<4>;
  D lx(spec_.base.ell_x), lt(spec_.base.ell_t);
  lx.d[0] = spec_.base.ell_x;  // tangent along log ell_x
  lt.d[1] = spec_.base.ell_t;
  const auto fam = se_family<D>(D::variable(dx, 2), D::variable(dt, 3), lx, lt);
  std::array<double, 9> h{};
  for (int ab = 0; ab < o_ * o_; ++ab) {
    const double gab = g[ab];
    if (gab == 0.0) continue;
    for (int f = 0; f < 9; ++f) {
      h[f] += gab * coef_[ab][f];
      coef_acc_[ab][f] += gab * fam[f].v;
    }
  }
  double s = 0.0, d0 = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
  for (int f = 0; f < 9; ++f) {
    s += h[f] * fam[f].v;
    d0 += h[f] * fam[f].d[0];
    d1 += h[f] * fam[f].d[1];
    d2 += h[f] * fam[f].d[2];
    d3 += h[f] * fam[f].d[3];
  }
  grad[0] += 2.0 * sigma2_ * s;
  grad[1] += sigma2_ * d0;
  grad[2] += sigma2_ * d1;
  dlag[0] = sigma2_ * d2;
  dlag[1] = sigma2_ * d3;
  for (int a = 0; a < o_; ++a) {
    const double gaa = g[a * o_ + a];
    if (gaa == 0.0) continue;
    const auto& rh = spec_.residual[a];
    const double ix = 1.0 / (rh.ell_x * rh.ell_x), it = 1.0 / (rh.ell_t * rh.ell_t);
    const double gr = gaa * residual_value(dx, dt, rh);
    const int i = 3 + n_op_ + 4 * a;
    grad[i] += gr;
    grad[i + 1] += 2.0 * gr;
    grad[i + 2] += gr * dx * dx * ix;
    grad[i + 3] += gr * dt * dt * it;
    dlag[0] -= gr * dx * ix;
    dlag[1] -= gr * dt * it;
  }
}

void KernelEvaluator::finish(Eigen::VectorXd& grad) {
  for (int k = 0; k < n_op_; ++k) {
    double acc = 0.0;
    for (std::size_t ab = 0; ab < coef_acc_.size(); ++ab)
      for (int f = 0; f < 9; ++f) acc += coef_acc_[ab][f] * dcoef_[k][ab][f];
    grad[3 + k] += sigma2_ * acc;
  }
  for (auto& c : coef_acc_) c.fill(0.0);
}

}  // namespace pegp
