#include "pegp/svgp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <ceres/ceres.h>

#include "pegp/error.hpp"

namespace pegp {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kMinLogNoise = -13.8;  // noise variance floor 1e-6
constexpr int kJitterDoublings = 10;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd build_kuu(const KernelEvaluator& ev, const Eigen::MatrixXd& z) {
  const int o = ev.outputs();
  const auto m = z.rows();
  Eigen::MatrixXd k(o * m, o * m);
  double blk[4];
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      ev.eval_total(z(i, 0) - z(j, 0), z(i, 1) - z(j, 1), blk);
      for (int a = 0; a < o; ++a)
        for (int b = 0; b < o; ++b) {
          k(a * m + i, b * m + j) = blk[a * o + b];
          k(b * m + j, a * m + i) = blk[a * o + b];
        }
    }
  return k;
}

// Rows p*O + a for every point p and output a.
Eigen::MatrixXd build_cross(const KernelEvaluator& ev, const Eigen::MatrixXd& pts, const Eigen::MatrixXd& z) {
  const int o = ev.outputs();
  const auto m = z.rows();
  Eigen::MatrixXd k(pts.rows() * o, o * m);
  double blk[4];
  for (Eigen::Index p = 0; p < pts.rows(); ++p)
    for (Eigen::Index j = 0; j < m; ++j) {
      ev.eval_total(pts(p, 0) - z(j, 0), pts(p, 1) - z(j, 1), blk);
      for (int a = 0; a < o; ++a)
        for (int b = 0; b < o; ++b) k(p * o + a, b * m + j) = blk[a * o + b];
    }
  return k;
}

struct Assembly {
  Eigen::MatrixXd kuu;
  Eigen::MatrixXd kfu;
  Eigen::VectorXd kff;
};

Assembly assemble(const KernelEvaluator& ev, const SVGPState& st, const TrainingData& d) {
  const int o = ev.outputs();
  Assembly as;
  as.kuu = build_kuu(ev, st.Z);
  const Eigen::MatrixXd kpu = build_cross(ev, d.points, st.Z);
  as.kfu.resize(d.rows(), kpu.cols());
  as.kff.resize(d.rows());
  double blk[4];
  ev.eval_total(0.0, 0.0, blk);
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    const int a = d.row_output[r];
    as.kfu.row(r) = kpu.row(d.row_point[r] * o + a);
    as.kff[r] = blk[a * o + a];
  }
  return as;
}

Eigen::MatrixXd lower(const Eigen::MatrixXd& l) { return l.triangularView<Eigen::Lower>(); }

std::string hyper_dump(const SVGPState& st) {
  std::ostringstream os;
  const auto names = kernel_param_names(st.kernel);
  const auto th = kernel_to_vector(st.kernel);
  for (Eigen::Index k = 0; k < th.size(); ++k) os << names[k] << "=" << th[k] << " ";
  for (Eigen::Index k = 0; k < st.noise.size(); ++k) os << "noise_" << k << "=" << st.noise[k] << " ";
  return os.str();
}

ElboGradient compute_elbo(const SVGPState& st, const TrainingData& d, bool want_grad, bool want_q_grad = true) {
  const KernelEvaluator ev0(st.kernel);
  const Assembly as = assemble(ev0, st, d);
  const auto ch = robust_cholesky(as.kuu, st.jitter, kJitterDoublings);
  const Eigen::MatrixXd lu = ch.llt.matrixL();
  const auto tl = lu.triangularView<Eigen::Lower>();
  const auto dim = as.kuu.rows();
  const auto n = d.rows();

  const Eigen::MatrixXd kuf = as.kfu.transpose();
  const Eigen::MatrixXd b = tl.solve(kuf);
  const Eigen::MatrixXd a = tl.transpose().solve(b);  // K_uu^-1 K_uf
  const Eigen::VectorXd mu = a.transpose() * st.m;
  const Eigen::MatrixXd ls = lower(st.S_factor);
  const Eigen::MatrixXd c = ls.transpose() * a;
  const Eigen::VectorXd qdiag = b.colwise().squaredNorm().transpose();
  const Eigen::VectorXd sdiag = c.colwise().squaredNorm().transpose();

  ElboGradient out;
  Eigen::VectorXd iw(n), r(n), sig(n);
  double e = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s2 = st.noise[d.row_output[i]];
    iw[i] = 1.0 / s2;
    r[i] = d.y[i] - mu[i];
    sig[i] = as.kff[i] - qdiag[i] + sdiag[i];
    e += -0.5 * (kLog2Pi + std::log(s2) + (r[i] * r[i] + sig[i]) * iw[i]);
  }
  const Eigen::MatrixXd linv_ls = tl.solve(ls);
  const Eigen::VectorXd linv_m = tl.solve(st.m);
  const double logdet_k = 2.0 * lu.diagonal().array().log().sum();
  const double logdet_s = 2.0 * ls.diagonal().array().abs().log().sum();
  const double kl = 0.5 * (logdet_k - logdet_s - static_cast<double>(dim) + linv_ls.squaredNorm() + linv_m.squaredNorm());
  out.expected_loglik = e;
  out.kl = kl;
  out.value = e - kl;
  if (!want_grad) return out;

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd p = ch.llt.solve(eye);
  const Eigen::VectorXd pm = p * st.m;
  const Eigen::VectorXd rw = r.cwiseProduct(iw);
  const Eigen::VectorXd pc = a * rw;  // P K_uf (r / sigma^2)
  const Eigen::MatrixXd s = ls * ls.transpose();
  const Eigen::MatrixXd sp = s * p;
  const Eigen::MatrixXd ps = sp.transpose();
  const Eigen::MatrixXd at = a.transpose();

  // d/dK_fu, d/dK_uu, d/dk_ff of the ELBO with (m, S) held fixed.
  Eigen::MatrixXd gfu = iw.asDiagonal() * (at - at * sp);
  gfu += rw * pm.transpose();
  const Eigen::MatrixXd q = a * iw.asDiagonal() * at;  // P W P
  Eigen::MatrixXd guu = -pc * pm.transpose();
  const Eigen::MatrixXd psq = ps * q;
  guu -= 0.5 * (q - psq - psq.transpose());
  guu -= 0.5 * (p - ps * p - pm * pm.transpose());

  out.log_noise = Eigen::VectorXd::Zero(st.noise.size());
  for (Eigen::Index i = 0; i < n; ++i)
    out.log_noise[d.row_output[i]] += -0.5 * (1.0 - (r[i] * r[i] + sig[i]) * iw[i]);

  if (want_q_grad) {
    out.m = pc - pm;
    const Eigen::MatrixXd ls_inv = ls.triangularView<Eigen::Lower>().solve(eye);
    const Eigen::MatrixXd s_inv = ls_inv.transpose() * ls_inv;
    const Eigen::MatrixXd gs = -0.5 * q - 0.5 * p + 0.5 * s_inv;
    out.S_factor = lower(2.0 * gs * ls);
  }

  // Chain through the kernel blocks.
  KernelEvaluator ev(st.kernel);
  const int o = ev.outputs();
  const auto mz = st.Z.rows();
  out.kernel = Eigen::VectorXd::Zero(kernel_param_count(st.kernel));
  out.Z = Eigen::MatrixXd::Zero(mz, 2);
  Eigen::MatrixXd gpu = Eigen::MatrixXd::Zero(d.points.rows() * o, dim);
  double gdiag[4] = {0.0, 0.0, 0.0, 0.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    gpu.row(d.row_point[i] * o + d.row_output[i]) += gfu.row(i);
    gdiag[d.row_output[i] * o + d.row_output[i]] += -0.5 * iw[i];
  }
  double g[4], dlag[2];
  for (Eigen::Index pt = 0; pt < d.points.rows(); ++pt)
    for (Eigen::Index j = 0; j < mz; ++j) {
      for (int aa = 0; aa < o; ++aa)
        for (int bb = 0; bb < o; ++bb) g[aa * o + bb] = gpu(pt * o + aa, bb * mz + j);
      ev.accumulate(d.points(pt, 0) - st.Z(j, 0), d.points(pt, 1) - st.Z(j, 1), g, out.kernel, dlag);
      out.Z(j, 0) -= dlag[0];
      out.Z(j, 1) -= dlag[1];
    }
  ev.accumulate(0.0, 0.0, gdiag, out.kernel, dlag);
  for (Eigen::Index i = 0; i < mz; ++i)
    for (Eigen::Index j = 0; j < mz; ++j) {
      for (int aa = 0; aa < o; ++aa)
        for (int bb = 0; bb < o; ++bb) g[aa * o + bb] = guu(aa * mz + i, bb * mz + j);
      ev.accumulate(st.Z(i, 0) - st.Z(j, 0), st.Z(i, 1) - st.Z(j, 1), g, out.kernel, dlag);
      out.Z(i, 0) += dlag[0];
      out.Z(i, 1) += dlag[1];
      out.Z(j, 0) -= dlag[0];
      out.Z(j, 1) -= dlag[1];
    }
  ev.finish(out.kernel);
  return out;
}

struct Adam {
  Eigen::VectorXd m1, m2;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  int t = 0;

  explicit Adam(Eigen::Index n) : m1(Eigen::VectorXd::Zero(n)), m2(Eigen::VectorXd::Zero(n)) {}
  // Ascent step.
  void step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double lr) {
    ++t;
    m1 = b1 * m1 + (1.0 - b1) * g;
    m2 = b2 * m2 + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    x.array() += lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
  }
};

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw validation_error("median of empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Point to_standard(const Standardizer& st, double x, double t) noexcept {
  return {st.x.standardize(x), st.t.standardize(t)};
}

TrainingData make_training_data(const ObservationSet& obs, const SVGPState& state) {
  const auto& st = state.standardizer;
  TrainingData d;
  d.outputs = state.outputs();
  std::map<std::pair<double, double>, int> index;
  std::vector<Point> pts;
  std::vector<double> y;
  auto point_of = [&](double x, double t) {
    auto [it, inserted] = index.try_emplace({t, x}, static_cast<int>(pts.size()));
    if (inserted) pts.push_back(to_standard(st, x, t));
    return it->second;
  };
  if (state.kernel.mode == KernelMode::arz) {
    for (const auto& p : pair_observations(obs)) {
      const auto [w1, w2] = map_invariants(p.rho, p.v, state.pressure);
      const int k = point_of(p.x, p.t);
      d.row_point.insert(d.row_point.end(), {k, k});
      d.row_output.insert(d.row_output.end(), {0, 1});
      y.push_back(st.task[0].standardize(w1));
      y.push_back(st.task[1].standardize(w2));
    }
  } else {
    for (const auto& e : obs.entries) {
      const int a = static_cast<int>(e.output);
      if (a >= d.outputs) continue;
      d.row_point.push_back(point_of(e.x, e.t));
      d.row_output.push_back(a);
      y.push_back(st.task[a].standardize(e.value));
    }
  }
  if (y.empty()) throw validation_error("no usable observations for this kernel mode");
  d.points.resize(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    d.points(static_cast<Eigen::Index>(k), 0) = pts[k].x;
    d.points(static_cast<Eigen::Index>(k), 1) = pts[k].t;
  }
  d.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return d;
}

Eigen::MatrixXd farthest_point_selection(const Eigen::MatrixXd& pts, int count) {
  const auto n = pts.rows();
  const auto k = std::min<Eigen::Index>(count, n);
  Eigen::MatrixXd out(k, pts.cols());
  if (k == 0) return out;
  const Eigen::RowVectorXd centroid = pts.colwise().mean();
  Eigen::Index first = 0;
  (pts.rowwise() - centroid).rowwise().squaredNorm().minCoeff(&first);
  Eigen::VectorXd dist = (pts.rowwise() - pts.row(first)).rowwise().squaredNorm();
  out.row(0) = pts.row(first);
  for (Eigen::Index s = 1; s < k; ++s) {
    Eigen::Index next = 0;
    dist.maxCoeff(&next);
    out.row(s) = pts.row(next);
    dist = dist.cwiseMin((pts.rowwise() - pts.row(next)).rowwise().squaredNorm());
  }
  return out;
}

SVGPState initialize_state(const ObservationSet& obs, const ModelOptions& opt) {
  opt.fd.validate();
  opt.pressure.validate();
  if (opt.inducing < 1) throw validation_error("inducing count must be at least 1");
  SVGPState st;
  st.jitter = opt.jitter;
  st.map = opt.map;
  st.fd = opt.fd;
  st.pressure = opt.pressure;
  st.extra_var_rho = opt.extra_var_rho;
  st.extra_var_v = opt.extra_var_v;
  st.meta.seed = opt.seed;

  std::vector<double> dens;
  for (const auto& e : obs.entries)
    if (e.output == Output::density) dens.push_back(e.value);
  if (dens.size() < 2) throw validation_error("need at least 2 density observations");
  double rho0 = opt.rho0 ? *opt.rho0 : median(dens);
  rho0 = std::clamp(rho0, 0.02 * opt.fd.rho_jam, 0.98 * opt.fd.rho_jam);
  st.eq = equilibrium_constants(rho0, opt.fd, opt.pressure, opt.tau);

  const auto space = opt.mode == KernelMode::arz ? TaskSpace::invariants : TaskSpace::physical;
  st.standardizer = fit_standardizer(obs, space, opt.pressure);
  const auto& sd = st.standardizer;
  const double sf = sd.t.scale / sd.x.scale;

  KernelSpec k;
  k.mode = opt.mode;
  k.expansion = opt.expansion;
  k.task_coupling = opt.task_coupling;
  k.base = {1.0, opt.init_ell, opt.init_ell};
  for (auto& r : k.residual) r = {opt.init_b_res, 1.0, opt.init_ell, opt.init_ell};
  auto& c = k.coef;
  c.lambda1 = st.eq.lambda1_0 * sf;
  c.lambda2 = st.eq.lambda2_0 * sf;
  c.alpha = st.eq.alpha;
  c.tau = st.eq.tau / sd.t.scale;
  c.lambda0 = st.eq.lambda0_lwr * sf;
  c.w_f = opt.w_f;
  {
    // characteristic speeds at the light and heavy ends of the observed densities
    std::vector<double> sorted = dens;
    std::sort(sorted.begin(), sorted.end());
    const auto quant = [&](double q) { return sorted[static_cast<std::size_t>(q * (sorted.size() - 1))]; };
    c.c_f = std::max(opt.fd.dflow(quant(0.1)), 0.1 * opt.fd.v_f) * sf;
    c.c_b = std::min(opt.fd.dflow(quant(0.9)), -0.1 * opt.fd.v_f) * sf;
  }
  c.coupling = opt.fd.dspeed(rho0) * sd.task[0].scale / sd.task[1].scale;
  {
    const KernelEvaluator unit(k);
    double blk[4];
    unit.eval(0.0, 0.0, blk, nullptr);
    double diag = 0.0;
    for (int a = 0; a < k.outputs(); ++a) diag += blk[a * k.outputs() + a];
    diag /= k.outputs();
    k.base.sigma = opt.init_sigma / std::sqrt(std::max(diag, 1e-300));
  }
  k.validate();
  st.kernel = k;
  st.noise = Eigen::VectorXd::Constant(k.outputs(), opt.init_noise);

  const TrainingData d = make_training_data(obs, st);
  st.Z = farthest_point_selection(d.points, opt.inducing);
  const auto dim = st.Z.rows() * k.outputs();
  st.m = Eigen::VectorXd::Zero(dim);
  st.S_factor = Eigen::MatrixXd::Identity(dim, dim);
  set_optimal_variational(st, d);
  return st;
}

double elbo(const SVGPState& state, const TrainingData& data) { return compute_elbo(state, data, false).value; }

double kl_divergence(const SVGPState& state) {
  const KernelEvaluator ev(state.kernel);
  const auto ch = robust_cholesky(build_kuu(ev, state.Z), state.jitter, kJitterDoublings);
  const Eigen::MatrixXd lu = ch.llt.matrixL();
  const auto tl = lu.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd ls = lower(state.S_factor);
  const double logdet_k = 2.0 * lu.diagonal().array().log().sum();
  const double logdet_s = 2.0 * ls.diagonal().array().abs().log().sum();
  return 0.5 * (logdet_k - logdet_s - static_cast<double>(ls.rows()) + tl.solve(ls).squaredNorm() +
                tl.solve(state.m).squaredNorm());
}

ElboGradient elbo_with_gradient(const SVGPState& state, const TrainingData& data) {
  return compute_elbo(state, data, true);
}

void set_optimal_variational(SVGPState& st, const TrainingData& d) {
  const KernelEvaluator ev(st.kernel);
  const Assembly as = assemble(ev, st, d);
  const auto ch = robust_cholesky(as.kuu, st.jitter, kJitterDoublings);
  const Eigen::MatrixXd lu = ch.llt.matrixL();
  const auto tl = lu.triangularView<Eigen::Lower>();
  const auto dim = as.kuu.rows();
  Eigen::VectorXd iw(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) iw[i] = 1.0 / st.noise[d.row_output[i]];
  const Eigen::MatrixXd b = tl.solve(as.kfu.transpose());
  const Eigen::MatrixXd bw = b * iw.cwiseSqrt().asDiagonal();
  Eigen::MatrixXd sw = Eigen::MatrixXd::Identity(dim, dim);
  sw.selfadjointView<Eigen::Lower>().rankUpdate(bw);
  sw = sw.selfadjointView<Eigen::Lower>();
  const Eigen::LLT<Eigen::MatrixXd> lsw(sw);
  // m = L_u Sw^-1 B W^-1 y,  S = L_u Sw^-1 L_u^T
  st.m = lu * lsw.solve(b * iw.cwiseProduct(d.y));
  const Eigen::MatrixXd w = lsw.matrixL().solve(lu.transpose());
  Eigen::MatrixXd s = w.transpose() * w;
  Eigen::LLT<Eigen::MatrixXd> ls(s);
  double eps = 1e-14 * s.diagonal().mean();
  while (ls.info() != Eigen::Success || !(ls.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
    s.diagonal().array() += eps;
    eps *= 10.0;
    ls.compute(s);
    if (eps > 1e-2 * s.diagonal().mean()) throw numerical_error("ill-conditioned K_uu");
  }
  st.S_factor = ls.matrixL();
}

namespace {

// Unconstrained optimization vector: [kernel | log noise | Z | m | S_factor lower (diag as log)].
class ParamLayout {
 public:
  ParamLayout(const SVGPState& st, const TrainingData& d, const ModelOptions& opt, bool with_q)
      : nk_(kernel_param_count(st.kernel)), o_(st.outputs()), mz_(st.Z.rows()), dim_(mz_ * o_),
        with_q_(with_q), train_z_(opt.train_inducing) {
    off_noise_ = nk_;
    off_z_ = off_noise_ + o_;
    off_m_ = off_z_ + (train_z_ ? 2 * mz_ : 0);
    off_l_ = off_m_ + (with_q_ ? dim_ : 0);
    total_ = off_l_ + (with_q_ ? dim_ * (dim_ + 1) / 2 : 0);
    mask_ = Eigen::VectorXd::Ones(total_);
    const auto names = kernel_param_names(st.kernel);
    for (Eigen::Index k = 0; k < nk_; ++k) {
      const auto& nm = names[static_cast<std::size_t>(k)];
      const bool is_lambda = nm == "lambda1" || nm == "lambda2" || nm == "lambda0";
      if (is_lambda && !opt.train_lambdas) mask_[k] = 0.0;
      if (nm.rfind("log_sigma_res", 0) == 0 && !opt.train_sigma_res) mask_[k] = 0.0;
    }
    lo_ = d.points.colwise().minCoeff();
    hi_ = d.points.colwise().maxCoeff();
    const Eigen::RowVector2d pad = 0.1 * (hi_ - lo_) + Eigen::RowVector2d::Constant(1e-6);
    lo_ -= pad;
    hi_ += pad;
  }

  [[nodiscard]] Eigen::Index size() const noexcept { return total_; }

  [[nodiscard]] Eigen::VectorXd pack(const SVGPState& s) const {
    Eigen::VectorXd x(total_);
    x.head(nk_) = kernel_to_vector(s.kernel);
    x.segment(off_noise_, o_) = s.noise.array().log().matrix();
    if (train_z_)
      for (Eigen::Index j = 0; j < mz_; ++j) x.segment(off_z_ + 2 * j, 2) = s.Z.row(j).transpose();
    if (with_q_) {
      x.segment(off_m_, dim_) = s.m;
      Eigen::Index k = off_l_;
      for (Eigen::Index c = 0; c < dim_; ++c)
        for (Eigen::Index r = c; r < dim_; ++r)
          x[k++] = r == c ? std::log(std::abs(s.S_factor(r, c))) : s.S_factor(r, c);
    }
    return x;
  }

  void unpack(const Eigen::VectorXd& x, SVGPState& s) const {
    s.kernel = kernel_from_vector(s.kernel, x.head(nk_));
    for (Eigen::Index a = 0; a < o_; ++a) s.noise[a] = std::exp(std::max(x[off_noise_ + a], kMinLogNoise));
    if (train_z_)
      for (Eigen::Index j = 0; j < mz_; ++j)
        for (int c = 0; c < 2; ++c) s.Z(j, c) = std::clamp(x[off_z_ + 2 * j + c], lo_[c], hi_[c]);
    if (with_q_) {
      s.m = x.segment(off_m_, dim_);
      s.S_factor.setZero(dim_, dim_);
      Eigen::Index k = off_l_;
      for (Eigen::Index c = 0; c < dim_; ++c)
        for (Eigen::Index r = c; r < dim_; ++r, ++k) s.S_factor(r, c) = r == c ? std::exp(x[k]) : x[k];
    }
  }

  // Gradient in the packed coordinates; zero for frozen or clamped entries.
  [[nodiscard]] Eigen::VectorXd gradient(const ElboGradient& g, const SVGPState& s, const Eigen::VectorXd& x) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(total_);
    v.head(nk_) = g.kernel;
    for (Eigen::Index a = 0; a < o_; ++a)
      v[off_noise_ + a] = x[off_noise_ + a] < kMinLogNoise ? 0.0 : g.log_noise[a];
    if (train_z_)
      for (Eigen::Index j = 0; j < mz_; ++j)
        for (int c = 0; c < 2; ++c) {
          const double z = x[off_z_ + 2 * j + c];
          v[off_z_ + 2 * j + c] = (z < lo_[c] || z > hi_[c]) ? 0.0 : g.Z(j, c);
        }
    if (with_q_) {
      v.segment(off_m_, dim_) = g.m;
      Eigen::Index k = off_l_;
      for (Eigen::Index c = 0; c < dim_; ++c)
        for (Eigen::Index r = c; r < dim_; ++r) v[k++] = r == c ? g.S_factor(r, c) * s.S_factor(r, c) : g.S_factor(r, c);
    }
    return v.cwiseProduct(mask_);
  }

 private:
  Eigen::Index nk_, o_, mz_, dim_;
  bool with_q_, train_z_;
  Eigen::Index off_noise_ = 0, off_z_ = 0, off_m_ = 0, off_l_ = 0, total_ = 0;
  Eigen::VectorXd mask_;
  Eigen::RowVector2d lo_, hi_;
};

struct BestTracker {
  SVGPState best;
  double value = -std::numeric_limits<double>::infinity();
  int iteration = -1;

  void offer(const SVGPState& s, double v, int it) {
    if (std::isfinite(v) && v > value) {
      value = v;
      best = s;
      iteration = it;
    }
  }
};

class NegativeElbo final : public ceres::FirstOrderFunction {
 public:
  NegativeElbo(const ParamLayout& layout, const SVGPState& base, const TrainingData& d, BestTracker& tracker,
               const int& iteration)
      : layout_(layout), base_(base), d_(d), tracker_(tracker), iteration_(iteration) {}

  bool Evaluate(const double* params, double* cost, double* gradient) const override {
    const Eigen::Map<const Eigen::VectorXd> x(params, layout_.size());
    SVGPState s = base_;
    layout_.unpack(x, s);
    try {
      set_optimal_variational(s, d_);
      const ElboGradient g = compute_elbo(s, d_, gradient != nullptr, false);
      if (!std::isfinite(g.value)) return false;
      *cost = -g.value;
      if (gradient) {
        const Eigen::VectorXd gv = layout_.gradient(g, s, x);
        if (!gv.allFinite()) return false;
        Eigen::Map<Eigen::VectorXd>(gradient, layout_.size()) = -gv;
      }
      tracker_.offer(s, g.value, iteration_);
    } catch (const Error&) {
      return false;
    }
    return true;
  }

  int NumParameters() const override { return static_cast<int>(layout_.size()); }

 private:
  const ParamLayout& layout_;
  const SVGPState& base_;
  const TrainingData& d_;
  BestTracker& tracker_;
  const int& iteration_;
};

class TraceCallback final : public ceres::IterationCallback {
 public:
  TraceCallback(std::vector<double>& trace, int& iteration, int log_every, const ProgressFn& progress)
      : trace_(trace), iteration_(iteration), log_every_(log_every), progress_(progress) {}

  ceres::CallbackReturnType operator()(const ceres::IterationSummary& s) override {
    trace_.push_back(-s.cost);
    if (progress_ && log_every_ > 0 && s.iteration % log_every_ == 0) progress_(s.iteration, -s.cost);
    iteration_ = s.iteration + 1;
    return ceres::SOLVER_CONTINUE;
  }

 private:
  std::vector<double>& trace_;
  int& iteration_;
  int log_every_;
  const ProgressFn& progress_;
};

void run_lbfgs(SVGPState& st, const TrainingData& d, const ModelOptions& opt, const ProgressFn& progress,
               BestTracker& tracker, std::vector<double>& trace) {
  const ParamLayout layout(st, d, opt, false);
  Eigen::VectorXd x = layout.pack(st);
  int iteration = 0;
  ceres::GradientProblem problem(new NegativeElbo(layout, st, d, tracker, iteration));
  ceres::GradientProblemSolver::Options o;
  o.line_search_direction_type = ceres::LBFGS;
  o.max_num_iterations = opt.iterations;
  o.logging_type = ceres::SILENT;
  o.minimizer_progress_to_stdout = false;
  o.function_tolerance = 1e-10;
  o.gradient_tolerance = 1e-8;
  o.parameter_tolerance = 1e-10;
  TraceCallback cb(trace, iteration, opt.log_every, progress);
  o.callbacks.push_back(&cb);
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(o, problem, x.data(), &summary);
  if (tracker.iteration < 0) {
    if (summary.initial_cost != summary.initial_cost || !std::isfinite(summary.initial_cost))
      throw numerical_error("non-finite ELBO at initialization: " + hyper_dump(st));
    throw numerical_error("ELBO evaluation failed at initialization: " + hyper_dump(st));
  }
}

void run_adam(SVGPState& st, const TrainingData& d, const ModelOptions& opt, const ProgressFn& progress,
              BestTracker& tracker, std::vector<double>& trace) {
  const bool adam_q = opt.variational == VariationalUpdate::adam;
  const ParamLayout layout(st, d, opt, adam_q);
  Adam adam(layout.size());
  Eigen::VectorXd x = layout.pack(st);
  for (int it = 0; it < opt.iterations; ++it) {
    ElboGradient g;
    try {
      if (!adam_q) set_optimal_variational(st, d);
      g = compute_elbo(st, d, true, adam_q);
    } catch (const Error&) {
      if (it == 0) throw;
      break;
    }
    if (!std::isfinite(g.value)) {
      if (it == 0) throw numerical_error("non-finite ELBO at initialization: " + hyper_dump(st));
      break;
    }
    trace.push_back(g.value);
    tracker.offer(st, g.value, it);
    if (progress && opt.log_every > 0 && it % opt.log_every == 0) progress(it, g.value);
    const Eigen::VectorXd gv = layout.gradient(g, st, x);
    if (!gv.allFinite()) break;
    adam.step(x, gv, opt.learning_rate);
    layout.unpack(x, st);
  }
  try {
    if (!adam_q) set_optimal_variational(st, d);
    tracker.offer(st, elbo(st, d), opt.iterations);
  } catch (const Error&) {
  }
}

}  // namespace

void optimize(SVGPState& st, const TrainingData& d, const ModelOptions& opt, const ProgressFn& progress) {
  BestTracker tracker;
  std::vector<double> trace;
  if (opt.iterations > 0) {
    if (opt.optimizer == Optimizer::lbfgs)
      run_lbfgs(st, d, opt, progress, tracker, trace);
    else
      run_adam(st, d, opt, progress, tracker, trace);
  }
  if (tracker.iteration < 0) {
    const double v = elbo(st, d);
    if (!std::isfinite(v)) throw numerical_error("non-finite ELBO at initialization: " + hyper_dump(st));
    tracker.offer(st, v, 0);
  }
  // Final q(u) at its closed-form optimum for the selected hyperparameters.
  SVGPState polished = tracker.best;
  try {
    set_optimal_variational(polished, d);
    const double v = elbo(polished, d);
    if (std::isfinite(v) && v >= tracker.value) {
      tracker.best = polished;
      tracker.value = v;
    }
  } catch (const Error&) {
  }
  st = tracker.best;
  st.meta.seed = opt.seed;
  st.meta.iterations = opt.iterations;
  st.meta.final_elbo = tracker.value;
  st.meta.best_iteration = tracker.iteration;
  st.meta.trace = std::move(trace);
}

TrainingData subset_points(const TrainingData& d, int max_points) {
  const auto p = d.points.rows();
  if (max_points <= 0 || p <= max_points) return d;
  std::vector<int> new_index(static_cast<std::size_t>(p), -1);
  TrainingData s;
  s.outputs = d.outputs;
  s.points.resize(max_points, 2);
  for (Eigen::Index k = 0; k < max_points; ++k) {
    const Eigen::Index src = k * p / max_points;
    new_index[static_cast<std::size_t>(src)] = static_cast<int>(k);
    s.points.row(k) = d.points.row(src);
  }
  std::vector<double> y;
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    const int k = new_index[static_cast<std::size_t>(d.row_point[r])];
    if (k < 0) continue;
    s.row_point.push_back(k);
    s.row_output.push_back(d.row_output[r]);
    y.push_back(d.y[r]);
  }
  s.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return s;
}

SVGPState train(const ObservationSet& obs, const ModelOptions& opt, const ProgressFn& progress) {
  SVGPState st = initialize_state(obs, opt);
  const TrainingData d = make_training_data(obs, st);
  if (opt.max_train_points <= 0 || d.points.rows() <= opt.max_train_points) {
    optimize(st, d, opt, progress);
    if (opt.final_inducing > st.inducing()) {
      st.Z = farthest_point_selection(d.points, opt.final_inducing);
      set_optimal_variational(st, d);
      st.meta.final_elbo = elbo(st, d);
    }
    return st;
  }
  optimize(st, subset_points(d, opt.max_train_points), opt, progress);
  if (opt.final_inducing > st.inducing()) st.Z = farthest_point_selection(d.points, opt.final_inducing);
  set_optimal_variational(st, d);
  st.meta.final_elbo = elbo(st, d);
  return st;
}

LatentPrediction predict_latent(const SVGPState& st, const std::vector<Point>& pts) {
  const KernelEvaluator ev(st.kernel);
  const int o = ev.outputs();
  const auto ch = robust_cholesky(build_kuu(ev, st.Z), st.jitter, kJitterDoublings);
  const auto dim = st.m.size();
  const Eigen::MatrixXd p = ch.llt.solve(Eigen::MatrixXd::Identity(dim, dim));
  const Eigen::VectorXd pm = p * st.m;
  const Eigen::MatrixXd s = st.S();
  const Eigen::MatrixXd rmat = p - p * s * p;
  Eigen::MatrixXd q(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t k = 0; k < pts.size(); ++k) q.row(static_cast<Eigen::Index>(k)) << pts[k].x, pts[k].t;
  const Eigen::MatrixXd kqu = build_cross(ev, q, st.Z);
  const Eigen::VectorXd mean = kqu * pm;
  const Eigen::MatrixXd t = kqu * rmat;
  double k0[4];
  ev.eval_total(0.0, 0.0, k0);
  LatentPrediction out;
  out.mean.resize(q.rows(), o);
  out.cov.resize(pts.size());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Eigen::MatrixXd c(o, o);
    for (int a = 0; a < o; ++a) {
      out.mean(i, a) = mean[i * o + a];
      for (int b = 0; b < o; ++b) c(a, b) = k0[a * o + b] - t.row(i * o + a).dot(kqu.row(i * o + b));
    }
    out.cov[i] = 0.5 * (c + c.transpose());
  }
  return out;
}

PhysicalMoments arz_delta_map(const Eigen::Vector2d& mu_w, const Eigen::Matrix2d& sigma_latent,
                              const Eigen::Matrix2d& sigma_noise, const PressureLaw& pl) {
  PhysicalMoments out;
  const Eigen::Matrix2d tot = sigma_latent + sigma_noise;
  const double gap = mu_w[0] - mu_w[1];
  out.v = mu_w[1];
  out.var_v_latent = sigma_latent(1, 1);
  out.var_v_obs = tot(1, 1);
  out.rho = pl.inverse(gap);
  if (gap > 0.0 && out.rho > 0.0) {
    const double g = 1.0 / pl.deriv(out.rho);  // d rho / d(w1 - w2)
    const Eigen::RowVector2d j(g, -g);
    out.var_rho_latent = j * sigma_latent * j.transpose();
    out.var_rho_obs = j * tot * j.transpose();
  } else {
    out.rho = 0.0;
    out.rho_var_valid = false;
    out.var_rho_latent = std::numeric_limits<double>::quiet_NaN();
    out.var_rho_obs = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

PhysicalMoments arz_affine_map(const Eigen::Vector2d& mu_w, const Eigen::Matrix2d& sigma_latent,
                               const Eigen::Matrix2d& sigma_noise, const PressureLaw& pl, double rho0) {
  const double dp = pl.deriv(rho0);
  if (dp == 0.0) throw numerical_error("singular pressure derivative");
  Eigen::Matrix2d a;
  a << 1.0 / dp, -1.0 / dp, 0.0, 1.0;
  const Eigen::Vector2d offset(rho0 - pl.value(rho0) / dp, 0.0);
  const Eigen::Vector2d mu = a * mu_w + offset;
  const Eigen::Matrix2d lat = a * sigma_latent * a.transpose();
  const Eigen::Matrix2d tot = a * (sigma_latent + sigma_noise) * a.transpose();
  PhysicalMoments out;
  out.rho = mu[0];
  out.v = mu[1];
  out.var_rho_latent = lat(0, 0);
  out.var_v_latent = lat(1, 1);
  out.var_rho_obs = tot(0, 0);
  out.var_v_obs = tot(1, 1);
  return out;
}

PhysicalMoments lwr_joint_map(double drho, double var_latent, double var_noise, double rho0, double v0, double dv_eq,
                              double extra_var_rho, double extra_var_v) {
  PhysicalMoments out;
  out.rho = rho0 + drho;
  out.v = v0 + dv_eq * drho;
  out.var_rho_latent = var_latent;
  out.var_v_latent = dv_eq * dv_eq * var_latent;
  out.var_rho_obs = var_latent + var_noise + extra_var_rho;
  out.var_v_obs = dv_eq * dv_eq * (var_latent + var_noise) + extra_var_v;
  return out;
}

PhysicalMoments map_to_physical_arz(const Eigen::VectorXd& mu_z, const Eigen::MatrixXd& cov_z, const SVGPState& st) {
  const auto& sd = st.standardizer;
  const Eigen::Vector2d mean(sd.task[0].mean, sd.task[1].mean);
  const Eigen::Vector2d scale(sd.task[0].scale, sd.task[1].scale);
  const Eigen::Vector2d mu_w = mean + scale.cwiseProduct(mu_z.head<2>());
  const Eigen::Matrix2d sig_w = scale.asDiagonal() * cov_z.topLeftCorner<2, 2>() * scale.asDiagonal();
  const Eigen::Matrix2d lam_w = (scale.array().square() * st.noise.head<2>().array()).matrix().asDiagonal();
  if (st.map == PhysicalMap::affine) return arz_affine_map(mu_w, sig_w, lam_w, st.pressure, st.eq.rho0);
  return arz_delta_map(mu_w, sig_w, lam_w, st.pressure);
}

PhysicalMoments map_to_physical_lwr(const Eigen::VectorXd& mu_z, const Eigen::MatrixXd& cov_z, const SVGPState& st) {
  const auto& sd = st.standardizer;
  if (st.kernel.mode == KernelMode::lwr_scalar) {
    const double s = sd.task[0].scale;
    const double drho = sd.task[0].mean - st.eq.rho0 + s * mu_z[0];
    return lwr_joint_map(drho, s * s * cov_z(0, 0), s * s * st.noise[0], st.eq.rho0, st.eq.v0,
                         st.fd.dspeed(st.eq.rho0), st.extra_var_rho, st.extra_var_v);
  }
  PhysicalMoments out;
  const double sr = sd.task[0].scale, su = sd.task[1].scale;
  out.rho = sd.task[0].destandardize(mu_z[0]);
  out.v = sd.task[1].destandardize(mu_z[1]);
  out.var_rho_latent = sr * sr * cov_z(0, 0);
  out.var_v_latent = su * su * cov_z(1, 1);
  out.var_rho_obs = sr * sr * (cov_z(0, 0) + st.noise[0]);
  out.var_v_obs = su * su * (cov_z(1, 1) + st.noise[1]);
  return out;
}

Field PredictiveField::mean_field() const {
  Field f = Field::zeros(grid);
  f.rho = mu_rho.cwiseMax(0.0);
  f.v = mu_v.cwiseMax(0.0);
  f.mask.setConstant(true);
  return f;
}

PredictiveField predict_field(const SVGPState& st, const SpaceTimeGrid& grid) {
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(grid.nx) * grid.nt);
  for (int j = 0; j < grid.nt; ++j)
    for (int i = 0; i < grid.nx; ++i) pts.push_back(to_standard(st.standardizer, grid.x_center(i), grid.t_center(j)));
  const auto lat = predict_latent(st, pts);
  PredictiveField pf;
  pf.grid = grid;
  for (auto* mtx : {&pf.mu_rho, &pf.mu_v, &pf.var_rho_latent, &pf.var_v_latent, &pf.var_rho_obs, &pf.var_v_obs})
    mtx->resize(grid.nx, grid.nt);
  pf.rho_var_valid = MaskMatrix::Constant(grid.nx, grid.nt, true);
  for (int j = 0; j < grid.nt; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      const auto k = static_cast<std::size_t>(j) * grid.nx + i;
      const Eigen::VectorXd mu = lat.mean.row(static_cast<Eigen::Index>(k)).transpose();
      const auto pm = st.kernel.mode == KernelMode::arz ? map_to_physical_arz(mu, lat.cov[k], st)
                                                        : map_to_physical_lwr(mu, lat.cov[k], st);
      pf.mu_rho(i, j) = pm.rho;
      pf.mu_v(i, j) = pm.v;
      pf.var_rho_latent(i, j) = pm.var_rho_latent;
      pf.var_v_latent(i, j) = pm.var_v_latent;
      pf.var_rho_obs(i, j) = pm.var_rho_obs;
      pf.var_v_obs(i, j) = pm.var_v_obs;
      pf.rho_var_valid(i, j) = pm.rho_var_valid;
    }
  return pf;
}

}  // namespace pegp
