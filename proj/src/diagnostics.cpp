#include "pegp/diagnostics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "pegp/error.hpp"
#include "pegp/kernel.hpp"
#include "pegp/rng.hpp"

namespace pegp {

MeanDecomposition decompose_mean(const SVGPState& st, const std::vector<Point>& physical_points) {
  if (st.kernel.mode == KernelMode::plain_se) throw validation_error("kernel mode has no physics component to split");
  const KernelEvaluator ev(st.kernel);
  const int o = ev.outputs();
  const auto mz = st.Z.rows();
  const auto dim = st.m.size();

  Eigen::MatrixXd kuu(dim, dim);
  double blk[4];
  for (Eigen::Index i = 0; i < mz; ++i)
    for (Eigen::Index j = 0; j < mz; ++j) {
      ev.eval_total(st.Z(i, 0) - st.Z(j, 0), st.Z(i, 1) - st.Z(j, 1), blk);
      for (int a = 0; a < o; ++a)
        for (int b = 0; b < o; ++b) kuu(a * mz + i, b * mz + j) = blk[a * o + b];
    }
  const Eigen::VectorXd alpha = robust_cholesky(kuu, st.jitter, 10).llt.solve(st.m);

  const auto n = static_cast<Eigen::Index>(physical_points.size());
  MeanDecomposition d;
  d.phys = Eigen::MatrixXd::Zero(n, o);
  d.res = Eigen::MatrixXd::Zero(n, o);
  double phys[4], res[4];
  for (Eigen::Index p = 0; p < n; ++p) {
    const Point q = to_standard(st.standardizer, physical_points[p].x, physical_points[p].t);
    for (Eigen::Index j = 0; j < mz; ++j) {
      ev.eval(q.x - st.Z(j, 0), q.t - st.Z(j, 1), phys, res);
      for (int a = 0; a < o; ++a)
        for (int b = 0; b < o; ++b) {
          d.phys(p, a) += phys[a * o + b] * alpha[b * mz + j];
          d.res(p, a) += res[a * o + b] * alpha[b * mz + j];
        }
    }
  }
  for (int a = 0; a < o; ++a) {
    d.phys.col(a) *= st.standardizer.task[a].scale;
    d.res.col(a) *= st.standardizer.task[a].scale;
  }
  d.total = d.phys + d.res;
  return d;
}

Shares shares(const Eigen::VectorXd& mu, const Eigen::VectorXd& mu_phys, const Eigen::VectorXd& mu_res) {
  const double nn = mu.squaredNorm();
  if (!(nn > 0.0)) throw validation_error("degenerate mean");
  Shares s;
  s.s_phys = mu.dot(mu_phys) / nn;
  s.s_res = mu.dot(mu_res) / nn;
  s.e_phys = mu_phys.squaredNorm() / nn;
  s.e_res = mu_res.squaredNorm() / nn;
  return s;
}

namespace {
Eigen::VectorXd stack(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }
}  // namespace

double joint_ratio(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& mu_phys, const Eigen::MatrixXd& mu_res) {
  const Shares s = shares(stack(mu), stack(mu_phys), stack(mu_res));
  if (s.s_phys == 0.0) return std::numeric_limits<double>::infinity();
  return s.s_res / s.s_phys;
}

ShareReport share_report(const MeanDecomposition& d) {
  ShareReport r;
  r.m = static_cast<int>(d.total.rows());
  for (Eigen::Index a = 0; a < d.total.cols(); ++a) r.per_output.push_back(shares(d.total.col(a), d.phys.col(a), d.res.col(a)));
  r.joint_ratio = joint_ratio(d.total, d.phys, d.res);
  return r;
}

namespace {

Eigen::MatrixXd centered(const Eigen::MatrixXd& x) { return x.rowwise() - x.colwise().mean(); }

}  // namespace

double cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows() || x.rows() < 2) throw validation_error("CKA needs two matrices with the same m >= 2 rows");
  const Eigen::MatrixXd xc = centered(x), yc = centered(y);
  const double nx = (xc.transpose() * xc).norm(), ny = (yc.transpose() * yc).norm();
  if (!(nx > 0.0) || !(ny > 0.0)) throw validation_error("CKA input has zero variance");
  return std::clamp((xc.transpose() * yc).squaredNorm() / (nx * ny), 0.0, 1.0);
}

AngleResult principal_angles(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int k) {
  if (x.rows() != y.rows() || x.rows() < 2) throw validation_error("principal angles need m >= 2 matching rows");
  const Eigen::MatrixXd xc = centered(x), yc = centered(y);
  auto basis = [](const Eigen::MatrixXd& a) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    const auto r = qr.rank();
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), r);
    return q;
  };
  const Eigen::MatrixXd qx = basis(xc), qy = basis(yc);
  AngleResult out;
  const int avail = static_cast<int>(std::min(qx.cols(), qy.cols()));
  if (avail == 0) throw validation_error("principal angles: input has zero variance");
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(qx.transpose() * qy);
  const int take = std::min(k, avail);
  out.truncated = take < k;
  for (int i = 0; i < take; ++i)
    out.degrees.push_back(std::acos(std::clamp(svd.singularValues()[i], 0.0, 1.0)) * 180.0 / M_PI);
  std::sort(out.degrees.begin(), out.degrees.end());
  return out;
}

RegimeMasks regime_mask(const Field& field, double v_threshold) {
  RegimeMasks r;
  r.free = field.mask && (field.v.array() >= v_threshold);
  r.congested = field.mask && (field.v.array() < v_threshold);
  return r;
}

CellSample sample_points(const MaskMatrix& mask, int n, std::uint64_t seed) {
  const CounterRng rng(seed, 0x5a3d);
  std::vector<std::pair<std::uint64_t, std::pair<int, int>>> keyed;
  for (int j = 0; j < mask.cols(); ++j)
    for (int i = 0; i < mask.rows(); ++i)
      if (mask(i, j)) keyed.push_back({rng.at(static_cast<std::uint64_t>(j) * mask.rows() + i), {i, j}});
  CellSample s;
  s.short_mask = static_cast<int>(keyed.size()) < n;
  const auto take = std::min<std::size_t>(keyed.size(), static_cast<std::size_t>(std::max(n, 0)));
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end());
  for (std::size_t k = 0; k < take; ++k) s.cells.push_back(keyed[k].second);
  std::sort(s.cells.begin(), s.cells.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  return s;
}

std::vector<SimilarityRow> similarity_report(const SVGPState& state, const Field& reference, double v_threshold, int n,
                                             std::uint64_t seed) {
  const RegimeMasks masks = regime_mask(reference, v_threshold);
  std::vector<SimilarityRow> rows;
  const std::pair<const char*, const MaskMatrix*> regimes[] = {{"free", &masks.free}, {"congested", &masks.congested}};
  for (const auto& [name, mask] : regimes) {
    const CellSample cs = sample_points(*mask, n, seed);
    std::vector<Point> pts;
    for (const auto& [i, j] : cs.cells) pts.push_back({reference.grid.x_center(i), reference.grid.t_center(j)});
    MeanDecomposition d;
    if (pts.size() >= 2) d = decompose_mean(state, pts);
    for (int a = 0; a < state.outputs(); ++a) {
      SimilarityRow row;
      row.regime = name;
      row.output = a;
      row.n = static_cast<int>(pts.size());
      if (pts.size() < 2) {
        row.note = "too few cells";
      } else {
        try {
          row.cka = cka(d.phys.col(a), d.res.col(a));
          const auto ang = principal_angles(d.phys.col(a), d.res.col(a), 5);
          row.min_angle = ang.degrees.front();
          row.max_angle = ang.degrees.back();
          if (cs.short_mask) row.note = "mask smaller than n";
        } catch (const Error& e) {
          row.note = e.what();
          row.cka = row.min_angle = row.max_angle = std::numeric_limits<double>::quiet_NaN();
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

UQFields uq_fields(const SVGPState& state, const SpaceTimeGrid& grid) {
  UQFields u;
  u.field = predict_field(state, grid);
  // Every pushforward is linear in the covariance, so the noise-only part is the difference.
  u.floor_rho = u.field.var_rho_obs - u.field.var_rho_latent;
  u.floor_v = u.field.var_v_obs - u.field.var_v_latent;
  return u;
}

}  // namespace pegp
