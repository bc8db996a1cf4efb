#include "pegp/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "pegp/error.hpp"

namespace pegp {

using nlohmann::json;

std::string fmt9(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v == 0.0 ? 0.0 : v);
  return buf;
}

double round9(double v) {
  if (!std::isfinite(v)) return v;
  return std::strtod(fmt9(v).c_str(), nullptr);
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw validation_error(std::string("bad number in column ") + what + ": '" + s + "'");
  return v;
}

std::vector<std::vector<std::string>> read_csv_body(std::istream& is, std::size_t cols);

// Reads a CSV with an exact header; returns rows of fields.
std::vector<std::vector<std::string>> read_csv(std::istream& is, const std::string& header) {
  std::string line;
  if (!std::getline(is, line)) throw validation_error("empty CSV, expected header " + header);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw validation_error("unexpected CSV header '" + line + "', expected '" + header + "'");
  return read_csv_body(is, split(header).size());
}

std::vector<std::vector<std::string>> read_csv_body(std::istream& is, std::size_t cols) {
  std::string line;
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != cols) throw validation_error("CSV line " + std::to_string(lineno) + ": expected " + std::to_string(cols) + " columns");
    rows.push_back(std::move(f));
  }
  return rows;
}

std::vector<double> distinct_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

double uniform_step(const std::vector<double>& c, const char* axis) {
  if (c.size() < 2) throw validation_error(std::string("field CSV needs at least 2 cells along ") + axis);
  const double d = (c.back() - c.front()) / static_cast<double>(c.size() - 1);
  for (std::size_t k = 1; k < c.size(); ++k)
    if (std::abs(c[k] - c[k - 1] - d) > 1e-6 * std::max(1.0, std::abs(d)))
      throw validation_error(std::string("field CSV cell centers are not uniform along ") + axis);
  return d;
}

int index_of(const std::vector<double>& c, double v, double step) {
  const auto it = std::lower_bound(c.begin(), c.end(), v - 1e-6 * step);
  return static_cast<int>(it - c.begin());
}

}  // namespace

void write_field_csv(std::ostream& os, const Field& f) {
  os << "x_m,t_s,rho_vpm,v_mps,mask\n";
  for (int j = 0; j < f.grid.nt; ++j)
    for (int i = 0; i < f.grid.nx; ++i)
      os << fmt9(f.grid.x_center(i)) << ',' << fmt9(f.grid.t_center(j)) << ',' << fmt9(f.rho(i, j)) << ','
         << fmt9(f.v(i, j)) << ',' << (f.mask(i, j) ? 1 : 0) << '\n';
}

Field read_field_csv(std::istream& is) {
  const auto rows = read_csv(is, "x_m,t_s,rho_vpm,v_mps,mask");
  std::vector<double> xs, ts;
  for (const auto& r : rows) {
    xs.push_back(to_double(r[0], "x_m"));
    ts.push_back(to_double(r[1], "t_s"));
  }
  const auto cx = distinct_sorted(xs), ct = distinct_sorted(ts);
  const double dx = uniform_step(cx, "x"), dt = uniform_step(ct, "t");
  SpaceTimeGrid g = SpaceTimeGrid::make(cx.front() - 0.5 * dx, cx.back() + 0.5 * dx, ct.front() - 0.5 * dt,
                                        ct.back() + 0.5 * dt, dx, dt);
  if (g.nx != static_cast<int>(cx.size()) || g.nt != static_cast<int>(ct.size()))
    throw validation_error("field CSV grid is inconsistent");
  if (rows.size() != static_cast<std::size_t>(g.nx) * g.nt) throw validation_error("field CSV must list every cell once");
  Field f = Field::zeros(g);
  MaskMatrix seen = MaskMatrix::Constant(g.nx, g.nt, false);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int i = index_of(cx, xs[k], dx), j = index_of(ct, ts[k], dt);
    if (seen(i, j)) throw validation_error("field CSV lists a cell twice");
    seen(i, j) = true;
    f.rho(i, j) = to_double(rows[k][2], "rho_vpm");
    f.v(i, j) = to_double(rows[k][3], "v_mps");
    const auto& m = rows[k][4];
    if (m != "0" && m != "1") throw validation_error("mask must be 0 or 1");
    f.mask(i, j) = m == "1";
  }
  return f;
}

GridTable read_grid_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw validation_error("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "x_m" || header[1] != "t_s")
    throw validation_error("grid CSV must start with columns x_m,t_s and hold at least one value column");
  const auto rows = read_csv_body(is, header.size());
  std::vector<double> xs, ts;
  for (const auto& r : rows) {
    xs.push_back(to_double(r[0], "x_m"));
    ts.push_back(to_double(r[1], "t_s"));
  }
  const auto cx = distinct_sorted(xs), ct = distinct_sorted(ts);
  const double dx = uniform_step(cx, "x"), dt = uniform_step(ct, "t");
  GridTable out;
  out.grid = SpaceTimeGrid::make(cx.front() - 0.5 * dx, cx.back() + 0.5 * dx, ct.front() - 0.5 * dt,
                                 ct.back() + 0.5 * dt, dx, dt);
  const auto& g = out.grid;
  if (g.nx != static_cast<int>(cx.size()) || g.nt != static_cast<int>(ct.size()) ||
      rows.size() != static_cast<std::size_t>(g.nx) * g.nt)
    throw validation_error("grid CSV must list every cell of a uniform grid once");
  out.names.assign(header.begin() + 2, header.end());
  out.values.assign(out.names.size(), Eigen::MatrixXd::Zero(g.nx, g.nt));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int i = index_of(cx, xs[k], dx), j = index_of(ct, ts[k], dt);
    for (std::size_t c = 0; c < out.names.size(); ++c)
      out.values[c](i, j) = to_double(rows[k][c + 2], out.names[c].c_str());
  }
  return out;
}

void write_trajectories_csv(std::ostream& os, const TrajectorySet& t) {
  os << "vehicle_id,t_s,x_m,v_mps\n";
  for (const auto& s : t.samples) os << s.vehicle_id << ',' << fmt9(s.t) << ',' << fmt9(s.x) << ',' << fmt9(s.v) << '\n';
}

TrajectorySet read_trajectories_csv(std::istream& is) {
  TrajectorySet t;
  for (const auto& r : read_csv(is, "vehicle_id,t_s,x_m,v_mps")) {
    TrajectorySample s;
    try {
      s.vehicle_id = std::stoll(r[0]);
    } catch (const std::exception&) {
      throw validation_error("bad vehicle_id '" + r[0] + "'");
    }
    s.t = to_double(r[1], "t_s");
    s.x = to_double(r[2], "x_m");
    s.v = to_double(r[3], "v_mps");
    t.samples.push_back(s);
  }
  std::stable_sort(t.samples.begin(), t.samples.end(), [](const auto& a, const auto& b) {
    return a.vehicle_id != b.vehicle_id ? a.vehicle_id < b.vehicle_id : a.t < b.t;
  });
  return t;
}

void write_observations_csv(std::ostream& os, const ObservationSet& obs) {
  os << "x_m,t_s,output,value\n";
  for (const auto& e : obs.entries)
    os << fmt9(e.x) << ',' << fmt9(e.t) << ',' << static_cast<int>(e.output) << ',' << fmt9(e.value) << '\n';
}

ObservationSet read_observations_csv(std::istream& is) {
  ObservationSet obs;
  for (const auto& r : read_csv(is, "x_m,t_s,output,value")) {
    Observation e;
    e.x = to_double(r[0], "x_m");
    e.t = to_double(r[1], "t_s");
    if (r[2] == "0") e.output = Output::density;
    else if (r[2] == "1") e.output = Output::speed;
    else throw validation_error("output must be 0 (density) or 1 (speed)");
    e.value = to_double(r[3], "value");
    obs.entries.push_back(e);
  }
  obs.sort();
  return obs;
}

void write_variance_csv(std::ostream& os, const PredictiveField& pf) {
  os << "x_m,t_s,var_rho_latent,var_v_latent,var_rho_obs,var_v_obs\n";
  for (int j = 0; j < pf.grid.nt; ++j)
    for (int i = 0; i < pf.grid.nx; ++i)
      os << fmt9(pf.grid.x_center(i)) << ',' << fmt9(pf.grid.t_center(j)) << ',' << fmt9(pf.var_rho_latent(i, j)) << ','
         << fmt9(pf.var_v_latent(i, j)) << ',' << fmt9(pf.var_rho_obs(i, j)) << ',' << fmt9(pf.var_v_obs(i, j)) << '\n';
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "method,p,seed,mae_v,rmse_v,mae_rho,rmse_rho,N\n";
  const double nan = std::nan("");
  for (const auto& r : rows) {
    const bool ok = r.ok();
    os << r.method << ',' << fmt9(r.p) << ',' << r.seed << ',' << fmt9(ok ? r.mae_v : nan) << ','
       << fmt9(ok ? r.rmse_v : nan) << ',' << fmt9(ok ? r.mae_rho : nan) << ',' << fmt9(ok ? r.rmse_rho : nan) << ','
       << (ok ? r.n : 0) << '\n';
  }
}

void write_shares_csv(std::ostream& os, const std::vector<std::pair<double, ShareReport>>& rows) {
  os << "p,output,S_phys,S_res,E_phys,E_res,joint_ratio,m\n";
  for (const auto& [p, rep] : rows)
    for (std::size_t a = 0; a < rep.per_output.size(); ++a) {
      const auto& s = rep.per_output[a];
      os << fmt9(p) << ',' << a << ',' << fmt9(s.s_phys) << ',' << fmt9(s.s_res) << ',' << fmt9(s.e_phys) << ','
         << fmt9(s.e_res) << ',' << fmt9(rep.joint_ratio) << ',' << rep.m << '\n';
    }
}

void write_similarity_csv(std::ostream& os, const std::vector<std::pair<double, std::vector<SimilarityRow>>>& rows) {
  os << "p,regime,output,n,cka,min_deg,max_deg,note\n";
  for (const auto& [p, list] : rows)
    for (const auto& r : list)
      os << fmt9(p) << ',' << r.regime << ',' << r.output << ',' << r.n << ',' << fmt9(r.cka) << ','
         << fmt9(r.min_angle) << ',' << fmt9(r.max_angle) << ',' << r.note << '\n';
}

namespace {

const std::map<KernelMode, std::string> kModeNames = {{KernelMode::arz, "arz"},
                                                      {KernelMode::lwr_scalar, "lwr_scalar"},
                                                      {KernelMode::lwr_bidirectional, "lwr_bidirectional"},
                                                      {KernelMode::plain_se, "plain_se"}};

template <class E>
E lookup(const std::map<E, std::string>& names, const std::string& s, const char* what) {
  for (const auto& [k, v] : names)
    if (v == s) return k;
  throw validation_error(std::string("unknown ") + what + " '" + s + "'");
}

json scale_json(const TaskScale& s) { return {{"mean", round9(s.mean)}, {"scale", round9(s.scale)}, {"clamped", s.clamped}}; }
TaskScale scale_from(const json& j) { return {j.at("mean").get<double>(), j.at("scale").get<double>(), j.at("clamped").get<bool>()}; }

json rounded(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(round9(m(r, c)));
  return a;
}

Eigen::MatrixXd matrix_from(const json& a, Eigen::Index rows, Eigen::Index cols) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(rows * cols)) throw validation_error("model matrix has wrong size");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = a[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

}  // namespace

std::string kernel_mode_name(KernelMode m) { return kModeNames.at(m); }
KernelMode parse_kernel_mode(const std::string& s) { return lookup(kModeNames, s, "kernel mode"); }

json grid_to_json(const SpaceTimeGrid& g) {
  return {{"x_min", g.x_min}, {"x_max", g.x_max}, {"t_min", g.t_min}, {"t_max", g.t_max}, {"dx", g.dx}, {"dt", g.dt}};
}

SpaceTimeGrid grid_from_json(const json& j) {
  return SpaceTimeGrid::make(j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("t_min").get<double>(),
                             j.at("t_max").get<double>(), j.at("dx").get<double>(), j.at("dt").get<double>());
}

json model_to_json(const SVGPState& st) {
  json j;
  j["schema_version"] = kModelSchemaVersion;
  const auto& k = st.kernel;
  j["kernel_mode"] = kernel_mode_name(k.mode);
  j["arz_expansion"] = k.expansion == ArzExpansion::full ? "full" : "as_printed";
  j["task_coupling"] = k.task_coupling;
  const auto names = kernel_param_names(k);
  const Eigen::VectorXd th = kernel_to_vector(k);
  json unc = json::object();
  for (Eigen::Index i = 0; i < th.size(); ++i) unc[names[i]] = round9(th[i]);
  j["hyperparameters_unconstrained"] = unc;
  const KernelSpec kr = kernel_from_vector(k, th.unaryExpr([](double v) { return round9(v); }));
  json con = {{"sigma", kr.base.sigma}, {"ell_x", kr.base.ell_x}, {"ell_t", kr.base.ell_t}};
  switch (k.mode) {
    case KernelMode::arz:
      con["lambda1"] = kr.coef.lambda1;
      con["lambda2"] = kr.coef.lambda2;
      con["alpha"] = kr.coef.alpha;
      con["tau"] = kr.coef.tau;
      break;
    case KernelMode::lwr_scalar: con["lambda0"] = kr.coef.lambda0; break;
    case KernelMode::lwr_bidirectional:
      con["w_f"] = kr.coef.w_f;
      con["c_f"] = kr.coef.c_f;
      con["c_b"] = kr.coef.c_b;
      con["coupling"] = kr.coef.coupling;
      break;
    case KernelMode::plain_se: break;
  }
  json res = json::array();
  for (int a = 0; a < k.outputs(); ++a) {
    const auto& r = kr.residual[a];
    res.push_back({{"b_res", r.b_res}, {"sigma_res", r.sigma_res}, {"ell_x", r.ell_x}, {"ell_t", r.ell_t}});
  }
  con["residual"] = res;
  j["hyperparameters"] = con;
  j["noise"] = rounded(st.noise);
  j["inducing"] = st.inducing();
  j["Z"] = rounded(st.Z);
  j["m"] = rounded(st.m);
  j["S_factor"] = rounded(st.S_factor);
  j["jitter"] = st.jitter;
  const auto& sd = st.standardizer;
  j["standardizer"] = {{"space", sd.space == TaskSpace::invariants ? "invariants" : "physical"},
                       {"x", scale_json(sd.x)},
                       {"t", scale_json(sd.t)},
                       {"task", {scale_json(sd.task[0]), scale_json(sd.task[1])}}};
  j["physical_map"] = st.map == PhysicalMap::affine ? "affine" : "delta";
  j["fd"] = {{"v_f", st.fd.v_f}, {"rho_jam", st.fd.rho_jam}};
  j["pressure"] = {{"kind", st.pressure.kind == PressureKind::power ? "power" : "half_square"},
                   {"gamma", st.pressure.gamma},
                   {"rho_ref", st.pressure.rho_ref}};
  const auto& e = st.eq;
  j["equilibrium"] = {{"rho0", round9(e.rho0)},   {"v0", round9(e.v0)},       {"lambda1_0", round9(e.lambda1_0)},
                      {"lambda2_0", round9(e.lambda2_0)}, {"alpha", round9(e.alpha)}, {"beta", round9(e.beta)},
                      {"tau", round9(e.tau)},     {"lambda0", round9(e.lambda0_lwr)}};
  j["extra_var"] = {round9(st.extra_var_rho), round9(st.extra_var_v)};
  j["training"] = {{"seed", st.meta.seed},
                   {"iterations", st.meta.iterations},
                   {"final_elbo", round9(st.meta.final_elbo)},
                   {"best_iteration", st.meta.best_iteration}};
  return j;
}

SVGPState model_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kModelSchemaVersion) throw validation_error("unsupported model schema_version");
    SVGPState st;
    KernelSpec like;
    like.mode = parse_kernel_mode(j.at("kernel_mode").get<std::string>());
    like.expansion = j.at("arz_expansion").get<std::string>() == "full" ? ArzExpansion::full : ArzExpansion::as_printed;
    like.task_coupling = j.at("task_coupling").get<bool>();
    const auto names = kernel_param_names(like);
    Eigen::VectorXd th(static_cast<Eigen::Index>(names.size()));
    const auto& unc = j.at("hyperparameters_unconstrained");
    for (std::size_t i = 0; i < names.size(); ++i) th[static_cast<Eigen::Index>(i)] = unc.at(names[i]).get<double>();
    st.kernel = kernel_from_vector(like, th);
    st.kernel.validate();
    const int o = st.kernel.outputs();
    const auto mz = static_cast<Eigen::Index>(j.at("inducing").get<int>());
    st.noise = matrix_from(j.at("noise"), o, 1);
    st.Z = matrix_from(j.at("Z"), mz, 2);
    st.m = matrix_from(j.at("m"), o * mz, 1);
    st.S_factor = matrix_from(j.at("S_factor"), o * mz, o * mz);
    st.jitter = j.at("jitter").get<double>();
    const auto& sd = j.at("standardizer");
    st.standardizer.space = sd.at("space").get<std::string>() == "invariants" ? TaskSpace::invariants : TaskSpace::physical;
    st.standardizer.x = scale_from(sd.at("x"));
    st.standardizer.t = scale_from(sd.at("t"));
    st.standardizer.task[0] = scale_from(sd.at("task").at(0));
    st.standardizer.task[1] = scale_from(sd.at("task").at(1));
    st.map = j.at("physical_map").get<std::string>() == "affine" ? PhysicalMap::affine : PhysicalMap::delta;
    st.fd = {j.at("fd").at("v_f").get<double>(), j.at("fd").at("rho_jam").get<double>()};
    const auto& pl = j.at("pressure");
    st.pressure.kind = pl.at("kind").get<std::string>() == "power" ? PressureKind::power : PressureKind::half_square;
    st.pressure.gamma = pl.at("gamma").get<double>();
    st.pressure.rho_ref = pl.at("rho_ref").get<double>();
    const auto& e = j.at("equilibrium");
    st.eq = {e.at("rho0").get<double>(),  e.at("v0").get<double>(),    e.at("lambda1_0").get<double>(),
             e.at("lambda2_0").get<double>(), e.at("alpha").get<double>(), e.at("beta").get<double>(),
             e.at("tau").get<double>(),   e.at("lambda0").get<double>()};
    st.extra_var_rho = j.at("extra_var").at(0).get<double>();
    st.extra_var_v = j.at("extra_var").at(1).get<double>();
    const auto& tr = j.at("training");
    st.meta.seed = tr.at("seed").get<std::uint64_t>();
    st.meta.iterations = tr.at("iterations").get<int>();
    st.meta.final_elbo = tr.at("final_elbo").get<double>();
    st.meta.best_iteration = tr.at("best_iteration").get<int>();
    return st;
  } catch (const json::exception& e) {
    throw validation_error(std::string("malformed model file: ") + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot read file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw validation_error("cannot write file '" + path + "'");
  out << content;
  if (!out) throw validation_error("write failed for '" + path + "'");
}

}  // namespace pegp
