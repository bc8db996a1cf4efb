#include "pegp/config.hpp"

#include <cmath>
#include <set>

#include "pegp/error.hpp"
#include "pegp/io.hpp"

namespace pegp {

namespace {

using nlohmann::json;

// Reads keys of one JSON object and rejects anything not consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw validation_error(path_ + ": expected an object");
  }
  Section(const Section&) = delete;
  ~Section() = default;

  [[nodiscard]] bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  [[nodiscard]] const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  [[nodiscard]] std::string where(const std::string& key) const { return path_ + "." + key; }

  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw validation_error(where(key) + ": expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw validation_error(where(key) + ": must be finite");
  }
  void integer(const std::string& key, int& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw validation_error(where(key) + ": expected an integer");
    out = v.get<int>();
  }
  void unsigned64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw validation_error(where(key) + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw validation_error(where(key) + ": expected true or false");
    out = v.get<bool>();
  }
  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw validation_error(where(key) + ": expected a string");
    out = v.get<std::string>();
  }
  void numbers(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw validation_error(where(key) + ": expected an array of numbers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number()) throw validation_error(where(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }
  void seeds(const std::string& key, std::vector<std::uint64_t>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw validation_error(where(key) + ": expected an array of seeds");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<std::int64_t>() < 0)
        throw validation_error(where(key) + ": seeds must be non-negative integers");
      out.push_back(e.get<std::uint64_t>());
    }
  }
  template <class Enum, class Parse>
  void choice(const std::string& key, Enum& out, Parse parse) {
    std::string s;
    string(key, s);
    if (!s.empty()) out = parse(s);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw validation_error(path_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Enum>
Enum lookup(const std::string& what, const std::string& s, std::initializer_list<std::pair<const char*, Enum>> table) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  std::string names;
  for (const auto& [name, value] : table) names += (names.empty() ? "" : ", ") + std::string(name);
  throw validation_error("unknown " + what + " '" + s + "' (expected one of: " + names + ")");
}

void parse_grid(Section& s, SpaceTimeGrid& g) {
  double x0 = g.x_min, x1 = g.x_max, t0 = g.t_min, t1 = g.t_max, dx = g.dx, dt = g.dt;
  s.number("x_min", x0);
  s.number("x_max", x1);
  s.number("t_min", t0);
  s.number("t_max", t1);
  s.number("dx", dx);
  s.number("dt", dt);
  s.finish();
  g = SpaceTimeGrid::make(x0, x1, t0, t1, dx, dt);
}

void parse_scenario(const json& j, ScenarioConfig& sc) {
  Section s(j, "scenario");
  s.choice("model", sc.model, [](const std::string& v) {
    return lookup<TruthModel>("truth model", v,
                              {{"godunov", TruthModel::godunov}, {"advection", TruthModel::advection},
                               {"arz_relax", TruthModel::arz_relax}});
  });
  if (s.has("grid")) {
    Section g(s.at("grid"), "scenario.grid");
    parse_grid(g, sc.sim.grid);
  }
  bool explicit_rho_ref = false;
  if (s.has("fd")) {
    Section f(s.at("fd"), "scenario.fd");
    f.number("v_f", sc.sim.fd.v_f);
    f.number("rho_jam", sc.sim.fd.rho_jam);
    f.finish();
  }
  if (s.has("pressure")) {
    Section p(s.at("pressure"), "scenario.pressure");
    p.choice("kind", sc.sim.pressure.kind, [](const std::string& v) {
      return lookup<PressureKind>("pressure law", v,
                                  {{"half_square", PressureKind::half_square}, {"power", PressureKind::power}});
    });
    p.number("gamma", sc.sim.pressure.gamma);
    explicit_rho_ref = p.has("rho_ref");
    p.number("rho_ref", sc.sim.pressure.rho_ref);
    p.finish();
  }
  if (!explicit_rho_ref) sc.sim.pressure.rho_ref = sc.sim.fd.rho_jam / std::sqrt(2.0 * sc.sim.fd.v_f);
  s.number("tau", sc.sim.tau);
  s.number("cfl", sc.sim.cfl);
  s.integer("refine", sc.sim.refine);
  s.number("dt_sim", sc.sim.dt_sim);
  s.choice("boundary", sc.sim.boundary, [](const std::string& v) {
    return lookup<Boundary>("boundary", v, {{"periodic", Boundary::periodic}, {"dirichlet", Boundary::dirichlet}});
  });
  if (s.has("initial")) {
    Section i(s.at("initial"), "scenario.initial");
    auto& init = sc.sim.initial;
    i.choice("kind", init.kind, [](const std::string& v) {
      return lookup<DensityProfile::Kind>("initial profile", v,
                                          {{"plateaus", DensityProfile::Kind::plateaus},
                                           {"sine", DensityProfile::Kind::sine}});
    });
    i.numbers("breaks", init.breaks);
    i.numbers("values", init.values);
    i.number("base", init.base);
    i.number("amplitude", init.amplitude);
    i.number("wavelength", init.wavelength);
    i.finish();
  }
  if (s.has("lambda0")) {
    double l = 0.0;
    s.number("lambda0", l);
    sc.lambda0 = l;
  }
  s.integer("vehicles", sc.emit.n_vehicles);
  s.number("emit_step", sc.emit.step);
  s.finish();
  if (sc.emit.n_vehicles < 0) throw validation_error("scenario.vehicles must be >= 0");
  if (!(sc.emit.step > 0.0)) throw validation_error("scenario.emit_step must be positive");
  sc.sim.validate();
}

void parse_inputs(const json& j, InputPaths& in) {
  Section s(j, "input");
  s.string("field", in.field);
  s.string("trajectories", in.trajectories);
  s.string("observations", in.observations);
  s.string("model", in.model);
  s.string("truth", in.truth);
  s.string("estimate", in.estimate);
  s.finish();
}

void parse_sampling(const json& j, SamplingConfig& sc, std::vector<std::uint64_t>& seeds) {
  Section s(j, "sampling");
  s.choice("mode", sc.mode, [](const std::string& v) {
    return lookup<SamplingMode>("sampling mode", v,
                                {{"probe", SamplingMode::probe}, {"loops", SamplingMode::loops},
                                 {"cells", SamplingMode::cells}});
  });
  s.number("penetration", sc.penetration);
  s.numbers("positions", sc.positions);
  s.number("noise_rho", sc.noise_rho);
  s.number("noise_v", sc.noise_v);
  s.seeds("seeds", seeds);
  s.finish();
  if (!(sc.penetration > 0.0 && sc.penetration <= 1.0)) throw validation_error("sampling.penetration must be in (0, 1]");
  if (sc.noise_rho < 0.0 || sc.noise_v < 0.0) throw validation_error("sampling noise must be >= 0");
  if (seeds.empty()) throw validation_error("sampling.seeds must not be empty");
}

// `kernel` is honoured only for `fit`; sweep methods fix their own kernel.
void apply_model(const json& j, ModelOptions& o, bool allow_kernel) {
  Section s(j, "model");
  if (s.has("kernel")) {
    if (!allow_kernel) {
      (void)s.at("kernel");
    } else {
      std::string k;
      s.string("kernel", k);
      o.mode = parse_kernel_mode(k);
    }
  }
  s.choice("arz_expansion", o.expansion, [](const std::string& v) {
    return lookup<ArzExpansion>("arz expansion", v,
                                {{"as_printed", ArzExpansion::as_printed}, {"full", ArzExpansion::full}});
  });
  s.choice("physical_map", o.map, [](const std::string& v) {
    return lookup<PhysicalMap>("physical map", v, {{"delta", PhysicalMap::delta}, {"affine", PhysicalMap::affine}});
  });
  s.choice("optimizer", o.optimizer, [](const std::string& v) {
    return lookup<Optimizer>("optimizer", v, {{"adam", Optimizer::adam}, {"lbfgs", Optimizer::lbfgs}});
  });
  s.choice("variational", o.variational, [](const std::string& v) {
    return lookup<VariationalUpdate>("variational update", v,
                                     {{"adam", VariationalUpdate::adam},
                                      {"closed_form", VariationalUpdate::closed_form}});
  });
  s.integer("inducing", o.inducing);
  s.integer("iterations", o.iterations);
  s.number("learning_rate", o.learning_rate);
  s.number("jitter", o.jitter);
  s.integer("max_train_points", o.max_train_points);
  s.integer("final_inducing", o.final_inducing);
  s.boolean("train_lambdas", o.train_lambdas);
  s.boolean("train_sigma_res", o.train_sigma_res);
  s.boolean("train_inducing", o.train_inducing);
  s.number("init_ell", o.init_ell);
  s.number("init_sigma", o.init_sigma);
  s.number("init_b_res", o.init_b_res);
  s.number("init_noise", o.init_noise);
  s.number("w_f", o.w_f);
  s.boolean("task_coupling", o.task_coupling);
  s.number("extra_var_rho", o.extra_var_rho);
  s.number("extra_var_v", o.extra_var_v);
  if (s.has("rho0")) {
    double r = 0.0;
    s.number("rho0", r);
    o.rho0 = r;
  }
  s.integer("log_every", o.log_every);
  s.finish();
  if (o.inducing < 1) throw validation_error("model.inducing must be >= 1");
  if (o.iterations < 0) throw validation_error("model.iterations must be >= 0");
  if (!(o.learning_rate > 0.0)) throw validation_error("model.learning_rate must be positive");
  if (!(o.jitter > 0.0)) throw validation_error("model.jitter must be positive");
  if (o.max_train_points < 0 || o.final_inducing < 0) throw validation_error("model point counts must be >= 0");
  if (!(o.init_ell > 0.0 && o.init_sigma > 0.0 && o.init_b_res >= 0.0 && o.init_noise > 0.0))
    throw validation_error("model initial hyperparameters must be positive");
  if (!(o.w_f > 0.0 && o.w_f < 1.0)) throw validation_error("model.w_f must be in (0, 1)");
  if (o.extra_var_rho < 0.0 || o.extra_var_v < 0.0) throw validation_error("model extra variances must be >= 0");
  if (o.log_every < 0) throw validation_error("model.log_every must be >= 0");
}

void parse_baselines(const json& j, MethodSettings& m) {
  Section s(j, "baselines");
  if (s.has("asm")) {
    Section a(s.at("asm"), "baselines.asm");
    auto& c = m.asm_cfg;
    a.number("sigma_x", c.sigma_x);
    a.number("tau_t", c.tau_t);
    a.number("c_free", c.c_free);
    a.number("c_cong", c.c_cong);
    a.number("v_thresh", c.v_thresh);
    a.number("dv", c.dv);
    a.finish();
    c.validate();
  }
  if (s.has("rotated_gp")) {
    Section r(s.at("rotated_gp"), "baselines.rotated_gp");
    auto& c = m.rgp;
    r.number("signal_var", c.signal_var);
    r.number("noise_var", c.noise_var);
    r.number("ell_rot_x", c.ell_rot_x);
    r.number("ell_rot_t", c.ell_rot_t);
    if (r.has("theta")) {
      double th = 0.0;
      r.number("theta", th);
      c.theta = th;
    }
    r.number("c_cong", c.c_cong);
    r.boolean("optimize", c.optimize);
    r.boolean("train_theta", c.train_theta);
    r.integer("iterations", c.iterations);
    r.number("learning_rate", c.learning_rate);
    r.integer("max_points", c.max_points);
    r.finish();
    c.validate();
  }
  s.finish();
}

void parse_sweep(const json& j, SweepConfig& sw) {
  Section s(j, "sweep");
  if (s.has("methods")) {
    const auto& arr = s.at("methods");
    if (!arr.is_array()) throw validation_error("sweep.methods: expected an array of method names");
    sw.methods.clear();
    for (const auto& e : arr) {
      if (!e.is_string()) throw validation_error("sweep.methods: expected an array of method names");
      sw.methods.push_back(parse_method(e.get<std::string>()));
    }
  }
  s.numbers("penetrations", sw.penetrations);
  s.seeds("seeds", sw.seeds);
  s.integer("jobs", sw.jobs);
  s.finish();
  for (double p : sw.penetrations)
    if (!(p > 0.0 && p <= 1.0)) throw validation_error("sweep.penetrations must lie in (0, 1]");
  if (sw.jobs < 1) throw validation_error("sweep.jobs must be >= 1");
}

void parse_diagnostics(const json& j, DiagnosticsConfig& d) {
  Section s(j, "diagnostics");
  double kmh = d.v_threshold * 3.6;
  s.number("v_threshold_kmh", kmh);
  d.v_threshold = kmh / 3.6;
  s.integer("n", d.n);
  s.unsigned64("seed", d.seed);
  s.numbers("penetrations", d.penetrations);
  if (s.has("kernels")) {
    const auto& arr = s.at("kernels");
    if (!arr.is_array()) throw validation_error("diagnostics.kernels: expected an array");
    d.modes.clear();
    for (const auto& e : arr) {
      if (!e.is_string()) throw validation_error("diagnostics.kernels: expected kernel names");
      d.modes.push_back(parse_kernel_mode(e.get<std::string>()));
    }
  }
  s.finish();
  if (d.n < 2) throw validation_error("diagnostics.n must be >= 2");
  for (double p : d.penetrations)
    if (!(p > 0.0 && p <= 1.0)) throw validation_error("diagnostics.penetrations must lie in (0, 1]");
}

void parse_units(const json& j, Units& u) {
  Section s(j, "units");
  std::string speed = "mps", density = "vpm";
  s.string("speed", speed);
  s.string("density", density);
  s.finish();
  u.speed = lookup<double>("speed unit", speed, {{"mps", 1.0}, {"kmh", 3.6}});
  u.density = lookup<double>("density unit", density, {{"vpm", 1.0}, {"vpkm", 1000.0}});
}

void sync_physics(ExperimentConfig& c) {
  for (ModelOptions* o : {&c.model, &c.methods.lwr, &c.methods.arz, &c.methods.plain}) {
    o->fd = c.scenario.sim.fd;
    o->pressure = c.scenario.sim.pressure;
    o->tau = c.scenario.sim.tau;
  }
}

}  // namespace

std::string truth_model_name(TruthModel m) {
  switch (m) {
    case TruthModel::godunov: return "godunov";
    case TruthModel::advection: return "advection";
    case TruthModel::arz_relax: return "arz_relax";
  }
  return "?";
}

std::string sampling_mode_name(SamplingMode m) {
  switch (m) {
    case SamplingMode::probe: return "probe";
    case SamplingMode::loops: return "loops";
    case SamplingMode::cells: return "cells";
  }
  return "?";
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  auto& sim = c.scenario.sim;
  sim.grid = SpaceTimeGrid::make(0.0, 600.0, 0.0, 300.0, 10.0, 5.0);
  sim.pressure.rho_ref = sim.fd.rho_jam / std::sqrt(2.0 * sim.fd.v_f);
  c.methods = default_method_settings(sim.fd, sim.pressure, sim.tau);
  c.model = c.methods.arz;
  c.sweep.methods = {Method::asm_filter, Method::rotated_gp, Method::pegp_lwr, Method::pegp_arz};
  return c;
}

ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c = default_experiment_config();
  try {
    Section root(j, "config");
    if (root.has("scenario")) parse_scenario(root.at("scenario"), c.scenario);
    if (root.has("input")) parse_inputs(root.at("input"), c.input);
    if (root.has("sampling")) parse_sampling(root.at("sampling"), c.sampling, c.sampling_seeds);
    if (root.has("model")) {
      apply_model(root.at("model"), c.model, true);
      for (ModelOptions* o : {&c.methods.lwr, &c.methods.arz, &c.methods.plain}) apply_model(root.at("model"), *o, false);
    }
    if (root.has("baselines")) parse_baselines(root.at("baselines"), c.methods);
    if (root.has("sweep")) parse_sweep(root.at("sweep"), c.sweep);
    if (root.has("diagnostics")) parse_diagnostics(root.at("diagnostics"), c.diagnostics);
    if (root.has("units")) parse_units(root.at("units"), c.units);
    if (root.has("output")) {
      Section o(root.at("output"), "output");
      o.string("dir", c.output_dir);
      o.finish();
    }
    root.finish();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("config: ") + e.what());
  }
  c.sweep.units = c.units;
  sync_physics(c);
  return c;
}

}  // namespace pegp
