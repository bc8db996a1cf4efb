#include "pegp/experiment.hpp"

#include <atomic>
#include <cmath>
#include <map>
#include <thread>

#include "pegp/error.hpp"

namespace pegp {

TruthData simulate(const ScenarioConfig& sc) {
  sc.sim.validate();
  TruthData out;
  switch (sc.model) {
    case TruthModel::godunov:
      out.field = godunov_lwr(sc.sim);
      break;
    case TruthModel::arz_relax:
      out.field = arz_relax(sc.sim);
      break;
    case TruthModel::advection: {
      double lambda0;
      if (sc.lambda0) {
        lambda0 = *sc.lambda0;
      } else {
        const auto& g = sc.sim.grid;
        double mean = 0.0;
        for (int i = 0; i < g.nx; ++i) mean += sc.sim.initial(g.x_center(i), g.x_min);
        lambda0 = sc.sim.fd.dflow(mean / g.nx);
      }
      out.field = linear_advection_field(sc.sim, lambda0);
      break;
    }
  }
  out.trajectories = emit_trajectories(out.field, sc.seed, sc.emit);
  return out;
}

ObservationSet sample_observations(const TruthData& truth, const SamplingConfig& cfg, double p, std::uint64_t seed) {
  ObservationSet obs;
  switch (cfg.mode) {
    case SamplingMode::probe:
      obs = sample_probe(truth.field, truth.trajectories, p, seed);
      break;
    case SamplingMode::loops:
      obs = sample_loops(truth.field, cfg.positions);
      obs.seed = seed;
      break;
    case SamplingMode::cells:
      obs = sample_cells(truth.field, p, seed);
      break;
  }
  if (cfg.noise_rho > 0.0 || cfg.noise_v > 0.0) add_observation_noise(obs, cfg.noise_rho, cfg.noise_v, seed);
  return obs;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::asm_filter: return "asm";
    case Method::rotated_gp: return "rotated_gp";
    case Method::pegp_lwr: return "pegp_lwr";
    case Method::pegp_arz: return "pegp_arz";
    case Method::plain_gp: return "plain_gp";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::asm_filter, Method::rotated_gp, Method::pegp_lwr, Method::pegp_arz, Method::plain_gp})
    if (method_name(m) == name) return m;
  throw validation_error("unknown method '" + name + "'");
}

MethodSettings default_method_settings(const FundamentalDiagram& fd, const PressureLaw& pl, double tau) {
  MethodSettings s;
  ModelOptions base;
  base.fd = fd;
  base.pressure = pl;
  base.tau = tau;
  base.inducing = 100;
  base.iterations = 100;
  base.optimizer = Optimizer::lbfgs;
  base.variational = VariationalUpdate::closed_form;
  base.max_train_points = 300;
  base.final_inducing = 400;
  s.lwr = s.arz = s.plain = base;
  s.lwr.mode = KernelMode::lwr_bidirectional;
  s.arz.mode = KernelMode::arz;
  s.plain.mode = KernelMode::plain_se;
  s.rgp.want_variance = false;
  return s;
}

Field run_method(Method m, const ObservationSet& obs, const SpaceTimeGrid& grid, const MethodSettings& s,
                 std::uint64_t seed) {
  auto fit = [&](ModelOptions opt) {
    opt.seed = seed;
    return predict_field(train(obs, opt), grid).mean_field();
  };
  switch (m) {
    case Method::asm_filter: return asm_reconstruct(obs, grid, s.asm_cfg);
    case Method::rotated_gp: return rotated_gp_reconstruct(obs, grid, s.rgp).mean;
    case Method::pegp_lwr: return fit(s.lwr);
    case Method::pegp_arz: return fit(s.arz);
    case Method::plain_gp: return fit(s.plain);
  }
  throw validation_error("unknown method");
}

SweepResult penetration_sweep(const TruthData& truth, const SamplingConfig& sampling, const MethodSettings& settings,
                              const SweepConfig& cfg) {
  if (cfg.methods.empty() || cfg.penetrations.empty() || cfg.seeds.empty())
    throw validation_error("sweep needs methods, penetrations and seeds");
  struct Job {
    Method method;
    std::size_t p_index, seed_index;
  };
  std::vector<Job> jobs;
  for (Method m : cfg.methods)
    for (std::size_t pi = 0; pi < cfg.penetrations.size(); ++pi)
      for (std::size_t si = 0; si < cfg.seeds.size(); ++si) jobs.push_back({m, pi, si});

  SweepResult res;
  res.rows.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      const Job& jb = jobs[k];
      const double p = cfg.penetrations[jb.p_index];
      const std::uint64_t seed = cfg.seeds[jb.seed_index];
      MetricRow row;
      try {
        const ObservationSet obs = sample_observations(truth, sampling, p, seed);
        row = mae_rmse(truth.field, run_method(jb.method, obs, truth.field.grid, settings, seed), cfg.units);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      row.method = method_name(jb.method);
      row.p = p;
      row.seed = seed;
      res.rows[k] = row;
    }
  };
  const int n_threads = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  const std::size_t per_method = cfg.penetrations.size() * cfg.seeds.size();
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
    for (std::size_t pi = 0; pi < cfg.penetrations.size(); ++pi) {
      MetricRow mean;
      mean.method = method_name(cfg.methods[mi]);
      mean.p = cfg.penetrations[pi];
      int ok = 0;
      for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        const MetricRow& r = res.rows[mi * per_method + pi * cfg.seeds.size() + si];
        if (!r.ok()) continue;
        ++ok;
        mean.mae_v += r.mae_v;
        mean.rmse_v += r.rmse_v;
        mean.mae_rho += r.mae_rho;
        mean.rmse_rho += r.rmse_rho;
        mean.n += r.n;
      }
      if (ok == 0) {
        mean.error = "all seeds failed";
      } else {
        mean.mae_v /= ok;
        mean.rmse_v /= ok;
        mean.mae_rho /= ok;
        mean.rmse_rho /= ok;
        mean.n /= ok;
      }
      res.means.push_back(mean);
    }
  return res;
}

}  // namespace pegp
