#include <openssl/evp.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>

#include "pegp/config.hpp"
#include "pegp/diagnostics.hpp"
#include "pegp/error.hpp"
#include "pegp/io.hpp"
#include "pegp/plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pegp;

namespace {

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw numerical_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[md[k] >> 4];
    out += hex[md[k] & 15];
  }
  return out;
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> jobs;
};

// Shared state of one command: resolved config, files read and written, manifest.
class Run {
 public:
  Run(std::string command, const Globals& g) : command_(std::move(command)) {
    json raw = json::object();
    if (!g.config_path.empty()) {
      const std::string text = read(g.config_path);
      try {
        raw = json::parse(text);
      } catch (const json::parse_error& e) {
        throw validation_error("config '" + g.config_path + "' is not valid JSON: " + e.what());
      }
    }
    config_hash_ = sha256_hex(raw.dump());
    cfg = parse_experiment_config(raw);
    if (g.seed) {
      cfg.scenario.seed = *g.seed;
      cfg.sampling_seeds = {*g.seed};
      cfg.model.seed = *g.seed;
      cfg.diagnostics.seed = *g.seed;
    }
    if (g.jobs) {
      if (*g.jobs < 1) throw Error(ErrorKind::usage, "--jobs must be >= 1");
      cfg.sweep.jobs = *g.jobs;
    }
    if (!g.out.empty()) cfg.output_dir = g.out;
    fs::create_directories(cfg.output_dir);
  }

  ExperimentConfig cfg;

  [[nodiscard]] std::uint64_t seed() const { return cfg.sampling_seeds.front(); }

  std::string read(const std::string& path) {
    if (!fs::exists(path)) throw validation_error("input file '" + path + "' does not exist");
    std::string text = read_text_file(path);
    inputs_[path] = sha256_hex(text);
    return text;
  }

  void write(const std::string& name, const std::string& content) {
    const std::string path = (fs::path(cfg.output_dir) / name).string();
    write_text_file(path, content);
    outputs_[name] = sha256_hex(content);
    spdlog::info("wrote {}", path);
  }

  void write_png_file(const std::string& name, const RgbImage& img) {
    const std::string path = (fs::path(cfg.output_dir) / name).string();
    write_png(path, img);
    outputs_[name] = sha256_hex(read_text_file(path));
    spdlog::info("wrote {}", path);
  }

  [[nodiscard]] std::string path_in_out(const std::string& name) const {
    return (fs::path(cfg.output_dir) / name).string();
  }

  void finish() {
    json m;
    m["command"] = command_;
    m["version"] = PEGP_VERSION;
    m["seed"] = seed();
    m["config_sha256"] = config_hash_;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    write_text_file(path_in_out("manifest_" + command_ + ".json"), m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string config_hash_;
  std::map<std::string, std::string> inputs_, outputs_;
};

template <class F>
std::string to_csv(F&& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

Field load_field(Run& run, const std::string& path) {
  std::istringstream is(run.read(path));
  return read_field_csv(is);
}

// Truth field and trajectories from input files when given, otherwise simulated.
TruthData load_or_simulate(Run& run, const std::string& field_path, const std::string& traj_path) {
  const std::string f = field_path.empty() ? run.cfg.input.field : field_path;
  const std::string t = traj_path.empty() ? run.cfg.input.trajectories : traj_path;
  TruthData truth;
  if (f.empty()) {
    spdlog::info("simulating {} scenario", truth_model_name(run.cfg.scenario.model));
    truth = simulate(run.cfg.scenario);
    return truth;
  }
  truth.field = load_field(run, f);
  if (!t.empty()) {
    std::istringstream is(run.read(t));
    truth.trajectories = read_trajectories_csv(is);
  } else if (run.cfg.sampling.mode == SamplingMode::probe) {
    truth.trajectories = emit_trajectories(truth.field, run.cfg.scenario.seed, run.cfg.scenario.emit);
  }
  return truth;
}

ObservationSet load_or_sample(Run& run, const std::string& obs_path) {
  const std::string o = obs_path.empty() ? run.cfg.input.observations : obs_path;
  if (!o.empty()) {
    std::istringstream is(run.read(o));
    return read_observations_csv(is);
  }
  const TruthData truth = load_or_simulate(run, "", "");
  return sample_observations(truth, run.cfg.sampling, run.cfg.sampling.penetration, run.seed());
}

SVGPState load_model(Run& run, const std::string& model_path) {
  const std::string m = model_path.empty() ? run.cfg.input.model : model_path;
  if (m.empty()) throw Error(ErrorKind::usage, "a model file is required (--model or input.model)");
  const std::string text = run.read(m);
  try {
    return model_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw validation_error("model '" + m + "' is not valid JSON: " + e.what());
  }
}

SVGPState fit_logged(const ObservationSet& obs, ModelOptions opt) {
  spdlog::info("fitting {} on {} observations (M = {})", kernel_mode_name(opt.mode), obs.size(), opt.inducing);
  if (opt.log_every == 0 && spdlog::should_log(spdlog::level::debug)) opt.log_every = 10;
  return train(obs, opt, [](int it, double elbo) { spdlog::info("iteration {} elbo {:.6f}", it, elbo); });
}

void cmd_simulate(Run& run) {
  const TruthData truth = simulate(run.cfg.scenario);
  run.write("field.csv", to_csv([&](std::ostream& os) { write_field_csv(os, truth.field); }));
  run.write("trajectories.csv", to_csv([&](std::ostream& os) { write_trajectories_csv(os, truth.trajectories); }));
}

void cmd_sample(Run& run, const std::string& field, const std::string& traj) {
  const TruthData truth = load_or_simulate(run, field, traj);
  const ObservationSet obs = sample_observations(truth, run.cfg.sampling, run.cfg.sampling.penetration, run.seed());
  spdlog::info("{} observations", obs.size());
  run.write("observations.csv", to_csv([&](std::ostream& os) { write_observations_csv(os, obs); }));
}

void cmd_fit(Run& run, const std::string& obs_path) {
  const ObservationSet obs = load_or_sample(run, obs_path);
  const SVGPState st = fit_logged(obs, run.cfg.model);
  spdlog::info("final elbo {:.6f}", st.meta.final_elbo);
  run.write("model.json", model_to_json(st).dump(1) + "\n");
  run.write("training_log.csv", to_csv([&](std::ostream& os) {
              os << "iteration,elbo\n";
              for (std::size_t k = 0; k < st.meta.trace.size(); ++k) os << k << ',' << fmt9(st.meta.trace[k]) << '\n';
            }));
}

void cmd_predict(Run& run, const std::string& model_path) {
  const SVGPState st = load_model(run, model_path);
  const PredictiveField pf = predict_field(st, run.cfg.scenario.sim.grid);
  run.write("estimate.csv", to_csv([&](std::ostream& os) { write_field_csv(os, pf.mean_field()); }));
  run.write("variance.csv", to_csv([&](std::ostream& os) { write_variance_csv(os, pf); }));
}

void cmd_evaluate(Run& run, const std::string& truth_path, const std::string& est_path, const std::string& label) {
  const std::string t = truth_path.empty() ? run.cfg.input.truth : truth_path;
  const std::string e = est_path.empty() ? run.cfg.input.estimate : est_path;
  if (t.empty() || e.empty()) throw Error(ErrorKind::usage, "evaluate needs --truth and --estimate");
  MetricRow row = mae_rmse(load_field(run, t), load_field(run, e), run.cfg.units);
  row.method = label;
  row.p = run.cfg.sampling.penetration;
  row.seed = run.seed();
  spdlog::info("MAE v {:.4f}  MAE rho {:.6f}  N {}", row.mae_v, row.mae_rho, row.n);
  run.write("metrics.csv", to_csv([&](std::ostream& os) { write_metrics_csv(os, {row}); }));
}

void cmd_sweep(Run& run, const std::string& field, const std::string& traj) {
  const TruthData truth = load_or_simulate(run, field, traj);
  const auto res = penetration_sweep(truth, run.cfg.sampling, run.cfg.methods, run.cfg.sweep);
  for (const auto& r : res.rows)
    if (!r.ok()) spdlog::warn("{} p={} seed={} failed: {}", r.method, r.p, r.seed, r.error);
  run.write("results.csv", to_csv([&](std::ostream& os) { write_metrics_csv(os, res.rows); }));
  run.write("results_mean.csv", to_csv([&](std::ostream& os) { write_metrics_csv(os, res.means); }));
}

std::vector<Point> cell_centers(const SpaceTimeGrid& g) {
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(g.nx) * g.nt);
  for (int j = 0; j < g.nt; ++j)
    for (int i = 0; i < g.nx; ++i) pts.push_back({g.x_center(i), g.t_center(j)});
  return pts;
}

void cmd_diagnose(Run& run, const std::string& model_path, const std::string& field, const std::string& traj) {
  const auto& dc = run.cfg.diagnostics;
  const bool single = !model_path.empty() || !run.cfg.input.model.empty();
  const TruthData truth = load_or_simulate(run, field, traj);
  const auto pts = cell_centers(truth.field.grid);
  auto report = [&](const SVGPState& st, double p, std::vector<std::pair<double, ShareReport>>& shares,
                    std::vector<std::pair<double, std::vector<SimilarityRow>>>& sims) {
    shares.emplace_back(p, share_report(decompose_mean(st, pts)));
    sims.emplace_back(p, similarity_report(st, truth.field, dc.v_threshold, dc.n, dc.seed));
    for (const auto& r : sims.back().second)
      if (!r.note.empty()) spdlog::warn("p={} {} output {}: {}", p, r.regime, r.output, r.note);
  };
  auto emit = [&](const std::string& suffix, const auto& shares, const auto& sims) {
    run.write("shares" + suffix + ".csv", to_csv([&](std::ostream& os) { write_shares_csv(os, shares); }));
    run.write("similarity" + suffix + ".csv", to_csv([&](std::ostream& os) { write_similarity_csv(os, sims); }));
  };
  if (single) {
    std::vector<std::pair<double, ShareReport>> shares;
    std::vector<std::pair<double, std::vector<SimilarityRow>>> sims;
    report(load_model(run, model_path), run.cfg.sampling.penetration, shares, sims);
    emit("", shares, sims);
    return;
  }
  for (KernelMode mode : dc.modes) {
    if (mode == KernelMode::plain_se) throw validation_error("diagnostics need a physics kernel, not plain_se");
    ModelOptions opt = mode == KernelMode::arz ? run.cfg.methods.arz : run.cfg.methods.lwr;
    opt.mode = mode;
    opt.seed = run.seed();
    std::vector<std::pair<double, ShareReport>> shares;
    std::vector<std::pair<double, std::vector<SimilarityRow>>> sims;
    for (double p : dc.penetrations) {
      const ObservationSet obs = sample_observations(truth, run.cfg.sampling, p, run.seed());
      report(fit_logged(obs, opt), p, shares, sims);
    }
    emit("_" + kernel_mode_name(mode), shares, sims);
  }
}

GridTable load_table(Run& run, const std::string& path) {
  std::istringstream is(run.read(path));
  return read_grid_csv(is);
}

const Eigen::MatrixXd& column(const GridTable& t, const std::string& name) {
  for (std::size_t k = 0; k < t.names.size(); ++k)
    if (t.names[k] == name) return t.values[k];
  throw validation_error("CSV has no column '" + name + "'");
}

void cmd_plot(Run& run, const std::string& field_path, const std::string& var_path) {
  if (field_path.empty() && var_path.empty()) throw Error(ErrorKind::usage, "plot needs --field and/or --variance");
  std::optional<GridTable> field, var;
  if (!field_path.empty()) field = load_table(run, field_path);
  if (!var_path.empty()) var = load_table(run, var_path);
  if (field && var && !(field->grid == var->grid)) throw validation_error("field and variance grids differ");
  MaskMatrix mask;
  if (field) mask = column(*field, "mask").array() > 0.5;
  for (const char* out : {"rho", "v"}) {
    const std::string s(out);
    std::vector<HeatmapPanel> panels;
    if (field) panels.push_back({field->grid, column(*field, s == "rho" ? "rho_vpm" : "v_mps"), mask});
    if (var) {
      if (!field) panels.push_back({var->grid, column(*var, "var_" + s + "_latent"), {}});
      panels.push_back({var->grid, column(*var, "var_" + s + "_obs"), {}});
    }
    run.write_png_file(s + ".png", render_heatmaps(panels));
  }
}

int emit_error(ErrorKind kind, const std::string& message) {
  static const std::map<ErrorKind, const char*> names{
      {ErrorKind::usage, "usage"}, {ErrorKind::validation, "validation"}, {ErrorKind::numerical, "numerical"}};
  const json j{{"error", {{"code", static_cast<int>(kind)}, {"kind", names.at(kind)}, {"message", message}}}};
  std::cerr << j.dump() << std::endl;
  return static_cast<int>(kind);
}

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("pegp");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("PEGP_LOG")) {
    const auto level = spdlog::level::from_str(lvl);
    if (level == spdlog::level::off && std::string(lvl) != "off")
      throw Error(ErrorKind::usage, std::string("PEGP_LOG: unknown level '") + lvl + "'");
    spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-embedded Gaussian process traffic state estimation"};
  app.set_version_flag("--version", std::string(PEGP_VERSION));
  app.require_subcommand(1);

  Globals g;
  std::uint64_t seed = 0;
  int jobs = 1;
  app.add_option("--config", g.config_path, "experiment config JSON")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "seed for scenario, sampling, training and diagnostics");
  app.add_option("--out", g.out, "output directory (default: config output.dir or .)");
  auto* jobs_opt = app.add_option("--jobs", jobs, "sweep worker threads")->check(CLI::PositiveNumber);

  std::string field, traj, obs, model, truth, estimate, variance, label = "estimate";
  auto* simulate = app.add_subcommand("simulate", "simulate the truth field and trajectories");
  auto* sample = app.add_subcommand("sample", "sample probe, loop or cell observations");
  sample->add_option("--field", field, "truth field CSV (default: simulate)");
  sample->add_option("--trajectories", traj, "trajectory CSV");
  auto* fit = app.add_subcommand("fit", "train an SVGP model");
  fit->add_option("--obs", obs, "observation CSV (default: simulate and sample)");
  auto* predict = app.add_subcommand("predict", "predict mean and variance fields on the scenario grid");
  predict->add_option("--model", model, "model JSON");
  auto* evaluate = app.add_subcommand("evaluate", "score an estimate against the truth");
  evaluate->add_option("--truth", truth, "truth field CSV");
  evaluate->add_option("--estimate", estimate, "estimated field CSV");
  evaluate->add_option("--label", label, "method column of the metrics CSV");
  auto* sweep = app.add_subcommand("sweep", "penetration-rate sweep over methods and seeds");
  sweep->add_option("--field", field, "truth field CSV (default: simulate)");
  sweep->add_option("--trajectories", traj, "trajectory CSV");
  auto* diagnose = app.add_subcommand("diagnose", "share decomposition and subspace similarity");
  diagnose->add_option("--model", model, "model JSON (default: fit one per kernel and penetration)");
  diagnose->add_option("--field", field, "reference field CSV (default: simulate)");
  diagnose->add_option("--trajectories", traj, "trajectory CSV");
  auto* plot = app.add_subcommand("plot", "render heatmaps");
  plot->add_option("--field", field, "field CSV");
  plot->add_option("--variance", variance, "variance CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error(ErrorKind::usage, e.what());
  }
  if (*seed_opt) g.seed = seed;
  if (*jobs_opt) g.jobs = jobs;

  try {
    setup_logging();
    CLI::App* sub = app.get_subcommands().front();
    Run run(sub->get_name(), g);
    if (sub == simulate) cmd_simulate(run);
    else if (sub == sample) cmd_sample(run, field, traj);
    else if (sub == fit) cmd_fit(run, obs);
    else if (sub == predict) cmd_predict(run, model);
    else if (sub == evaluate) cmd_evaluate(run, truth, estimate, label);
    else if (sub == sweep) cmd_sweep(run, field, traj);
    else if (sub == diagnose) cmd_diagnose(run, model, field, traj);
    else if (sub == plot) cmd_plot(run, field, variance);
    run.finish();
  } catch (const Error& e) {
    return emit_error(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return emit_error(ErrorKind::validation, e.what());
  } catch (const std::exception& e) {
    return emit_error(ErrorKind::numerical, e.what());
  }
  return 0;
}
