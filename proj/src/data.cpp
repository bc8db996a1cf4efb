#include "pegp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "pegp/error.hpp"
#include "pegp/rng.hpp"

namespace pegp {

namespace {

constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;
constexpr std::uint64_t kCellStream = 0x63656c6c73ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

std::optional<int> axis_cell(double v, double lo, double hi, double d, int n) {
  if (!(v >= lo && v <= hi)) return std::nullopt;
  int k = static_cast<int>(std::ceil((v - lo) / d)) - 1;
  return std::clamp(k, 0, n - 1);
}

// Indices of the round(fraction * n) smallest hashed keys, returned in ascending index order.
std::vector<std::size_t> keyed_subset(const std::vector<std::int64_t>& keys_in, double fraction, std::uint64_t seed,
                                      std::uint64_t stream) {
  if (!(fraction > 0.0) || fraction > 1.0) throw validation_error("penetration must lie in (0, 1]");
  const CounterRng rng(seed, stream);
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(keys_in.size());
  for (std::size_t i = 0; i < keys_in.size(); ++i)
    keyed[i] = {rng.at(static_cast<std::uint64_t>(keys_in[i])), i};
  std::sort(keyed.begin(), keyed.end());
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(keys_in.size())));
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(keyed[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

void push_cell(ObservationSet& obs, const Field& f, int i, int j) {
  const double x = f.grid.x_center(i), t = f.grid.t_center(j);
  obs.entries.push_back({x, t, Output::density, f.rho(i, j)});
  obs.entries.push_back({x, t, Output::speed, f.v(i, j)});
}

}  // namespace

SpaceTimeGrid SpaceTimeGrid::make(double x_min, double x_max, double t_min, double t_max, double dx, double dt) {
  if (!(dx > 0.0) || !(dt > 0.0)) throw validation_error("grid spacing must be positive");
  SpaceTimeGrid g;
  g.x_min = x_min;
  g.x_max = x_max;
  g.t_min = t_min;
  g.t_max = t_max;
  g.dx = dx;
  g.dt = dt;
  g.nx = static_cast<int>(std::lround((x_max - x_min) / dx));
  g.nt = static_cast<int>(std::lround((t_max - t_min) / dt));
  if (g.nx < 2 || g.nt < 2) throw validation_error("grid needs at least 2 cells per axis");
  return g;
}

std::optional<int> SpaceTimeGrid::cell_x(double x) const noexcept { return axis_cell(x, x_min, x_max, dx, nx); }
std::optional<int> SpaceTimeGrid::cell_t(double t) const noexcept { return axis_cell(t, t_min, t_max, dt, nt); }

bool SpaceTimeGrid::operator==(const SpaceTimeGrid& o) const noexcept {
  return nx == o.nx && nt == o.nt && x_min == o.x_min && x_max == o.x_max && t_min == o.t_min && t_max == o.t_max &&
         dx == o.dx && dt == o.dt;
}

Field Field::zeros(const SpaceTimeGrid& g) {
  Field f;
  f.grid = g;
  f.rho = Eigen::MatrixXd::Zero(g.nx, g.nt);
  f.v = Eigen::MatrixXd::Zero(g.nx, g.nt);
  f.mask = MaskMatrix::Constant(g.nx, g.nt, false);
  return f;
}

void ObservationSet::sort() {
  std::stable_sort(entries.begin(), entries.end(), [](const Observation& a, const Observation& b) {
    return std::make_tuple(a.t, a.x, static_cast<int>(a.output)) <
           std::make_tuple(b.t, b.x, static_cast<int>(b.output));
  });
}

std::vector<std::int64_t> TrajectorySet::vehicle_ids() const {
  std::vector<std::int64_t> ids;
  for (const auto& s : samples)
    if (ids.empty() || ids.back() != s.vehicle_id) ids.push_back(s.vehicle_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

Field aggregate_trajectories(const TrajectorySet& traj, const SpaceTimeGrid& grid, AggregateStats* stats) {
  if (traj.samples.empty()) throw validation_error("no data");
  Field f = Field::zeros(grid);
  Eigen::MatrixXd speed_sum = Eigen::MatrixXd::Zero(grid.nx, grid.nt);
  Eigen::MatrixXi count = Eigen::MatrixXi::Zero(grid.nx, grid.nt);
  Eigen::MatrixXd vtime = Eigen::MatrixXd::Zero(grid.nx, grid.nt);
  AggregateStats st;
  const auto& s = traj.samples;
  std::vector<double> cuts;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto ci = grid.cell_x(s[k].x);
    const auto cj = grid.cell_t(s[k].t);
    if (ci && cj) {
      speed_sum(*ci, *cj) += s[k].v;
      count(*ci, *cj) += 1;
    } else {
      ++st.dropped;
    }
    // Straight segment to the next sample of the same vehicle, split where it crosses cell edges.
    if (k + 1 < s.size() && s[k + 1].vehicle_id == s[k].vehicle_id) {
      const double x0 = s[k].x, t0 = s[k].t, ddx = s[k + 1].x - x0, ddt = s[k + 1].t - t0;
      cuts.assign({0.0, 1.0});
      const auto add_cuts = [&](double a, double d, double lo, double step, int cells) {
        if (d == 0.0) return;
        const double u0 = (a - lo) / step, u1 = (a + d - lo) / step;
        for (double e = std::ceil(std::min(u0, u1)); e <= std::floor(std::max(u0, u1)); e += 1.0)
          if (e >= 0.0 && e <= cells) cuts.push_back((e - u0) / (u1 - u0));
      };
      add_cuts(x0, ddx, grid.x_min, grid.dx, grid.nx);
      add_cuts(t0, ddt, grid.t_min, grid.dt, grid.nt);
      std::sort(cuts.begin(), cuts.end());
      for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        const double a = std::clamp(cuts[c], 0.0, 1.0), b = std::clamp(cuts[c + 1], 0.0, 1.0);
        if (!(b > a)) continue;
        const double mid = 0.5 * (a + b);
        const auto mi = grid.cell_x(x0 + mid * ddx);
        const auto mj = grid.cell_t(t0 + mid * ddt);
        if (!mi || !mj) continue;
        const double dur = (b - a) * ddt * traj.weight;
        vtime(*mi, *mj) += dur;
        st.vehicle_time += dur;
      }
    }
  }
  const double area = grid.dx * grid.dt;
  for (int j = 0; j < grid.nt; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      f.rho(i, j) = vtime(i, j) / area;
      if (count(i, j) > 0) {
        f.v(i, j) = speed_sum(i, j) / count(i, j);
        f.mask(i, j) = true;
      }
    }
  if (stats) *stats = st;
  return f;
}

std::vector<std::int64_t> select_probe_ids(const std::vector<std::int64_t>& ids, double penetration,
                                           std::uint64_t seed) {
  const auto idx = keyed_subset(ids, penetration, seed, kProbeStream);
  std::vector<std::int64_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ids[i]);
  std::sort(out.begin(), out.end());
  return out;
}

ObservationSet sample_probe(const Field& truth, const TrajectorySet& traj, double penetration, std::uint64_t seed) {
  const auto kept = select_probe_ids(traj.vehicle_ids(), penetration, seed);
  const auto& g = truth.grid;
  MaskMatrix visited = MaskMatrix::Constant(g.nx, g.nt, false);
  for (const auto& s : traj.samples) {
    if (!std::binary_search(kept.begin(), kept.end(), s.vehicle_id)) continue;
    const auto ci = g.cell_x(s.x);
    const auto cj = g.cell_t(s.t);
    if (ci && cj) visited(*ci, *cj) = true;
  }
  ObservationSet obs;
  obs.seed = seed;
  for (int j = 0; j < g.nt; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (visited(i, j) && truth.mask(i, j)) push_cell(obs, truth, i, j);
  obs.sort();
  return obs;
}

ObservationSet sample_probe(const TrajectorySet& traj, const SpaceTimeGrid& grid, double penetration,
                            std::uint64_t seed) {
  return sample_probe(aggregate_trajectories(traj, grid), traj, penetration, seed);
}

ObservationSet sample_loops(const Field& field, const std::vector<double>& positions) {
  const auto& g = field.grid;
  ObservationSet obs;
  for (double p : positions) {
    const auto ci = g.cell_x(p);
    if (!ci) throw validation_error("loop detector position outside grid");
    for (int j = 0; j < g.nt; ++j)
      if (field.mask(*ci, j)) push_cell(obs, field, *ci, j);
  }
  obs.sort();
  return obs;
}

ObservationSet sample_cells(const Field& field, double fraction, std::uint64_t seed) {
  const auto& g = field.grid;
  std::vector<std::int64_t> cells;
  for (int j = 0; j < g.nt; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (field.mask(i, j)) cells.push_back(static_cast<std::int64_t>(j) * g.nx + i);
  ObservationSet obs;
  obs.seed = seed;
  for (auto k : keyed_subset(cells, fraction, seed, kCellStream)) {
    const auto c = cells[k];
    push_cell(obs, field, static_cast<int>(c % g.nx), static_cast<int>(c / g.nx));
  }
  obs.sort();
  return obs;
}

void add_observation_noise(ObservationSet& obs, double sd_rho, double sd_v, std::uint64_t seed) {
  CounterRng rng(seed, kNoiseStream);
  for (auto& e : obs.entries) e.value += (e.output == Output::density ? sd_rho : sd_v) * rng.normal();
}

std::vector<PairedObservation> pair_observations(const ObservationSet& obs) {
  std::vector<Observation> sorted = obs.entries;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Observation& a, const Observation& b) {
    return std::make_tuple(a.t, a.x, static_cast<int>(a.output)) <
           std::make_tuple(b.t, b.x, static_cast<int>(b.output));
  });
  std::vector<PairedObservation> out;
  for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
    const auto& a = sorted[k];
    const auto& b = sorted[k + 1];
    if (a.t == b.t && a.x == b.x && a.output == Output::density && b.output == Output::speed) {
      out.push_back({a.x, a.t, a.value, b.value});
      ++k;
    }
  }
  return out;
}

TaskScale fit_task_scale(const std::vector<double>& values) {
  TaskScale s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 1e-12 * std::max(std::abs(s.mean), 1e-300))) {
    s.scale = 1.0;
    s.clamped = true;
  } else {
    s.scale = sd;
  }
  return s;
}

Standardizer fit_standardizer(const ObservationSet& obs, TaskSpace space, const PressureLaw& pl) {
  Standardizer st;
  st.space = space;
  std::vector<double> xs, ts;
  std::array<std::vector<double>, 2> vals;
  if (space == TaskSpace::physical) {
    for (const auto& e : obs.entries) {
      xs.push_back(e.x);
      ts.push_back(e.t);
      vals[static_cast<int>(e.output)].push_back(e.value);
    }
  } else {
    for (const auto& p : pair_observations(obs)) {
      xs.push_back(p.x);
      ts.push_back(p.t);
      const auto [w1, w2] = map_invariants(p.rho, p.v, pl);
      vals[0].push_back(w1);
      vals[1].push_back(w2);
    }
  }
  if (vals[0].size() < 2 || (!vals[1].empty() && vals[1].size() < 2)) throw validation_error("standardizer needs at least 2 observations per task");
  st.x = fit_task_scale(xs);
  st.t = fit_task_scale(ts);
  st.task[0] = fit_task_scale(vals[0]);
  st.task[1] = fit_task_scale(vals[1]);
  return st;
}

}  // namespace pegp
