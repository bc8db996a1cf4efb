#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "pegp/physics.hpp"

namespace pegp {

using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct SpaceTimeGrid {
  double x_min = 0.0, x_max = 600.0;
  double t_min = 0.0, t_max = 300.0;
  double dx = 10.0, dt = 5.0;
  int nx = 60, nt = 60;

  // Derives nx, nt; throws if either is below 2.
  static SpaceTimeGrid make(double x_min, double x_max, double t_min, double t_max, double dx, double dt);

  [[nodiscard]] double x_center(int i) const noexcept { return x_min + (i + 0.5) * dx; }
  [[nodiscard]] double t_center(int j) const noexcept { return t_min + (j + 0.5) * dt; }
  [[nodiscard]] bool contains(double x, double t) const noexcept {
    return x >= x_min && x <= x_max && t >= t_min && t <= t_max;
  }
  // Cell index along one axis; a coordinate on an interior boundary goes to the lower cell.
  [[nodiscard]] std::optional<int> cell_x(double x) const noexcept;
  [[nodiscard]] std::optional<int> cell_t(double t) const noexcept;
  [[nodiscard]] bool operator==(const SpaceTimeGrid& o) const noexcept;
};

struct Field {
  SpaceTimeGrid grid;
  Eigen::MatrixXd rho;  // nx x nt, veh/m
  Eigen::MatrixXd v;    // nx x nt, m/s
  MaskMatrix mask;      // valid set

  static Field zeros(const SpaceTimeGrid& g);
  [[nodiscard]] int count() const { return static_cast<int>(mask.count()); }
};

enum class Output : int { density = 0, speed = 1 };

struct Observation {
  double x = 0.0;
  double t = 0.0;
  Output output = Output::density;
  double value = 0.0;
};

struct ObservationSet {
  std::vector<Observation> entries;
  std::uint64_t seed = 0;

  void sort();  // lexicographic by (t, x, output)
  [[nodiscard]] std::size_t size() const noexcept { return entries.size(); }
};

struct TrajectorySample {
  std::int64_t vehicle_id = 0;
  double t = 0.0;
  double x = 0.0;
  double v = 0.0;
};

// Samples are grouped by vehicle and time-ordered within a vehicle.  `weight` is the
// number of real vehicles each trajectory stands for (1 for a physical population).
struct TrajectorySet {
  std::vector<TrajectorySample> samples;
  double weight = 1.0;

  [[nodiscard]] std::vector<std::int64_t> vehicle_ids() const;  // sorted, unique
};

struct AggregateStats {
  std::size_t dropped = 0;
  double vehicle_time = 0.0;  // weighted, inside the grid
};

[[nodiscard]] Field aggregate_trajectories(const TrajectorySet& traj, const SpaceTimeGrid& grid,
                                           AggregateStats* stats = nullptr);

// Vehicle ids retained at a penetration rate: the round(p n) ids with the smallest keyed hash.
[[nodiscard]] std::vector<std::int64_t> select_probe_ids(const std::vector<std::int64_t>& ids, double penetration,
                                                         std::uint64_t seed);

// Cells visited by retained probes, observed from `truth` (both outputs per cell).
[[nodiscard]] ObservationSet sample_probe(const Field& truth, const TrajectorySet& traj, double penetration,
                                          std::uint64_t seed);
// Same with the truth field aggregated from the full trajectory set.
[[nodiscard]] ObservationSet sample_probe(const TrajectorySet& traj, const SpaceTimeGrid& grid, double penetration,
                                          std::uint64_t seed);

[[nodiscard]] ObservationSet sample_loops(const Field& field, const std::vector<double>& positions);

// Random subset of valid cells, each observed in both outputs.
[[nodiscard]] ObservationSet sample_cells(const Field& field, double fraction, std::uint64_t seed);

// Adds N(0, sd^2) noise per output; deterministic in seed.
void add_observation_noise(ObservationSet& obs, double sd_rho, double sd_v, std::uint64_t seed);

struct PairedObservation {
  double x = 0.0, t = 0.0, rho = 0.0, v = 0.0;
};

// Points where both outputs are observed, ordered by (t, x).
[[nodiscard]] std::vector<PairedObservation> pair_observations(const ObservationSet& obs);

struct TaskScale {
  double mean = 0.0;
  double scale = 1.0;
  bool clamped = false;

  [[nodiscard]] double standardize(double y) const noexcept { return (y - mean) / scale; }
  [[nodiscard]] double destandardize(double z) const noexcept { return mean + scale * z; }
};

// Mean and population standard deviation (denominator n); zero spread clamps the scale to 1.
[[nodiscard]] TaskScale fit_task_scale(const std::vector<double>& values);

enum class TaskSpace { physical, invariants };

struct Standardizer {
  TaskSpace space = TaskSpace::physical;
  TaskScale x, t;                 // input coordinates
  std::array<TaskScale, 2> task;  // (rho, v) or (w1, w2)

  [[nodiscard]] bool any_clamped() const noexcept { return task[0].clamped || task[1].clamped; }
};

// Per-task standardizer.  With TaskSpace::invariants the (rho, v) pairs observed at the same
// point are first mapped to (w1, w2).
[[nodiscard]] Standardizer fit_standardizer(const ObservationSet& obs, TaskSpace space = TaskSpace::physical,
                                            const PressureLaw& pl = {});

}  // namespace pegp
