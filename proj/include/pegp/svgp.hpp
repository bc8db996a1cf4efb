#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pegp/data.hpp"
#include "pegp/kernel.hpp"
#include "pegp/physics.hpp"

namespace pegp {

enum class PhysicalMap { delta, affine };
enum class VariationalUpdate { adam, closed_form };
enum class Optimizer { adam, lbfgs };

struct ModelOptions {
  KernelMode mode = KernelMode::arz;
  ArzExpansion expansion = ArzExpansion::as_printed;
  PhysicalMap map = PhysicalMap::delta;
  FundamentalDiagram fd;
  PressureLaw pressure;
  double tau = 3.0;                   // s
  std::optional<double> rho0;         // default: median observed density

  int inducing = 64;
  int iterations = 2000;
  double learning_rate = 1e-2;
  double jitter = 1e-6;
  VariationalUpdate variational = VariationalUpdate::adam;
  Optimizer optimizer = Optimizer::adam;  // lbfgs always uses the closed-form q(u)
  int max_train_points = 0;           // > 0: hyperparameters fitted on a strided subset of points
  int final_inducing = 0;             // > inducing: re-select this many inducing inputs before the final q(u)

  bool train_lambdas = false;
  bool train_sigma_res = false;
  bool train_inducing = true;

  double init_ell = 0.3;
  double init_sigma = 1.0;            // zero-lag physics standard deviation, standardized units
  double init_b_res = 0.1;
  double init_noise = 0.1;
  double w_f = 0.5;
  bool task_coupling = true;
  double extra_var_rho = 0.0;         // lwr_scalar observation noise added after the joint map
  double extra_var_v = 0.0;

  std::uint64_t seed = 0;
  int log_every = 0;                  // 0 disables progress callbacks
};

// Standardized regression rows; several rows may share a point.
struct TrainingData {
  Eigen::MatrixXd points;  // P x 2, standardized (x, t)
  std::vector<int> row_point;
  std::vector<int> row_output;
  Eigen::VectorXd y;
  int outputs = 2;

  [[nodiscard]] Eigen::Index rows() const noexcept { return y.size(); }
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int iterations = 0;
  double final_elbo = 0.0;
  int best_iteration = -1;
  std::vector<double> trace;  // ELBO per iteration
};

struct SVGPState {
  KernelSpec kernel;
  Eigen::MatrixXd Z;         // M x 2 standardized inducing inputs
  Eigen::VectorXd m;         // O*M, output-major: index a*M + j
  Eigen::MatrixXd S_factor;  // lower triangular, S = S_factor S_factor^T
  Eigen::VectorXd noise;     // per-output standardized likelihood variances
  Standardizer standardizer;
  double jitter = 1e-6;

  PhysicalMap map = PhysicalMap::delta;
  FundamentalDiagram fd;
  PressureLaw pressure;
  EquilibriumConstants eq;
  double extra_var_rho = 0.0, extra_var_v = 0.0;
  TrainingMeta meta;

  [[nodiscard]] int outputs() const noexcept { return kernel.outputs(); }
  [[nodiscard]] int inducing() const noexcept { return static_cast<int>(Z.rows()); }
  [[nodiscard]] Eigen::MatrixXd S() const { return S_factor * S_factor.transpose(); }
};

[[nodiscard]] double median(std::vector<double> v);

[[nodiscard]] Point to_standard(const Standardizer& st, double x, double t) noexcept;
[[nodiscard]] TrainingData make_training_data(const ObservationSet& obs, const SVGPState& state);
// Every row of a strided subset of at most `max_points` points.
[[nodiscard]] TrainingData subset_points(const TrainingData& data, int max_points);

// Greedy farthest-point subset of the rows of `pts`, starting near the centroid.
[[nodiscard]] Eigen::MatrixXd farthest_point_selection(const Eigen::MatrixXd& pts, int count);

// Standardizer, equilibrium constants, kernel and inducing inputs; q(u) set to its optimum.
[[nodiscard]] SVGPState initialize_state(const ObservationSet& obs, const ModelOptions& opt);

struct ElboGradient {
  double value = 0.0;
  double expected_loglik = 0.0;
  double kl = 0.0;
  Eigen::VectorXd kernel;    // w.r.t. kernel_to_vector
  Eigen::VectorXd log_noise; // w.r.t. log noise variances
  Eigen::MatrixXd Z;
  Eigen::VectorXd m;
  Eigen::MatrixXd S_factor;  // w.r.t. S_factor entries (lower triangle)
};

[[nodiscard]] double elbo(const SVGPState& state, const TrainingData& data);
[[nodiscard]] double kl_divergence(const SVGPState& state);
[[nodiscard]] ElboGradient elbo_with_gradient(const SVGPState& state, const TrainingData& data);

// Closed-form maximizer of the ELBO over (m, S) for fixed kernel, noise and Z.
void set_optimal_variational(SVGPState& state, const TrainingData& data);

using ProgressFn = std::function<void(int iteration, double elbo)>;

[[nodiscard]] SVGPState train(const ObservationSet& obs, const ModelOptions& opt, const ProgressFn& progress = {});
// Continues optimization from an initialized state.
void optimize(SVGPState& state, const TrainingData& data, const ModelOptions& opt, const ProgressFn& progress = {});

struct LatentPrediction {
  Eigen::MatrixXd mean;             // n x O, standardized latent outputs
  std::vector<Eigen::MatrixXd> cov; // n blocks of O x O
};

[[nodiscard]] LatentPrediction predict_latent(const SVGPState& state, const std::vector<Point>& standardized);

struct PhysicalMoments {
  double rho = 0.0, v = 0.0;
  double var_rho_latent = 0.0, var_v_latent = 0.0;
  double var_rho_obs = 0.0, var_v_obs = 0.0;
  bool rho_var_valid = true;
};

// Delta-method pushforward of invariant moments (already de-standardized) to (rho, v).
[[nodiscard]] PhysicalMoments arz_delta_map(const Eigen::Vector2d& mu_w, const Eigen::Matrix2d& sigma_latent,
                                            const Eigen::Matrix2d& sigma_noise, const PressureLaw& pl);
[[nodiscard]] PhysicalMoments arz_affine_map(const Eigen::Vector2d& mu_w, const Eigen::Matrix2d& sigma_latent,
                                             const Eigen::Matrix2d& sigma_noise, const PressureLaw& pl, double rho0);
// (rho, v) = m0 + F drho with F = [1, V'(rho0)]^T.
[[nodiscard]] PhysicalMoments lwr_joint_map(double drho, double var_latent, double var_noise, double rho0, double v0,
                                            double dv_eq, double extra_var_rho, double extra_var_v);

[[nodiscard]] PhysicalMoments map_to_physical_arz(const Eigen::VectorXd& mu_z, const Eigen::MatrixXd& cov_z,
                                                  const SVGPState& state);
[[nodiscard]] PhysicalMoments map_to_physical_lwr(const Eigen::VectorXd& mu_z, const Eigen::MatrixXd& cov_z,
                                                  const SVGPState& state);

struct PredictiveField {
  SpaceTimeGrid grid;
  Eigen::MatrixXd mu_rho, mu_v;
  Eigen::MatrixXd var_rho_latent, var_v_latent, var_rho_obs, var_v_obs;
  MaskMatrix rho_var_valid;

  [[nodiscard]] Field mean_field() const;  // densities and speeds clipped at zero
};

[[nodiscard]] PredictiveField predict_field(const SVGPState& state, const SpaceTimeGrid& grid);

}  // namespace pegp
