#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <array>
#include <optional>
#include <vector>

#include "pegp/data.hpp"

namespace pegp {

struct ASMConfig {
  double dx = 10.0, dt = 5.0;            // default reconstruction grid, m and s
  double sigma_x = 200.0, tau_t = 10.0;  // smoothing widths, m and s
  double c_free = 80.0 / 3.6;            // m/s
  double c_cong = -15.0 / 3.6;
  double v_thresh = 60.0 / 3.6;
  double dv = 20.0 / 3.6;
  void validate() const;
};

// Two-branch adaptive smoothing of speed and density with shared branch weights.
[[nodiscard]] Field asm_reconstruct(const ObservationSet& obs, const SpaceTimeGrid& grid, const ASMConfig& cfg = {});

struct RotatedGPConfig {
  double signal_var = 0.2;   // standardized targets
  double noise_var = 0.3;
  double ell_rot_x = 150.0;  // m, along the rotated first axis
  double ell_rot_t = 13.0;   // s, along the rotated second axis
  std::optional<double> theta;  // radians in standardized coordinates; default follows the congested wave
  double c_cong = -15.0 / 3.6;  // used for the default theta
  bool optimize = true;
  bool train_theta = false;
  int iterations = 60;
  double learning_rate = 0.05;
  int max_points = 300;          // subset size for hyperparameter ascent
  bool want_variance = true;
  void validate() const;
};

struct RotatedSEHyper {
  double signal_var = 1.0, noise_var = 0.1;
  double ell_u = 1.0, ell_w = 1.0;  // along (cos, sin) and (-sin, cos)
  double theta = 0.0;
};

[[nodiscard]] double rotated_se(double dx, double dt, const RotatedSEHyper& h) noexcept;

// Exact GP regression on 2-D inputs with a rotated anisotropic SE kernel.
class DenseGP {
 public:
  DenseGP(Eigen::MatrixXd x, Eigen::VectorXd y, const RotatedSEHyper& h);
  [[nodiscard]] double log_marginal() const noexcept { return lml_; }
  // Gradient of the log marginal likelihood w.r.t. (log s2, log n2, log ell_u, log ell_w, theta).
  [[nodiscard]] Eigen::Matrix<double, 5, 1> gradient() const;
  [[nodiscard]] Eigen::VectorXd mean(const Eigen::MatrixXd& q) const;
  // Latent variance (without noise).
  [[nodiscard]] Eigen::VectorXd variance(const Eigen::MatrixXd& q) const;

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_, alpha_;
  RotatedSEHyper h_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double lml_ = 0.0;
};

// Adam ascent of the log marginal likelihood; returns the best hyperparameters seen.
[[nodiscard]] RotatedSEHyper fit_rotated_se(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, RotatedSEHyper init,
                                            int iterations, double lr, bool train_theta,
                                            std::vector<double>* trace = nullptr);

struct RotatedGPResult {
  Field mean;
  Eigen::MatrixXd var_rho, var_v;  // latent variance, physical units; empty when not requested
  std::array<RotatedSEHyper, 2> hyper;
};

[[nodiscard]] RotatedGPResult rotated_gp_reconstruct(const ObservationSet& obs, const SpaceTimeGrid& grid,
                                                     const RotatedGPConfig& cfg = {});

}  // namespace pegp
