#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <array>
#include <string>
#include <vector>

namespace pegp {

enum class KernelMode { arz, lwr_scalar, lwr_bidirectional, plain_se };
enum class ArzExpansion { as_printed, full };

struct SEHyper {
  double sigma = 1.0;
  double ell_x = 0.3;
  double ell_t = 0.3;
};

struct ResidualHyper {
  double b_res = 0.1;
  double sigma_res = 1.0;
  double ell_x = 0.3;
  double ell_t = 0.3;
};

// Operator coefficients in the kernel's (standardized) coordinates.  A wave speed c in m/s
// becomes c * s_t / s_x; a relaxation time tau in s becomes tau / s_t.
struct OperatorCoefficients {
  double lambda1 = 0.0, lambda2 = 0.0;  // arz characteristic speeds
  double alpha = 0.0;                   // arz; beta = 1 + alpha
  double tau = 1.0;                     // arz relaxation time
  double lambda0 = 0.0;                 // lwr_scalar wave speed
  double w_f = 0.5;                     // lwr_bidirectional forward weight
  double c_f = 1.0, c_b = -1.0;         // lwr_bidirectional wave speeds
  double coupling = 0.0;                // lwr_bidirectional speed-per-density slope v'

  [[nodiscard]] double relax_a() const noexcept { return alpha / tau; }
  [[nodiscard]] double relax_b() const noexcept { return (1.0 + alpha) / tau; }
};

struct KernelSpec {
  KernelMode mode = KernelMode::arz;
  ArzExpansion expansion = ArzExpansion::as_printed;
  SEHyper base;
  std::array<ResidualHyper, 2> residual;
  OperatorCoefficients coef;
  bool task_coupling = true;  // lwr_bidirectional: rank-one [1, v'] coupling across outputs

  [[nodiscard]] int outputs() const noexcept { return mode == KernelMode::lwr_scalar ? 1 : 2; }
  void validate() const;
};

struct Point {
  double x = 0.0;
  double t = 0.0;
};

// Derivatives of the SE base kernel; unprimed subscripts act on the first argument.
struct SEFamily {
  double k, kt, ktp, kx, kxp, kttp, kxxp, ktxp, kxtp;
};

[[nodiscard]] SEFamily se_derivative_family(Point s, Point sp, const SEHyper& h);

// Diagonal operator rows acting on a shared base, a = alpha/tau, b = beta/tau.
[[nodiscard]] Eigen::Matrix2d arz_block_kernel(Point s, Point sp, const KernelSpec& spec);
// Complete expansion of L (I2 x k0) L'^T including the off-diagonal entries of L.
[[nodiscard]] Eigen::Matrix2d arz_block_kernel_full(Point s, Point sp, const KernelSpec& spec);
[[nodiscard]] double lwr_scalar_kernel(Point s, Point sp, const KernelSpec& spec);
// Physics part only, over outputs (rho, u).
[[nodiscard]] Eigen::Matrix2d lwr_bidirectional_kernel(Point s, Point sp, const KernelSpec& spec);
[[nodiscard]] double residual_kernel(Point s, Point sp, const ResidualHyper& h);

[[nodiscard]] Eigen::MatrixXd physics_kernel(Point s, Point sp, const KernelSpec& spec);
[[nodiscard]] Eigen::MatrixXd residual_block(Point s, Point sp, const KernelSpec& spec);
[[nodiscard]] Eigen::MatrixXd total_kernel(Point s, Point sp, const KernelSpec& spec);

enum class KernelPart { total, physics, residual };

// Gram over (point, output) rows.
[[nodiscard]] Eigen::MatrixXd gram(const std::vector<Point>& points, const std::vector<int>& outputs,
                                   const KernelSpec& spec, KernelPart part = KernelPart::total);
// Every point paired with every output, output-major: row = o * n + i.
[[nodiscard]] Eigen::MatrixXd gram_all_outputs(const std::vector<Point>& points, const KernelSpec& spec,
                                               KernelPart part = KernelPart::total);

void add_jitter(Eigen::MatrixXd& g, double jitter);

struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;  // relative jitter actually applied
};

// Cholesky of K + jitter * mean(diag K) I, doubling the jitter up to `doublings` times.
[[nodiscard]] JitteredCholesky robust_cholesky(const Eigen::MatrixXd& k, double jitter = 1e-6, int doublings = 3);

// Unconstrained parameter vector:
//   [log sigma, log ell_x, log ell_t, operator coefficients..., per output (log b_res, log sigma_res,
//    log ell_x, log ell_t)]
// Operator coefficients: arz (lambda1, lambda2, alpha, log tau); lwr_scalar (lambda0);
// lwr_bidirectional (logit w_f, c_f, c_b, coupling); plain_se none.
[[nodiscard]] int operator_param_count(KernelMode mode) noexcept;
[[nodiscard]] int kernel_param_count(const KernelSpec& spec) noexcept;
[[nodiscard]] Eigen::VectorXd kernel_to_vector(const KernelSpec& spec);
[[nodiscard]] KernelSpec kernel_from_vector(const KernelSpec& like, const Eigen::VectorXd& theta);
[[nodiscard]] std::vector<std::string> kernel_param_names(const KernelSpec& spec);

// Stationary fast path: blocks depend on the lag (s - s') only.
class KernelEvaluator {
 public:
  explicit KernelEvaluator(const KernelSpec& spec);

  [[nodiscard]] int outputs() const noexcept { return o_; }
  [[nodiscard]] const KernelSpec& spec() const noexcept { return spec_; }

  // Row-major O x O blocks; either pointer may be null.
  void eval(double dx, double dt, double* phys, double* res) const;
  void eval_total(double dx, double dt, double* out) const;

  // Accumulates d(sum G .* K)/d(theta) into `grad` for block weights G (row-major O x O) at lag
  // (dx, dt) and returns d/d(dx), d/d(dt) in `dlag`.  Call finish() once after all blocks.
  void accumulate(double dx, double dt, const double* g, Eigen::VectorXd& grad, double* dlag);
  void finish(Eigen::VectorXd& grad);

 private:
  KernelSpec spec_;
  int o_ = 1;
  int n_op_ = 0;
  double sigma2_ = 1.0;
  std::vector<std::array<double, 9>> coef_;                  // [a*O + b][p*3 + q]
  std::vector<std::vector<std::array<double, 9>>> dcoef_;    // per operator parameter
  std::vector<std::array<double, 9>> coef_acc_;              // sum over blocks of G_ab * family
};

}  // namespace pegp
