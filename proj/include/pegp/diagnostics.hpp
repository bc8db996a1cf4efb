#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pegp/data.hpp"
#include "pegp/svgp.hpp"

namespace pegp {

// Posterior mean split into physics and residual parts at physical query points.  Columns are
// the model's task outputs, (w1, w2) for arz and (rho, v) otherwise, as deviations from the
// task mean in physical units.
struct MeanDecomposition {
  Eigen::MatrixXd total, phys, res;  // n x O
};

[[nodiscard]] MeanDecomposition decompose_mean(const SVGPState& state, const std::vector<Point>& physical_points);

struct Shares {
  double s_phys = 0.0, s_res = 0.0;  // aligned
  double e_phys = 0.0, e_res = 0.0;  // energy
};

[[nodiscard]] Shares shares(const Eigen::VectorXd& mu, const Eigen::VectorXd& mu_phys, const Eigen::VectorXd& mu_res);
// Residual-to-physics aligned-share ratio of the stacked outputs.
[[nodiscard]] double joint_ratio(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& mu_phys, const Eigen::MatrixXd& mu_res);

struct ShareReport {
  std::vector<Shares> per_output;
  double joint_ratio = 0.0;
  int m = 0;
};

[[nodiscard]] ShareReport share_report(const MeanDecomposition& d);

// Linear CKA of column-centered feature matrices.
[[nodiscard]] double cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct AngleResult {
  std::vector<double> degrees;  // ascending
  bool truncated = false;       // fewer than k angles because of rank
};

[[nodiscard]] AngleResult principal_angles(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int k = 5);

struct RegimeMasks {
  MaskMatrix free, congested;
};

[[nodiscard]] RegimeMasks regime_mask(const Field& field, double v_threshold);

struct CellSample {
  std::vector<std::pair<int, int>> cells;  // (i, j), ordered by j then i
  bool short_mask = false;                 // fewer than n cells available
};

[[nodiscard]] CellSample sample_points(const MaskMatrix& mask, int n, std::uint64_t seed);

struct SimilarityRow {
  std::string regime;
  int output = 0;
  int n = 0;
  double cka = 0.0;
  double min_angle = 0.0, max_angle = 0.0;
  std::string note;  // empty, or why the row could not be computed
};

// Physics- versus residual-mean similarity inside each regime of `reference`.
[[nodiscard]] std::vector<SimilarityRow> similarity_report(const SVGPState& state, const Field& reference,
                                                           double v_threshold, int n, std::uint64_t seed);

struct UQFields {
  PredictiveField field;
  Eigen::MatrixXd floor_rho, floor_v;  // observation-noise floor per cell
};

[[nodiscard]] UQFields uq_fields(const SVGPState& state, const SpaceTimeGrid& grid);

}  // namespace pegp
