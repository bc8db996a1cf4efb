#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pegp/data.hpp"
#include "pegp/diagnostics.hpp"
#include "pegp/metrics.hpp"
#include "pegp/svgp.hpp"

namespace pegp {

// Nine significant digits, the fixed float format of every CSV.
[[nodiscard]] std::string fmt9(double v);
// Rounds to the value fmt9 would print.
[[nodiscard]] double round9(double v);

void write_field_csv(std::ostream& os, const Field& f);
// Grid recovered from the cell centers; every cell must appear exactly once.
[[nodiscard]] Field read_field_csv(std::istream& is);

// Any CSV whose first columns are the cell centers x_m,t_s; one matrix per remaining column.
struct GridTable {
  SpaceTimeGrid grid;
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> values;  // nx x nt
};

[[nodiscard]] GridTable read_grid_csv(std::istream& is);

void write_trajectories_csv(std::ostream& os, const TrajectorySet& t);
[[nodiscard]] TrajectorySet read_trajectories_csv(std::istream& is);

void write_observations_csv(std::ostream& os, const ObservationSet& obs);
[[nodiscard]] ObservationSet read_observations_csv(std::istream& is);

void write_variance_csv(std::ostream& os, const PredictiveField& pf);
void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows);
void write_shares_csv(std::ostream& os, const std::vector<std::pair<double, ShareReport>>& rows);
void write_similarity_csv(std::ostream& os, const std::vector<std::pair<double, std::vector<SimilarityRow>>>& rows);

constexpr int kModelSchemaVersion = 1;

[[nodiscard]] std::string kernel_mode_name(KernelMode m);
[[nodiscard]] KernelMode parse_kernel_mode(const std::string& s);

[[nodiscard]] nlohmann::json model_to_json(const SVGPState& st);
[[nodiscard]] SVGPState model_from_json(const nlohmann::json& j);

[[nodiscard]] nlohmann::json grid_to_json(const SpaceTimeGrid& g);
[[nodiscard]] SpaceTimeGrid grid_from_json(const nlohmann::json& j);

[[nodiscard]] std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace pegp
