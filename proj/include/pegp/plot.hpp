#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pegp/data.hpp"

namespace pegp {

struct RgbImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  [[nodiscard]] std::array<std::uint8_t, 3> at(int x, int y) const;
};

// Polynomial fit of the viridis colormap; u is clamped to [0, 1].
[[nodiscard]] std::array<std::uint8_t, 3> viridis(double u);

// Space-time heatmap: time runs left to right, space bottom to top.  Cells that are
// non-finite or masked out are drawn gray.
struct HeatmapPanel {
  SpaceTimeGrid grid;
  Eigen::MatrixXd values;  // nx x nt
  MaskMatrix mask;         // empty means all valid
};

struct PanelLayout {
  int plot_x = 0, plot_y = 0, plot_w = 0, plot_h = 0;  // plot area inside the image
  double lo = 0.0, hi = 0.0;                          // color range
};

// Panels side by side, each with its own color bar; min/max values and axis extents printed
// in the margins.
[[nodiscard]] RgbImage render_heatmaps(const std::vector<HeatmapPanel>& panels,
                                       std::vector<PanelLayout>* layout = nullptr);

void write_png(const std::string& path, const RgbImage& img);

}  // namespace pegp
