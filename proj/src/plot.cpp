#include "pegp/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "pegp/error.hpp"

namespace pegp {

namespace {

constexpr int kGlyphW = 3, kGlyphH = 5, kFontScale = 2;
constexpr int kCharW = (kGlyphW + 1) * kFontScale;
constexpr int kMargin = 8, kLabelW = 12 * kCharW, kLabelH = kGlyphH * kFontScale + 6;
constexpr int kBarW = 12, kBarGap = 8;
constexpr std::array<std::uint8_t, 3> kBackground{255, 255, 255}, kInk{0, 0, 0}, kMissing{160, 160, 160};

// 3x5 bitmaps, one row per 3-bit group, most significant bit on the left.
int glyph_row(char c, int row) {
  static const char* const rows[] = {
      "075557", "126227", "271747", "371717", "455711", "574717", "674757", "771111", "875757",
      "975717", ".00002", "-00700", "+02720", "e07747", "n06555", "a03553", "i20222", "f34644"};
  for (const char* r : rows)
    if (r[0] == c) return r[1 + row] - '0';
  return 0;
}

class Canvas {
 public:
  Canvas(int w, int h) : img_{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)} {
    fill(0, 0, w, h, kBackground);
  }
  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    auto* p = &img_.pixels[(static_cast<std::size_t>(y) * img_.width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  void fill(int x, int y, int w, int h, std::array<std::uint8_t, 3> c) {
    for (int yy = y; yy < y + h; ++yy)
      for (int xx = x; xx < x + w; ++xx) set(xx, yy, c);
  }
  void frame(int x, int y, int w, int h) {
    fill(x - 1, y - 1, w + 2, 1, kInk);
    fill(x - 1, y + h, w + 2, 1, kInk);
    fill(x - 1, y - 1, 1, h + 2, kInk);
    fill(x + w, y - 1, 1, h + 2, kInk);
  }
  void text(int x, int y, const std::string& s) {
    for (std::size_t k = 0; k < s.size(); ++k)
      for (int r = 0; r < kGlyphH; ++r) {
        const int bits = glyph_row(s[k], r);
        for (int col = 0; col < kGlyphW; ++col)
          if (bits & (1 << (kGlyphW - 1 - col)))
            fill(x + static_cast<int>(k) * kCharW + col * kFontScale, y + r * kFontScale, kFontScale, kFontScale, kInk);
      }
  }
  RgbImage take() { return std::move(img_); }

 private:
  RgbImage img_;
};

std::string label(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

int text_width(const std::string& s) { return static_cast<int>(s.size()) * kCharW; }

}  // namespace

std::array<std::uint8_t, 3> RgbImage::at(int x, int y) const {
  const auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  return {p[0], p[1], p[2]};
}

std::array<std::uint8_t, 3> viridis(double u) {
  if (!std::isfinite(u)) u = 0.0;
  u = std::clamp(u, 0.0, 1.0);
  static const double c[7][3] = {{0.2777273272234177, 0.005407344544966578, 0.3340998053353061},
                                 {0.1050930431085774, 1.404613529898575, 1.384590162594685},
                                 {-0.3308618287255563, 0.214847559468213, 0.09509516302823659},
                                 {-4.634230498983486, -5.799100973351585, -19.33244095627987},
                                 {6.228269936347081, 14.17993336680509, 56.69055260068105},
                                 {4.776384997670288, -13.74514537774601, -65.35303263337234},
                                 {-5.435455855934631, 4.645852612178535, 26.3124352495832}};
  std::array<std::uint8_t, 3> out{};
  for (int ch = 0; ch < 3; ++ch) {
    double acc = c[6][ch];
    for (int k = 5; k >= 0; --k) acc = c[k][ch] + u * acc;
    out[ch] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(acc, 0.0, 1.0)));
  }
  return out;
}

RgbImage render_heatmaps(const std::vector<HeatmapPanel>& panels, std::vector<PanelLayout>* layout) {
  if (panels.empty()) throw validation_error("nothing to plot");
  std::vector<PanelLayout> lay;
  int width = 0, height = 0;
  for (const auto& p : panels) {
    const auto& g = p.grid;
    if (p.values.rows() != g.nx || p.values.cols() != g.nt) throw validation_error("heatmap values do not match the grid");
    if (p.mask.size() != 0 && (p.mask.rows() != g.nx || p.mask.cols() != g.nt))
      throw validation_error("heatmap mask does not match the grid");
    PanelLayout l;
    const int px = std::max(1, 360 / g.nt), py = std::max(1, 300 / g.nx);
    l.plot_w = g.nt * px;
    l.plot_h = g.nx * py;
    l.plot_x = width + kMargin + kLabelW;
    l.plot_y = kMargin + kLabelH / 2;
    l.lo = INFINITY;
    l.hi = -INFINITY;
    for (int j = 0; j < g.nt; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const double v = p.values(i, j);
        if (!std::isfinite(v) || (p.mask.size() != 0 && !p.mask(i, j))) continue;
        l.lo = std::min(l.lo, v);
        l.hi = std::max(l.hi, v);
      }
    if (!(l.lo <= l.hi)) l.lo = l.hi = std::nan("");
    width = l.plot_x + l.plot_w + kBarGap + kBarW + kBarGap + kLabelW;
    height = std::max(height, l.plot_y + l.plot_h + kLabelH + kMargin);
    lay.push_back(l);
  }

  Canvas cv(width, height);
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const auto& p = panels[k];
    const auto& g = p.grid;
    const auto& l = lay[k];
    const int px = l.plot_w / g.nt, py = l.plot_h / g.nx;
    const double span = l.hi - l.lo;
    const auto color_of = [&](double v) { return viridis(span > 0.0 ? (v - l.lo) / span : 0.5); };
    for (int j = 0; j < g.nt; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const double v = p.values(i, j);
        const bool ok = std::isfinite(v) && (p.mask.size() == 0 || p.mask(i, j));
        cv.fill(l.plot_x + j * px, l.plot_y + (g.nx - 1 - i) * py, px, py, ok ? color_of(v) : kMissing);
      }
    cv.frame(l.plot_x, l.plot_y, l.plot_w, l.plot_h);

    // space extent on the left, time extent below
    const std::string x_hi = label(g.x_max), x_lo = label(g.x_min);
    cv.text(l.plot_x - 4 - text_width(x_hi), l.plot_y, x_hi);
    cv.text(l.plot_x - 4 - text_width(x_lo), l.plot_y + l.plot_h - kGlyphH * kFontScale, x_lo);
    const int ty = l.plot_y + l.plot_h + 4;
    cv.text(l.plot_x, ty, label(g.t_min));
    const std::string t_hi = label(g.t_max);
    cv.text(l.plot_x + l.plot_w - text_width(t_hi), ty, t_hi);

    const int bx = l.plot_x + l.plot_w + kBarGap;
    for (int y = 0; y < l.plot_h; ++y) {
      const double u = l.plot_h > 1 ? 1.0 - static_cast<double>(y) / (l.plot_h - 1) : 0.5;
      cv.fill(bx, l.plot_y + y, kBarW, 1, span > 0.0 ? viridis(u) : color_of(l.lo));
    }
    cv.frame(bx, l.plot_y, kBarW, l.plot_h);
    cv.text(bx + kBarW + 4, l.plot_y, label(l.hi));
    cv.text(bx + kBarW + 4, l.plot_y + l.plot_h - kGlyphH * kFontScale, label(l.lo));
  }
  if (layout) *layout = lay;
  return cv.take();
}

void write_png(const std::string& path, const RgbImage& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw validation_error("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw numerical_error("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw validation_error("failed to write PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.pixels[static_cast<std::size_t>(y) * img.width * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace pegp
