// SPDX-License-Identifier: Apache-2.0
#include "demo/render.hpp"

#include <algorithm>
#include <cmath>

namespace demo::render {

Raster canvas(int width, int height, Rgb fill) {
  Raster r(width, height, 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) std::copy(fill.begin(), fill.end(), r.at(x, y));
  }
  return r;
}

void fill_rect(Raster& r, int x, int y, int w, int h, Rgb color) {
  const int x0 = std::max(0, x), y0 = std::max(0, y);
  const int x1 = std::min(r.width, x + w), y1 = std::min(r.height, y + h);
  for (int yy = y0; yy < y1; ++yy) {
    for (int xx = x0; xx < x1; ++xx) std::copy(color.begin(), color.end(), r.at(xx, yy));
  }
}

void frame(Raster& r, int x, int y, int w, int h, int thickness, Rgb color) {
  fill_rect(r, x, y, w, thickness, color);
  fill_rect(r, x, y + h - thickness, w, thickness, color);
  fill_rect(r, x, y, thickness, h, color);
  fill_rect(r, x + w - thickness, y, thickness, h, color);
}

void blit(Raster& dst, const Raster& src, int x, int y) {
  for (int sy = 0; sy < src.height; ++sy) {
    const int dy = y + sy;
    if (dy < 0 || dy >= dst.height) continue;
    for (int sx = 0; sx < src.width; ++sx) {
      const int dx = x + sx;
      if (dx < 0 || dx >= dst.width) continue;
      const std::uint8_t* p = src.at(sx, sy);
      std::uint8_t* q = dst.at(dx, dy);
      for (int c = 0; c < 3; ++c) q[c] = src.channels == 1 ? p[0] : p[c];
    }
  }
}

Raster resize(const Raster& src, int width, int height) {
  Raster out(width, height, src.channels);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(src.height - 1, y * src.height / height);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(src.width - 1, x * src.width / width);
      std::copy_n(src.at(sx, sy), src.channels, out.at(x, y));
    }
  }
  return out;
}

Rgb heat_color(double v) {
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  // Piecewise-linear blue -> cyan -> yellow -> red.
  double r, g, b;
  if (v < 1.0 / 3) {
    const double t = v * 3;
    r = 0; g = t; b = 1;
  } else if (v < 2.0 / 3) {
    const double t = (v - 1.0 / 3) * 3;
    r = t; g = 1; b = 1 - t;
  } else {
    const double t = (v - 2.0 / 3) * 3;
    r = 1; g = 1 - t; b = 0;
  }
  auto q = [](double x) { return static_cast<std::uint8_t>(std::lround(x * 255)); };
  return {q(r), q(g), q(b)};
}

Raster heatmap(const Mat& values, int cell) {
  const double lo = values.size() ? values.minCoeff() : 0.0;
  const double hi = values.size() ? values.maxCoeff() : 1.0;
  const double span = hi > lo ? hi - lo : 1.0;
  Raster r = canvas(static_cast<int>(values.cols()) * cell, static_cast<int>(values.rows()) * cell);
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      fill_rect(r, static_cast<int>(j) * cell, static_cast<int>(i) * cell, cell, cell,
                heat_color((values(i, j) - lo) / span));
    }
  }
  return r;
}

Rgb palette(int i) {
  static constexpr std::array<Rgb, 7> kColors{{{31, 119, 180},
                                               {255, 127, 14},
                                               {44, 160, 44},
                                               {214, 39, 40},
                                               {148, 103, 189},
                                               {140, 86, 75},
                                               {227, 119, 194}}};
  return kColors[static_cast<size_t>(i) % kColors.size()];
}

}  // namespace demo::render
