// SPDX-License-Identifier: Apache-2.0
//
// Small deterministic raster drawing used by every figure writer.
#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "demo/image_io.hpp"
#include "demo/tensor.hpp"

namespace demo::render {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGreen{0, 170, 0};
inline constexpr Rgb kRed{210, 30, 30};
inline constexpr Rgb kGray{128, 128, 128};
inline constexpr Rgb kBlue{40, 90, 200};

Raster canvas(int width, int height, Rgb fill = kWhite);
void fill_rect(Raster& r, int x, int y, int w, int h, Rgb color);
/// Draws a `thickness`-pixel frame just inside the rectangle.
void frame(Raster& r, int x, int y, int w, int h, int thickness, Rgb color);
/// Copies `src` (converted to RGB) with its top-left corner at (x, y); clipped.
void blit(Raster& dst, const Raster& src, int x, int y);
/// Nearest-neighbour resize.
Raster resize(const Raster& src, int width, int height);

/// Maps values in [0, 1] to a blue-to-red ramp.
Rgb heat_color(double v);
/// Heatmap of a matrix, each cell `cell` pixels square, min-max normalised.
Raster heatmap(const Mat& values, int cell);

/// Colour of bar i in a palette of distinguishable hues.
Rgb palette(int i);

}  // namespace demo::render
