// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace demo {

/// 8-bit interleaved raster (row-major, channels fastest).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 3;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int w, int h, int c) : width(w), height(h), channels(c), pixels(std::size_t(w) * h * c) {}
  std::uint8_t* at(int x, int y) { return &pixels[(std::size_t(y) * width + x) * channels]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(std::size_t(y) * width + x) * channels];
  }
};

/// Writes an 8-bit PNG. Output bytes depend only on the raster.
void write_png(const std::filesystem::path& path, const Raster& raster);
/// Reads any PNG and converts it to 8-bit RGB.
Raster read_png(const std::filesystem::path& path);

}  // namespace demo
