// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "demo/tensor.hpp"

namespace demo {

enum class Modality : int { R = 0, N = 1, T = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::R, Modality::N, Modality::T};
inline constexpr int kNumModalities = 3;

/// Short tag ("R", "N", "T").
std::string_view modality_tag(Modality m);
/// Long name used on disk and in tables ("RGB", "NIR", "TIR").
std::string_view modality_name(Modality m);
/// Parses either the tag or the long name, case-insensitive.
Modality parse_modality(std::string_view text);

/// A stack of images with identical geometry, stored NCHW in row-major order.
struct ImageStack {
  Index count = 0;
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  std::vector<double> data;

  ImageStack() = default;
  ImageStack(Index n, Index c, Index h, Index w)
      : count(n), channels(c), height(h), width(w), data(static_cast<size_t>(n * c * h * w), 0.0) {}

  Index image_size() const { return channels * height * width; }
  double& at(Index n, Index c, Index y, Index x) {
    return data[static_cast<size_t>(((n * channels + c) * height + y) * width + x)];
  }
  double at(Index n, Index c, Index y, Index x) const {
    return data[static_cast<size_t>(((n * channels + c) * height + y) * width + x)];
  }
};

}  // namespace demo
