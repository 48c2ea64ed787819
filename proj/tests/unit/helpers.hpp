// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "demo/model.hpp"
#include "demo/nn.hpp"
#include "oracles.hpp"

namespace testing {

/// Toy model: C=8, 32x16 images with 8-pixel patches (N_p = 8), H=2.
inline demo::ModelConfig toy_model(std::uint64_t seed = 1) {
  demo::ModelConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.num_heads = 2;
  c.encoder.image_height = 32;
  c.encoder.image_width = 16;
  c.encoder.patch_size = 8;
  c.encoder.seed = seed;
  c.moe_heads = 2;
  c.loss.num_classes = 4;
  return c;
}

/// Overwrites every parameter with N(0, scale) and gives batch-norm buffers
/// non-trivial running statistics, so zero-initialised biases cannot hide bugs.
inline void randomize(demo::ParameterStore& store, std::uint64_t seed, double scale = 0.3) {
  demo::Rng rng(seed);
  for (const auto& p : store.params()) {
    demo::Var v = p.var;
    v.value_mut() = rng.normal_matrix(v.rows(), v.cols(), scale);
  }
  for (const auto& b : store.buffers()) {
    demo::Var v = b.var;
    if (b.name.ends_with("running_var")) {
      v.value_mut() = rng.uniform_matrix(v.rows(), v.cols(), 0.4).array() + 1.0;
    } else {
      v.value_mut() = rng.normal_matrix(v.rows(), v.cols(), 0.2);
    }
  }
}

inline oracle::Affine affine(const demo::ParameterStore& store, const std::string& name) {
  oracle::Affine a;
  a.w = store.find(name + ".weight")->var.value();
  if (const auto* b = store.find(name + ".bias")) a.b = oracle::Vector(b->var.value().row(0).transpose());
  return a;
}

inline oracle::BatchNormParams batch_norm(const demo::ParameterStore& store, const std::string& name) {
  oracle::BatchNormParams p;
  p.gamma = store.find(name + ".gamma")->var.value().row(0).transpose();
  p.beta = store.find(name + ".beta")->var.value().row(0).transpose();
  p.mean = store.find_buffer(name + ".running_mean")->var.value().row(0).transpose();
  p.var = store.find_buffer(name + ".running_var")->var.value().row(0).transpose();
  return p;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("demo_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
