// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "demo/archive.hpp"
#include "demo/nn.hpp"

namespace demo {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2 penalty added to the gradient.
  double weight_decay = 1e-4;
};

/// Adam over a ParameterStore with one learning rate per ParamGroup.
class Adam {
 public:
  Adam(const ParameterStore& store, AdamConfig config);

  void step(double encoder_lr, double modules_lr);
  Index steps_taken() const { return t_; }

  /// Moments as "adam_m/<name>", "adam_v/<name>" plus the step counter in meta.
  void save(ArrayArchive& archive) const;
  void load(const ArrayArchive& archive);

 private:
  const ParameterStore* store_;
  AdamConfig config_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  Index t_ = 0;
};

}  // namespace demo
