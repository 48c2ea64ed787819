// SPDX-License-Identifier: Apache-2.0
//
// Patch-integrated feature extraction: pooled patch tokens are concatenated
// with the class token, layer-normalised, projected 2C -> C and passed
// through GELU.
#pragma once

#include <string>
#include <string_view>

#include "demo/backbone.hpp"
#include "demo/nn.hpp"

namespace demo {

enum class PoolingMode { average, max, gem };

std::string_view to_string(PoolingMode mode);
PoolingMode parse_pooling_mode(std::string_view text);

struct FusedFeature {
  Eigen::RowVectorXd value;
  Modality modality = Modality::R;
};

class Pife {
 public:
  static constexpr double kDefaultGemP = 3.0;

  Pife(ParameterStore& store, const std::string& name, Index dim, PoolingMode mode, Rng& rng);

  Index dim() const { return dim_; }
  PoolingMode mode() const { return mode_; }

  /// Pools (batch*N_p) x C patch tokens to batch x C.
  Var pool(const Var& patch_tokens, Index batch) const;
  /// [class_token, pooled] -> LN -> W_pro -> GELU. Both inputs batch x C.
  Var fuse(const Var& class_tokens, const Var& pooled) const;
  Var forward(const EncoderOutput& tokens) const;

  const LayerNorm& norm() const { return norm_; }
  const Linear& projection() const { return projection_; }
  /// Learnable GeM exponent; only registered in gem mode.
  const Var& gem_p() const { return gem_p_; }

 private:
  Index dim_;
  PoolingMode mode_;
  LayerNorm norm_;
  Linear projection_;
  Var gem_p_;
};

/// Column-wise pooling of one modality's patch tokens.
Eigen::RowVectorXd pool_patches(const Mat& patch_tokens, PoolingMode mode,
                                double gem_p = Pife::kDefaultGemP);

/// Unbatched fuse for one sample; no gradient recording.
FusedFeature fuse(const Eigen::RowVectorXd& class_token, const Eigen::RowVectorXd& pooled,
                  const Pife& params, Modality modality);

}  // namespace demo
