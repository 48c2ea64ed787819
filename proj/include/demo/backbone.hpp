// SPDX-License-Identifier: Apache-2.0
//
// Small vision-transformer encoder mapping one modality's images to patch
// tokens and a class token.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "demo/archive.hpp"
#include "demo/nn.hpp"
#include "demo/types.hpp"

namespace demo {

struct EncoderConfig {
  Index image_height = 32;
  Index image_width = 16;
  Index patch_size = 8;
  Index channels = 3;
  Index embed_dim = 512;
  Index depth = 1;
  Index num_heads = 4;
  Index mlp_ratio = 4;
  bool share_across_modalities = false;
  std::uint64_t seed = 0;

  /// Throws ConfigError when the geometry or head split is invalid.
  void validate() const;
  Index grid_height() const { return image_height / patch_size; }
  Index grid_width() const { return image_width / patch_size; }
  Index num_patches() const { return grid_height() * grid_width(); }
};

struct TokenSet {
  Mat patch_tokens;                 // N_p x C
  Eigen::RowVectorXd class_token;   // C
  Modality modality = Modality::R;
};

/// Batched encoder output. Tokens are block-major: sample b owns rows
/// [b*(N_p+1), (b+1)*(N_p+1)), the class token first.
struct EncoderOutput {
  Var tokens;
  Index batch = 0;
  Index num_patches = 0;

  Var class_tokens() const;  // B x C
  Var patch_tokens() const;  // (B*N_p) x C
};

/// Rearranges images into (count*N_p) x (channels*patch*patch) patch rows.
/// Patches are raster-ordered; features are ordered (channel, dy, dx).
Mat patchify(const ImageStack& images, Index patch_size);

class Backbone {
 public:
  Backbone(ParameterStore& store, const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  EncoderOutput forward(Modality m, const ImageStack& images) const;
  /// Unbatched view of forward(); no gradient recording.
  std::vector<TokenSet> encode(Modality m, const ImageStack& images) const;

  /// Copies encoder parameters from an archive produced by save_parameters().
  /// Entries under the "param/encoder." prefix must match exactly.
  void load_weights(const ArrayArchive& archive) const;

  /// Names of all parameters owned by the backbone.
  std::vector<std::string> parameter_names() const;

 private:
  struct Block {
    LayerNorm ln1;
    Linear q, k, v, o;
    LayerNorm ln2;
    Linear fc1, fc2;
  };
  struct Stream {
    Linear patch_embed;
    Var class_token;  // 1 x C
    Var pos_embed;    // (N_p+1) x C
    std::vector<Block> blocks;
    LayerNorm final_norm;
  };

  const Stream& stream(Modality m) const;
  void check_input(const ImageStack& images) const;

  EncoderConfig config_;
  const ParameterStore* store_;
  std::vector<Stream> streams_;
};

}  // namespace demo
