// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical decoupling: seven learnable queries cross-attend to
// unimodal, bimodal and trimodal key pools and yield the decoupled features
// D_R, D_N, D_T, D_RN, D_NT, D_TR, D_RNT (canonical order, used everywhere).
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "demo/backbone.hpp"
#include "demo/nn.hpp"
#include "demo/pife.hpp"

namespace demo {

inline constexpr int kNumDecoupled = 7;

enum class DecoupledSlot : int { R = 0, N, T, RN, NT, TR, RNT };

inline constexpr std::array<DecoupledSlot, kNumDecoupled> kDecoupledSlots{
    DecoupledSlot::R,  DecoupledSlot::N,  DecoupledSlot::T,  DecoupledSlot::RN,
    DecoupledSlot::NT, DecoupledSlot::TR, DecoupledSlot::RNT};

std::string_view slot_name(DecoupledSlot slot);  // "D_R", ..., "D_RNT"
/// Modalities whose tokens form the slot's keys, in key order (TR -> T, R).
std::vector<Modality> slot_modalities(DecoupledSlot slot);
/// 0 for unimodal, 1 for bimodal, 2 for trimodal slots.
int slot_level(DecoupledSlot slot);

enum class HdmInteraction {
  cross_attention,           // keys [f_m, F_m] per modality (default)
  cross_attention_no_fused,  // keys F_m only
  no_interaction,            // linear reduction of concatenated fused features
  transformer_block,         // cross-attention wrapped in a pre-norm block with FFN
};

std::string_view to_string(HdmInteraction v);
HdmInteraction parse_hdm_interaction(std::string_view text);

struct DecoupledSet {
  std::array<Eigen::RowVectorXd, kNumDecoupled> features;
  const Eigen::RowVectorXd& operator[](DecoupledSlot s) const {
    return features[static_cast<size_t>(s)];
  }
};

/// Multi-head attention of a single query row per block over that block's keys.
struct CrossAttention {
  Linear q, k, v, o;
  Index heads = 1;

  CrossAttention() = default;
  CrossAttention(ParameterStore& store, const std::string& name, Index dim, Index heads,
                 Rng& rng);
  /// queries: blocks x C; keys: (blocks*K) x C. Optionally returns the weights
  /// as (blocks*heads) x K.
  Var forward(const Var& queries, const Var& keys, Index blocks, Mat* weights_out = nullptr) const;
};

/// Per-sample key matrices. Fused features lead each modality's block.
Mat build_keys_unimodal(const FusedFeature& fused, const TokenSet& tokens);
Mat build_keys_bimodal(DecoupledSlot pair, std::span<const FusedFeature> fused,
                       std::span<const TokenSet> tokens);
Mat build_keys_trimodal(std::span<const FusedFeature> fused, std::span<const TokenSet> tokens);

/// Single-query multi-head cross-attention; no gradient recording.
Eigen::RowVectorXd cross_attend(const Eigen::RowVectorXd& query, const Mat& keys,
                                const CrossAttention& params);

struct HdmConfig {
  Index dim = 0;
  Index heads = 1;
  HdmInteraction interaction = HdmInteraction::cross_attention;
};

/// Attention weights captured during a forward pass.
struct DecouplingAttention {
  Index batch = 0;
  Index heads = 0;
  Index num_patches = 0;
  bool includes_fused = true;
  /// Per slot: (batch*heads) x K weights, rows ordered (sample, head).
  std::array<Mat, kNumDecoupled> weights;
};

struct HdmOutput {
  Var decoupled;  // (batch*7) x C, row b*7 + slot
  std::optional<DecouplingAttention> attention;
};

class Hdm {
 public:
  Hdm(ParameterStore& store, const std::string& name, const HdmConfig& config, Rng& rng);

  const HdmConfig& config() const { return config_; }

  /// fused: per modality batch x C; tokens: encoder outputs in R, N, T order.
  HdmOutput forward(const std::array<Var, 3>& fused, const std::array<EncoderOutput, 3>& tokens,
                    bool retain_attention = false) const;

  /// Unbatched decoupling of one sample; no gradient recording.
  DecoupledSet decouple(std::span<const FusedFeature> fused, std::span<const TokenSet> tokens) const;

  const Var& queries() const { return queries_; }  // 7 x C
  const CrossAttention& level(int l) const { return levels_.at(static_cast<size_t>(l)); }

 private:
  struct BlockWrap {
    LayerNorm norm_q;
    LayerNorm norm_ffn;
    Linear fc1, fc2;
  };

  Var attend_level(int level, const Var& queries, const Var& keys, Index blocks,
                   Mat* weights_out) const;

  HdmConfig config_;
  Var queries_;
  std::array<CrossAttention, 3> levels_;
  std::array<BlockWrap, 3> wraps_;
  std::array<Linear, kNumDecoupled> reducers_;
};

struct AttentionHeatmap {
  DecoupledSlot slot;
  Modality modality;
  Mat grid;  // grid_height x grid_width head-averaged attention mass
};

/// Head-averaged attention mass over each modality's patch keys for one
/// sample. Throws StateError when the forward pass did not retain attention.
std::vector<AttentionHeatmap> dump_decoupling_attention(const HdmOutput& output, Index sample,
                                                        Index grid_height, Index grid_width);

}  // namespace demo
