// SPDX-License-Identifier: Apache-2.0
//
// Attention-triggered mixture of experts. The concatenated decoupled
// features are reduced to a joint query D_q that attends (per head) over the
// stacked decoupled features; the resulting H x n_d weights scale the
// matching feature chunks of each expert's output.
#pragma once

#include <array>
#include <string>
#include <string_view>

#include "demo/hdm.hpp"
#include "demo/nn.hpp"

namespace demo {

enum class ExpertStructure { simple, bottleneck, ffn };
enum class GatingVariant { attention, simple_add, simple_concat };

std::string_view to_string(ExpertStructure v);
std::string_view to_string(GatingVariant v);
ExpertStructure parse_expert_structure(std::string_view text);
GatingVariant parse_gating_variant(std::string_view text);

/// H x n_d attention weights; each row sums to one.
struct GateTensor {
  Mat weights;
  Index heads() const { return weights.rows(); }
  Index experts() const { return weights.cols(); }
};

struct AtmoeConfig {
  Index dim = 0;
  Index heads = 4;
  ExpertStructure expert = ExpertStructure::simple;
  GatingVariant gating = GatingVariant::attention;
};

struct AtmoeOutput {
  Var final_feature;  // batch x (7C), or batch x C for simple_add
  /// attention gating: (batch*H) x 7, rows (sample, head); simple gating: batch x 7.
  Var gate;
  Var experts;        // batch x (7C), expert outputs in canonical order
};

class Atmoe {
 public:
  Atmoe(ParameterStore& store, const std::string& name, const AtmoeConfig& config, Rng& rng);

  const AtmoeConfig& config() const { return config_; }
  Index feature_dim() const;

  /// decoupled: (batch*7) x C, row b*7 + slot.
  AtmoeOutput forward(const Var& decoupled, const RunMode& mode) const;

  /// batch x 7C -> batch x C: BN(GELU(W_red x)).
  Var reduce_query(const Var& concatenated, const RunMode& mode) const;
  /// query: batch x C; decoupled: (batch*7) x C. Returns (batch*H) x 7.
  Var gate(const Var& query, const Var& decoupled) const;
  Var expert(const Var& x, int slot, const RunMode& mode) const;
  /// batch x 7 softmax weights from a linear map of the concatenated features.
  Var simple_weights(const Var& concatenated) const;

  const Linear& reduction() const { return reduction_; }
  const BatchNorm& reduction_norm() const { return reduction_norm_; }
  const Linear& query_projection() const { return w_q_; }
  const Linear& key_projection() const { return w_k_; }
  const Linear& simple_gate_layer() const { return simple_gate_; }

  struct Expert {
    Linear first;
    Linear second;  // undefined for the simple structure
    BatchNorm norm;
  };
  const Expert& expert_params(int slot) const { return experts_.at(static_cast<size_t>(slot)); }

 private:
  AtmoeConfig config_;
  Linear reduction_;
  BatchNorm reduction_norm_;
  Linear w_q_, w_k_;
  Linear simple_gate_;
  std::array<Expert, kNumDecoupled> experts_;
};

/// Scales chunk h of expert e by weights[(b*H)+h][e] and concatenates the
/// weighted experts. experts: batch x (n_d*C), gate: (batch*H) x n_d.
Var weighted_mix(const Var& experts, const Var& gate, Index heads);

/// Combines experts with per-expert scalar weights (batch x n_d): sum (dim C)
/// when `add` is true, otherwise concatenation (dim n_d*C).
Var combine_simple(const Var& experts, const Var& weights, bool add);

// Unbatched spellings of the operations above (eval-mode batch norm, no graph).
Eigen::RowVectorXd reduce_query(const DecoupledSet& decoupled, const Atmoe& params);
GateTensor gate(const Eigen::RowVectorXd& query, const DecoupledSet& decoupled,
                const Atmoe& params);
Eigen::RowVectorXd expert_forward(const Eigen::RowVectorXd& x, int slot, const Atmoe& params);
Eigen::RowVectorXd weighted_mix(std::span<const Eigen::RowVectorXd> experts,
                                const GateTensor& gate);
Eigen::RowVectorXd simple_gate(const DecoupledSet& decoupled, bool add, const Atmoe& params);

}  // namespace demo
