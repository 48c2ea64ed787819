// SPDX-License-Identifier: Apache-2.0
//
// Label-smoothed cross-entropy plus batch-hard triplet loss, applied to each
// modality stream and to the joint feature.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "demo/nn.hpp"

namespace demo {

struct LossConfig {
  double smoothing = 0.1;
  double margin = 0.3;
  Index num_classes = 1;

  void validate() const;
};

/// Mean over the batch of -sum_i q_i log softmax(logits)_i with
/// q = (1 - eps) * onehot + eps / K.
Var ce_label_smooth(const Var& logits, std::span<const std::int64_t> labels, double smoothing);
double ce_label_smooth(const Mat& logits, std::span<const std::int64_t> labels, double smoothing);

/// Mean over anchors of max(0, d(hardest positive) - d(hardest negative) + margin)
/// with Euclidean distances. Every label needs >= 2 instances and the batch at
/// least one other label; otherwise SamplingError.
Var triplet_batch_hard(const Var& embeddings, std::span<const std::int64_t> labels, double margin);
double triplet_batch_hard(const Mat& embeddings, std::span<const std::int64_t> labels,
                          double margin);

/// One linear classifier per supervised stream: f_R, f_N, f_T and the joint f.
struct ClassifierHeads {
  std::array<Linear, 3> modality;
  Linear joint;

  ClassifierHeads() = default;
  ClassifierHeads(ParameterStore& store, const std::string& name, Index modality_dim,
                  Index joint_dim, Index num_classes, Rng& rng);
  static constexpr int kCount = 4;
};

struct LossTerm {
  std::string name;
  double value;
};

struct CompositeLoss {
  Var total;
  std::vector<LossTerm> breakdown;  // ce_R, tri_R, ce_N, tri_N, ce_T, tri_T, ce_f, tri_f
};

/// Sum of per-stream cross-entropy and triplet terms for the three modality
/// features plus the joint feature.
CompositeLoss composite_loss(const std::array<Var, 3>& modality_features, const Var& joint,
                             std::span<const std::int64_t> labels, const ClassifierHeads& heads,
                             const LossConfig& config);

}  // namespace demo
