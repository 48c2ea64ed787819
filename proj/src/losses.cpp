// SPDX-License-Identifier: Apache-2.0
#include "demo/losses.hpp"

#include <limits>
#include <map>

#include "demo/errors.hpp"
#include "demo/types.hpp"

namespace demo {

void LossConfig::validate() const {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw ConfigError("loss: smoothing must lie in [0, 1)");
  }
  if (!(margin >= 0.0)) throw ConfigError("loss: triplet margin must be non-negative");
  if (num_classes < 1) throw ConfigError("loss: num_classes must be positive");
}

Var ce_label_smooth(const Var& logits, std::span<const std::int64_t> labels, double smoothing) {
  const Index batch = logits.rows();
  const Index k = logits.cols();
  if (static_cast<Index>(labels.size()) != batch || batch == 0) {
    throw InputError("cross-entropy: label count does not match batch");
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw ConfigError("cross-entropy: smoothing must lie in [0, 1)");
  }
  Mat target = Mat::Constant(batch, k, smoothing / static_cast<double>(k));
  for (Index b = 0; b < batch; ++b) {
    if (labels[b] < 0 || labels[b] >= k) {
      throw InputError("cross-entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                       std::to_string(k) + ")");
    }
    target(b, labels[b]) += 1.0 - smoothing;
  }
  Var weighted = ops::mul_const(ops::log_softmax_rows(logits), target);
  return ops::scale(ops::sum(weighted), -1.0 / static_cast<double>(batch));
}

double ce_label_smooth(const Mat& logits, std::span<const std::int64_t> labels, double smoothing) {
  NoGradGuard guard;
  return ce_label_smooth(Var(logits), labels, smoothing).item();
}

Var triplet_batch_hard(const Var& embeddings, std::span<const std::int64_t> labels, double margin) {
  const Index n = embeddings.rows();
  if (static_cast<Index>(labels.size()) != n) {
    throw InputError("triplet: label count does not match batch");
  }
  std::map<std::int64_t, int> counts;
  for (auto l : labels) ++counts[l];
  for (const auto& [label, count] : counts) {
    if (count < 2) {
      throw SamplingError("triplet: identity " + std::to_string(label) +
                          " has a single instance in the batch");
    }
  }
  if (counts.size() < 2) throw SamplingError("triplet: batch holds a single identity");

  Var dist = ops::pairwise_distance(embeddings);
  const Mat& d = dist.value();
  std::vector<Index> pos_idx(static_cast<size_t>(n));
  std::vector<Index> neg_idx(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    double hardest_pos = -1.0;
    double hardest_neg = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (d(i, j) > hardest_pos) {
          hardest_pos = d(i, j);
          pos_idx[i] = i * n + j;
        }
      } else if (d(i, j) < hardest_neg) {
        hardest_neg = d(i, j);
        neg_idx[i] = i * n + j;
      }
    }
  }
  Var d_pos = ops::gather_elements(dist, pos_idx, n, 1);
  Var d_neg = ops::gather_elements(dist, neg_idx, n, 1);
  return ops::mean(ops::relu(ops::add_scalar(ops::sub(d_pos, d_neg), margin)));
}

double triplet_batch_hard(const Mat& embeddings, std::span<const std::int64_t> labels,
                          double margin) {
  NoGradGuard guard;
  return triplet_batch_hard(Var(embeddings), labels, margin).item();
}

ClassifierHeads::ClassifierHeads(ParameterStore& store, const std::string& name,
                                 Index modality_dim, Index joint_dim, Index num_classes, Rng& rng) {
  for (Modality m : kModalities) {
    modality[static_cast<size_t>(m)] =
        Linear(store, name + "." + std::string(modality_tag(m)), modality_dim, num_classes,
               ParamGroup::modules, rng, false);
  }
  joint = Linear(store, name + ".joint", joint_dim, num_classes, ParamGroup::modules, rng, false);
}

CompositeLoss composite_loss(const std::array<Var, 3>& modality_features, const Var& joint,
                             std::span<const std::int64_t> labels, const ClassifierHeads& heads,
                             const LossConfig& config) {
  config.validate();
  CompositeLoss out;
  std::vector<Var> terms;
  auto supervise = [&](const Var& feature, const Linear& head, const std::string& tag) {
    Var ce = ce_label_smooth(head(feature), labels, config.smoothing);
    Var tri = triplet_batch_hard(feature, labels, config.margin);
    out.breakdown.push_back({"ce_" + tag, ce.item()});
    out.breakdown.push_back({"tri_" + tag, tri.item()});
    terms.push_back(ce);
    terms.push_back(tri);
  };
  for (Modality m : kModalities) {
    supervise(modality_features[static_cast<size_t>(m)], heads.modality[static_cast<size_t>(m)],
              std::string(modality_tag(m)));
  }
  supervise(joint, heads.joint, "f");
  Var total = terms.front();
  for (size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  out.total = total;
  return out;
}

}  // namespace demo
