// SPDX-License-Identifier: Apache-2.0
#include "demo/atmoe.hpp"

#include "demo/errors.hpp"

namespace demo {

std::string_view to_string(ExpertStructure v) {
  switch (v) {
    case ExpertStructure::simple: return "simple";
    case ExpertStructure::bottleneck: return "bottleneck";
    case ExpertStructure::ffn: return "ffn";
  }
  return "?";
}

std::string_view to_string(GatingVariant v) {
  switch (v) {
    case GatingVariant::attention: return "attention";
    case GatingVariant::simple_add: return "simple_add";
    case GatingVariant::simple_concat: return "simple_concat";
  }
  return "?";
}

ExpertStructure parse_expert_structure(std::string_view text) {
  for (auto v : {ExpertStructure::simple, ExpertStructure::bottleneck, ExpertStructure::ffn}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown expert structure '" + std::string(text) + "'");
}

GatingVariant parse_gating_variant(std::string_view text) {
  for (auto v : {GatingVariant::attention, GatingVariant::simple_add,
                 GatingVariant::simple_concat}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown gating variant '" + std::string(text) + "'");
}

Atmoe::Atmoe(ParameterStore& store, const std::string& name, const AtmoeConfig& config, Rng& rng)
    : config_(config) {
  const Index c = config_.dim;
  if (config_.heads <= 0 || c % config_.heads != 0) {
    throw ConfigError("ATMoE: dim " + std::to_string(c) + " not divisible by " +
                      std::to_string(config_.heads) + " heads");
  }
  constexpr auto g = ParamGroup::modules;
  if (config_.gating == GatingVariant::attention) {
    reduction_ = Linear(store, name + ".reduction", kNumDecoupled * c, c, g, rng);
    reduction_norm_ = BatchNorm(store, name + ".reduction_norm", c, g);
    w_q_ = Linear(store, name + ".w_q", c, c, g, rng, false);
    w_k_ = Linear(store, name + ".w_k", c, c, g, rng, false);
  } else {
    simple_gate_ = Linear(store, name + ".simple_gate", kNumDecoupled * c, kNumDecoupled, g, rng);
  }
  for (DecoupledSlot s : kDecoupledSlots) {
    const std::string en = name + ".experts." + std::string(slot_name(s));
    Expert& e = experts_[static_cast<size_t>(s)];
    switch (config_.expert) {
      case ExpertStructure::simple:
        e.first = Linear(store, en + ".fc", c, c, g, rng);
        break;
      case ExpertStructure::bottleneck: {
        const Index hidden = std::max<Index>(1, c / 4);
        e.first = Linear(store, en + ".fc1", c, hidden, g, rng);
        e.second = Linear(store, en + ".fc2", hidden, c, g, rng);
        break;
      }
      case ExpertStructure::ffn:
        e.first = Linear(store, en + ".fc1", c, 4 * c, g, rng);
        e.second = Linear(store, en + ".fc2", 4 * c, c, g, rng);
        break;
    }
    e.norm = BatchNorm(store, en + ".norm", c, g);
  }
}

Index Atmoe::feature_dim() const {
  return config_.gating == GatingVariant::simple_add ? config_.dim : kNumDecoupled * config_.dim;
}

Var Atmoe::reduce_query(const Var& concatenated, const RunMode& mode) const {
  if (config_.gating != GatingVariant::attention) {
    throw StateError("ATMoE: reduction layer only exists for attention gating");
  }
  if (concatenated.cols() != kNumDecoupled * config_.dim) {
    throw InputError("reduce_query: expected " + std::to_string(kNumDecoupled) +
                     " concatenated decoupled features");
  }
  return reduction_norm_(ops::gelu(reduction_(concatenated)), mode);
}

Var Atmoe::gate(const Var& query, const Var& decoupled) const {
  if (config_.gating != GatingVariant::attention) {
    throw StateError("ATMoE: attention gate requested for a simple-gated model");
  }
  const Index batch = query.rows();
  if (decoupled.rows() != batch * kNumDecoupled) {
    throw InputError("gate: decoupled rows must be batch * 7");
  }
  return ops::attention_probs(w_q_(query), w_k_(decoupled), batch, config_.heads);
}

Var Atmoe::expert(const Var& x, int slot, const RunMode& mode) const {
  if (slot < 0 || slot >= kNumDecoupled) {
    throw InputError("expert: slot " + std::to_string(slot) + " out of range");
  }
  const Expert& e = experts_[static_cast<size_t>(slot)];
  Var h = ops::gelu(e.first(x));
  if (e.second.weight.defined()) h = e.second(h);
  return e.norm(h, mode);
}

Var Atmoe::simple_weights(const Var& concatenated) const {
  if (config_.gating == GatingVariant::attention) {
    throw StateError("ATMoE: simple gate requested for an attention-gated model");
  }
  return ops::softmax_rows(simple_gate_(concatenated));
}

AtmoeOutput Atmoe::forward(const Var& decoupled, const RunMode& mode) const {
  const Index c = config_.dim;
  if (decoupled.cols() != c || decoupled.rows() == 0 || decoupled.rows() % kNumDecoupled != 0) {
    throw InputError("ATMoE: decoupled input must be (batch*7) x " + std::to_string(c));
  }
  const Index batch = decoupled.rows() / kNumDecoupled;
  Var concatenated = ops::reshape(decoupled, batch, kNumDecoupled * c);

  std::vector<Var> outs;
  outs.reserve(kNumDecoupled);
  for (int e = 0; e < kNumDecoupled; ++e) {
    std::vector<Index> rows(static_cast<size_t>(batch));
    for (Index b = 0; b < batch; ++b) rows[b] = b * kNumDecoupled + e;
    outs.push_back(expert(ops::gather_rows(decoupled, rows), e, mode));
  }
  AtmoeOutput out;
  out.experts = ops::concat_cols(outs);

  if (config_.gating == GatingVariant::attention) {
    out.gate = gate(reduce_query(concatenated, mode), decoupled);
    out.final_feature = weighted_mix(out.experts, out.gate, config_.heads);
  } else {
    out.gate = simple_weights(concatenated);
    out.final_feature =
        combine_simple(out.experts, out.gate, config_.gating == GatingVariant::simple_add);
  }
  return out;
}

Var weighted_mix(const Var& experts, const Var& gate, Index heads) {
  const Index n_d = gate.cols();
  if (heads <= 0 || n_d <= 0 || gate.rows() % heads != 0) {
    throw InputError("weighted_mix: gate rows must be batch * heads");
  }
  const Index batch = gate.rows() / heads;
  if (experts.rows() != batch || experts.cols() % n_d != 0) {
    throw InputError("weighted_mix: experts must be batch x (n_d * C)");
  }
  const Index c = experts.cols() / n_d;
  if (c % heads != 0) {
    throw ConfigError("weighted_mix: expert width " + std::to_string(c) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  const Index chunk = c / heads;
  std::vector<Index> idx(static_cast<size_t>(experts.value().size()));
  for (Index b = 0; b < batch; ++b) {
    for (Index e = 0; e < n_d; ++e) {
      for (Index h = 0; h < heads; ++h) {
        for (Index k = 0; k < chunk; ++k) {
          idx[static_cast<size_t>(b * n_d * c + e * c + h * chunk + k)] = (b * heads + h) * n_d + e;
        }
      }
    }
  }
  return ops::mul(experts, ops::gather_elements(gate, idx, batch, n_d * c));
}

Var combine_simple(const Var& experts, const Var& weights, bool add) {
  const Index batch = weights.rows();
  const Index n_d = weights.cols();
  if (experts.rows() != batch || n_d == 0 || experts.cols() % n_d != 0) {
    throw InputError("combine_simple: experts must be batch x (n_d * C)");
  }
  const Index c = experts.cols() / n_d;
  std::vector<Index> idx(static_cast<size_t>(experts.value().size()));
  for (Index b = 0; b < batch; ++b) {
    for (Index e = 0; e < n_d; ++e) {
      for (Index k = 0; k < c; ++k) idx[static_cast<size_t>(b * n_d * c + e * c + k)] = b * n_d + e;
    }
  }
  Var weighted = ops::mul(experts, ops::gather_elements(weights, idx, batch, n_d * c));
  if (!add) return weighted;
  Mat stack(n_d * c, c);
  for (Index e = 0; e < n_d; ++e) stack.middleRows(e * c, c) = Mat::Identity(c, c);
  return ops::matmul_const(weighted, stack);
}

namespace {

Var as_rows(const DecoupledSet& d) {
  const Index c = d.features[0].size();
  Mat m(kNumDecoupled, c);
  for (int s = 0; s < kNumDecoupled; ++s) {
    if (d.features[s].size() != c) throw InputError("decoupled features differ in width");
    m.row(s) = d.features[s];
  }
  return Var(m);
}

const RunMode kEval{false, false};

}  // namespace

Eigen::RowVectorXd reduce_query(const DecoupledSet& decoupled, const Atmoe& params) {
  NoGradGuard guard;
  Var rows = as_rows(decoupled);
  return params.reduce_query(ops::reshape(rows, 1, rows.value().size()), kEval).value().row(0);
}

GateTensor gate(const Eigen::RowVectorXd& query, const DecoupledSet& decoupled,
                const Atmoe& params) {
  if (params.config().dim % params.config().heads != 0) {
    throw ConfigError("gate: dim not divisible by heads");
  }
  NoGradGuard guard;
  return GateTensor{params.gate(Var(Mat(query)), as_rows(decoupled)).value()};
}

Eigen::RowVectorXd expert_forward(const Eigen::RowVectorXd& x, int slot, const Atmoe& params) {
  NoGradGuard guard;
  return params.expert(Var(Mat(x)), slot, kEval).value().row(0);
}

Eigen::RowVectorXd weighted_mix(std::span<const Eigen::RowVectorXd> experts,
                                const GateTensor& gate) {
  if (static_cast<Index>(experts.size()) != gate.experts()) {
    throw InputError("weighted_mix: expert count does not match gate width");
  }
  NoGradGuard guard;
  const Index c = experts.front().size();
  Mat cat(1, c * static_cast<Index>(experts.size()));
  for (size_t e = 0; e < experts.size(); ++e) {
    if (experts[e].size() != c) throw InputError("weighted_mix: experts differ in width");
    cat.block(0, static_cast<Index>(e) * c, 1, c) = experts[e];
  }
  return weighted_mix(Var(cat), Var(gate.weights), gate.heads()).value().row(0);
}

Eigen::RowVectorXd simple_gate(const DecoupledSet& decoupled, bool add, const Atmoe& params) {
  NoGradGuard guard;
  Var rows = as_rows(decoupled);
  Var concatenated = ops::reshape(rows, 1, rows.value().size());
  std::vector<Var> outs;
  for (int e = 0; e < kNumDecoupled; ++e) {
    outs.push_back(params.expert(Var(Mat(decoupled.features[e])), e, kEval));
  }
  return combine_simple(ops::concat_cols(outs), params.simple_weights(concatenated), add)
      .value()
      .row(0);
}

}  // namespace demo
