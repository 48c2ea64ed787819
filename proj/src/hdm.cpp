// SPDX-License-Identifier: Apache-2.0
#include "demo/hdm.hpp"

#include <algorithm>

#include "demo/errors.hpp"

namespace demo {

std::string_view slot_name(DecoupledSlot slot) {
  switch (slot) {
    case DecoupledSlot::R: return "D_R";
    case DecoupledSlot::N: return "D_N";
    case DecoupledSlot::T: return "D_T";
    case DecoupledSlot::RN: return "D_RN";
    case DecoupledSlot::NT: return "D_NT";
    case DecoupledSlot::TR: return "D_TR";
    case DecoupledSlot::RNT: return "D_RNT";
  }
  return "?";
}

std::vector<Modality> slot_modalities(DecoupledSlot slot) {
  using M = Modality;
  switch (slot) {
    case DecoupledSlot::R: return {M::R};
    case DecoupledSlot::N: return {M::N};
    case DecoupledSlot::T: return {M::T};
    case DecoupledSlot::RN: return {M::R, M::N};
    case DecoupledSlot::NT: return {M::N, M::T};
    case DecoupledSlot::TR: return {M::T, M::R};
    case DecoupledSlot::RNT: return {M::R, M::N, M::T};
  }
  return {};
}

int slot_level(DecoupledSlot slot) {
  return static_cast<int>(slot_modalities(slot).size()) - 1;
}

std::string_view to_string(HdmInteraction v) {
  switch (v) {
    case HdmInteraction::cross_attention: return "cross_attention";
    case HdmInteraction::cross_attention_no_fused: return "cross_attention_no_fused";
    case HdmInteraction::no_interaction: return "no_interaction";
    case HdmInteraction::transformer_block: return "transformer_block";
  }
  return "?";
}

HdmInteraction parse_hdm_interaction(std::string_view text) {
  for (auto v : {HdmInteraction::cross_attention, HdmInteraction::cross_attention_no_fused,
                 HdmInteraction::no_interaction, HdmInteraction::transformer_block}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown HDM interaction '" + std::string(text) + "'");
}

CrossAttention::CrossAttention(ParameterStore& store, const std::string& name, Index dim,
                               Index heads_, Rng& rng)
    : heads(heads_) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("cross-attention: dim " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  constexpr auto g = ParamGroup::modules;
  q = Linear(store, name + ".q", dim, dim, g, rng);
  // A key bias only shifts every logit of a row equally, so it is left out.
  k = Linear(store, name + ".k", dim, dim, g, rng, false);
  v = Linear(store, name + ".v", dim, dim, g, rng);
  o = Linear(store, name + ".o", dim, dim, g, rng);
}

Var CrossAttention::forward(const Var& queries, const Var& keys, Index blocks,
                            Mat* weights_out) const {
  if (blocks <= 0 || queries.rows() != blocks) {
    throw InputError("cross-attention: expected one query row per block");
  }
  if (keys.rows() == 0 || keys.rows() % blocks != 0) {
    throw InputError("cross-attention: empty or ragged key set");
  }
  Var probs = ops::attention_probs(q(queries), k(keys), blocks, heads);
  if (weights_out) *weights_out = probs.value();
  return o(ops::attention_apply(probs, v(keys), blocks, heads));
}

namespace {

const FusedFeature& find_fused(std::span<const FusedFeature> fused, Modality m) {
  for (const auto& f : fused) {
    if (f.modality == m) return f;
  }
  throw InputError("HDM: no fused feature for modality " + std::string(modality_tag(m)));
}

const TokenSet& find_tokens(std::span<const TokenSet> tokens, Modality m) {
  for (const auto& t : tokens) {
    if (t.modality == m) return t;
  }
  throw InputError("HDM: no token set for modality " + std::string(modality_tag(m)));
}

Mat build_keys(DecoupledSlot slot, std::span<const FusedFeature> fused,
               std::span<const TokenSet> tokens) {
  const auto mods = slot_modalities(slot);
  const TokenSet& first = find_tokens(tokens, mods.front());
  const Index np = first.patch_tokens.rows();
  const Index c = first.patch_tokens.cols();
  Mat keys(static_cast<Index>(mods.size()) * (np + 1), c);
  Index row = 0;
  for (Modality m : mods) {
    const FusedFeature& f = find_fused(fused, m);
    const TokenSet& t = find_tokens(tokens, m);
    if (t.patch_tokens.rows() != np || t.patch_tokens.cols() != c || f.value.size() != c) {
      throw InputError("HDM: inconsistent token geometry across modalities");
    }
    keys.row(row++) = f.value;
    keys.middleRows(row, np) = t.patch_tokens;
    row += np;
  }
  return keys;
}

}  // namespace

Mat build_keys_unimodal(const FusedFeature& fused, const TokenSet& tokens) {
  if (fused.modality != tokens.modality) {
    throw InputError("build_keys_unimodal: fused feature is " +
                     std::string(modality_tag(fused.modality)) + " but tokens are " +
                     std::string(modality_tag(tokens.modality)));
  }
  const std::array<FusedFeature, 1> f{fused};
  const std::array<TokenSet, 1> t{tokens};
  return build_keys(static_cast<DecoupledSlot>(static_cast<int>(fused.modality)), f, t);
}

Mat build_keys_bimodal(DecoupledSlot pair, std::span<const FusedFeature> fused,
                       std::span<const TokenSet> tokens) {
  if (slot_level(pair) != 1) {
    throw InputError("build_keys_bimodal: " + std::string(slot_name(pair)) + " is not a pair");
  }
  return build_keys(pair, fused, tokens);
}

Mat build_keys_trimodal(std::span<const FusedFeature> fused, std::span<const TokenSet> tokens) {
  return build_keys(DecoupledSlot::RNT, fused, tokens);
}

Eigen::RowVectorXd cross_attend(const Eigen::RowVectorXd& query, const Mat& keys,
                                const CrossAttention& params) {
  if (keys.rows() == 0) throw InputError("cross_attend: empty key set");
  NoGradGuard guard;
  return params.forward(Var(Mat(query)), Var(keys), 1).value().row(0);
}

Hdm::Hdm(ParameterStore& store, const std::string& name, const HdmConfig& config, Rng& rng)
    : config_(config) {
  const Index c = config_.dim;
  constexpr auto g = ParamGroup::modules;
  if (config_.interaction == HdmInteraction::no_interaction) {
    for (DecoupledSlot s : kDecoupledSlots) {
      const Index in = c * static_cast<Index>(slot_modalities(s).size());
      reducers_[static_cast<size_t>(s)] =
          Linear(store, name + ".reduce." + std::string(slot_name(s)), in, c, g, rng);
    }
    return;
  }
  queries_ = store.add(name + ".queries", rng.normal_matrix(kNumDecoupled, c, 0.02), g);
  const char* level_names[3] = {"unimodal", "bimodal", "trimodal"};
  for (int l = 0; l < 3; ++l) {
    const std::string ln = name + "." + level_names[l];
    levels_[l] = CrossAttention(store, ln + ".attn", c, config_.heads, rng);
    if (config_.interaction == HdmInteraction::transformer_block) {
      wraps_[l].norm_q = LayerNorm(store, ln + ".norm_q", c, g);
      wraps_[l].norm_ffn = LayerNorm(store, ln + ".norm_ffn", c, g);
      wraps_[l].fc1 = Linear(store, ln + ".ffn.fc1", c, 4 * c, g, rng);
      wraps_[l].fc2 = Linear(store, ln + ".ffn.fc2", 4 * c, c, g, rng);
    }
  }
}

Var Hdm::attend_level(int level, const Var& queries, const Var& keys, Index blocks,
                      Mat* weights_out) const {
  const CrossAttention& attn = levels_[level];
  if (config_.interaction != HdmInteraction::transformer_block) {
    return attn.forward(queries, keys, blocks, weights_out);
  }
  const BlockWrap& w = wraps_[level];
  Var x = ops::add(queries, attn.forward(w.norm_q(queries), keys, blocks, weights_out));
  return ops::add(x, w.fc2(ops::gelu(w.fc1(w.norm_ffn(x)))));
}

HdmOutput Hdm::forward(const std::array<Var, 3>& fused, const std::array<EncoderOutput, 3>& tokens,
                       bool retain_attention) const {
  const Index batch = tokens[0].batch;
  const Index np = tokens[0].num_patches;
  const Index c = config_.dim;
  for (int m = 0; m < kNumModalities; ++m) {
    if (tokens[m].batch != batch || tokens[m].num_patches != np ||
        fused[m].rows() != batch || fused[m].cols() != c || tokens[m].tokens.cols() != c) {
      throw InputError("HDM: modality inputs disagree on batch size or geometry");
    }
  }
  if (batch == 0) throw InputError("HDM: empty batch");

  HdmOutput out;
  std::array<Var, kNumDecoupled> per_slot;  // each batch x C

  if (config_.interaction == HdmInteraction::no_interaction) {
    if (retain_attention) {
      throw StateError("HDM: the no-interaction variant has no attention to retain");
    }
    for (DecoupledSlot s : kDecoupledSlots) {
      std::vector<Var> parts;
      for (Modality m : slot_modalities(s)) parts.push_back(fused[static_cast<size_t>(m)]);
      per_slot[static_cast<size_t>(s)] =
          reducers_[static_cast<size_t>(s)](ops::concat_cols(parts));
    }
  } else {
    const bool with_fused = config_.interaction != HdmInteraction::cross_attention_no_fused;
    const Index seg = with_fused ? np + 1 : np;

    // Per-modality key blocks: [f_m; F_m] (or F_m) for every sample.
    std::vector<Var> augmented;
    for (int m = 0; m < kNumModalities; ++m) {
      std::vector<Var> parts{fused[m], tokens[m].tokens};
      Var pool = ops::concat_rows(parts);
      std::vector<Index> idx;
      idx.reserve(static_cast<size_t>(batch * seg));
      for (Index b = 0; b < batch; ++b) {
        if (with_fused) idx.push_back(b);
        for (Index p = 0; p < np; ++p) idx.push_back(batch + b * (np + 1) + 1 + p);
      }
      augmented.push_back(ops::gather_rows(pool, idx));
    }
    Var all_keys = ops::concat_rows(augmented);

    DecouplingAttention maps;
    maps.batch = batch;
    maps.heads = config_.heads;
    maps.num_patches = np;
    maps.includes_fused = with_fused;

    for (int level = 0; level < 3; ++level) {
      std::vector<DecoupledSlot> slots;
      for (DecoupledSlot s : kDecoupledSlots) {
        if (slot_level(s) == level) slots.push_back(s);
      }
      std::vector<Index> key_idx;
      std::vector<Index> query_idx;
      for (DecoupledSlot s : slots) {
        for (Index b = 0; b < batch; ++b) {
          query_idx.push_back(static_cast<Index>(s));
          for (Modality m : slot_modalities(s)) {
            const Index base = static_cast<Index>(m) * batch * seg + b * seg;
            for (Index r = 0; r < seg; ++r) key_idx.push_back(base + r);
          }
        }
      }
      const Index blocks = static_cast<Index>(slots.size()) * batch;
      Mat weights;
      Var attended = attend_level(level, ops::gather_rows(queries_, query_idx),
                                  ops::gather_rows(all_keys, key_idx), blocks,
                                  retain_attention ? &weights : nullptr);
      for (size_t si = 0; si < slots.size(); ++si) {
        std::vector<Index> rows(static_cast<size_t>(batch));
        for (Index b = 0; b < batch; ++b) rows[b] = static_cast<Index>(si) * batch + b;
        per_slot[static_cast<size_t>(slots[si])] = ops::gather_rows(attended, rows);
        if (retain_attention) {
          const Index h = config_.heads;
          maps.weights[static_cast<size_t>(slots[si])] =
              weights.middleRows(static_cast<Index>(si) * batch * h, batch * h);
        }
      }
    }
    if (retain_attention) out.attention = std::move(maps);
  }

  // Sample-major stacking: row b*7 + slot.
  std::vector<Var> slot_list(per_slot.begin(), per_slot.end());
  Var stacked = ops::concat_rows(slot_list);
  std::vector<Index> order;
  order.reserve(static_cast<size_t>(batch * kNumDecoupled));
  for (Index b = 0; b < batch; ++b) {
    for (int s = 0; s < kNumDecoupled; ++s) order.push_back(s * batch + b);
  }
  out.decoupled = ops::gather_rows(stacked, order);
  return out;
}

DecoupledSet Hdm::decouple(std::span<const FusedFeature> fused,
                           std::span<const TokenSet> tokens) const {
  if (fused.empty() || tokens.empty()) throw InputError("decouple: no modalities present");
  NoGradGuard guard;
  std::array<Var, 3> f;
  std::array<EncoderOutput, 3> t;
  for (Modality m : kModalities) {
    const FusedFeature& ff = find_fused(fused, m);
    const TokenSet& ts = find_tokens(tokens, m);
    f[static_cast<size_t>(m)] = Var(Mat(ff.value));
    Mat rows(ts.patch_tokens.rows() + 1, ts.patch_tokens.cols());
    rows.row(0) = ts.class_token;
    rows.bottomRows(ts.patch_tokens.rows()) = ts.patch_tokens;
    t[static_cast<size_t>(m)] = EncoderOutput{Var(rows), 1, ts.patch_tokens.rows()};
  }
  HdmOutput out = forward(f, t);
  DecoupledSet set;
  for (int s = 0; s < kNumDecoupled; ++s) set.features[s] = out.decoupled.value().row(s);
  return set;
}

std::vector<AttentionHeatmap> dump_decoupling_attention(const HdmOutput& output, Index sample,
                                                        Index grid_height, Index grid_width) {
  if (!output.attention) {
    throw StateError("attention maps were not retained in this forward pass");
  }
  const DecouplingAttention& a = *output.attention;
  if (sample < 0 || sample >= a.batch) throw InputError("heatmap: sample index out of range");
  if (grid_height * grid_width != a.num_patches) {
    throw InputError("heatmap: grid does not match patch count");
  }
  const Index seg = a.includes_fused ? a.num_patches + 1 : a.num_patches;
  const Index patch_offset = a.includes_fused ? 1 : 0;

  std::vector<AttentionHeatmap> maps;
  for (DecoupledSlot s : kDecoupledSlots) {
    const Mat& w = a.weights[static_cast<size_t>(s)];
    const Eigen::RowVectorXd head_mean = w.middleRows(sample * a.heads, a.heads).colwise().mean();
    const auto mods = slot_modalities(s);
    for (size_t mi = 0; mi < mods.size(); ++mi) {
      AttentionHeatmap hm{s, mods[mi], Mat(grid_height, grid_width)};
      for (Index p = 0; p < a.num_patches; ++p) {
        hm.grid(p / grid_width, p % grid_width) =
            head_mean(static_cast<Index>(mi) * seg + patch_offset + p);
      }
      maps.push_back(std::move(hm));
    }
  }
  return maps;
}

}  // namespace demo
