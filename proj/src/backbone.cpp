// SPDX-License-Identifier: Apache-2.0
#include "demo/backbone.hpp"

#include <cmath>
#include <string>

#include "demo/checkpoint.hpp"
#include "demo/errors.hpp"

namespace demo {

void EncoderConfig::validate() const {
  if (patch_size <= 0 || image_height <= 0 || image_width <= 0 || channels <= 0) {
    throw ConfigError("encoder: image geometry must be positive");
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("encoder: image " + std::to_string(image_height) + "x" +
                      std::to_string(image_width) + " not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (depth < 0 || mlp_ratio <= 0) throw ConfigError("encoder: invalid depth or mlp_ratio");
}

Var EncoderOutput::class_tokens() const {
  std::vector<Index> idx(static_cast<size_t>(batch));
  for (Index b = 0; b < batch; ++b) idx[b] = b * (num_patches + 1);
  return ops::gather_rows(tokens, idx);
}

Var EncoderOutput::patch_tokens() const {
  std::vector<Index> idx;
  idx.reserve(static_cast<size_t>(batch * num_patches));
  for (Index b = 0; b < batch; ++b) {
    for (Index p = 0; p < num_patches; ++p) idx.push_back(b * (num_patches + 1) + 1 + p);
  }
  return ops::gather_rows(tokens, idx);
}

Mat patchify(const ImageStack& images, Index patch_size) {
  const Index gh = images.height / patch_size;
  const Index gw = images.width / patch_size;
  const Index np = gh * gw;
  Mat out(images.count * np, images.channels * patch_size * patch_size);
  for (Index n = 0; n < images.count; ++n) {
    for (Index py = 0; py < gh; ++py) {
      for (Index px = 0; px < gw; ++px) {
        const Index row = n * np + py * gw + px;
        Index col = 0;
        for (Index c = 0; c < images.channels; ++c) {
          for (Index dy = 0; dy < patch_size; ++dy) {
            for (Index dx = 0; dx < patch_size; ++dx) {
              out(row, col++) = images.at(n, c, py * patch_size + dy, px * patch_size + dx);
            }
          }
        }
      }
    }
  }
  return out;
}

Backbone::Backbone(ParameterStore& store, const EncoderConfig& config, Rng& rng)
    : config_(config), store_(&store) {
  config_.validate();
  const Index c = config_.embed_dim;
  const Index patch_dim = config_.channels * config_.patch_size * config_.patch_size;
  const Index np = config_.num_patches();
  const int stream_count = config_.share_across_modalities ? 1 : kNumModalities;
  for (int s = 0; s < stream_count; ++s) {
    const std::string prefix =
        "encoder." + std::string(config_.share_across_modalities
                                     ? "shared"
                                     : modality_tag(static_cast<Modality>(s)));
    constexpr auto g = ParamGroup::encoder;
    Stream st;
    st.patch_embed = Linear(store, prefix + ".patch_embed", patch_dim, c, g, rng);
    st.class_token = store.add(prefix + ".class_token", rng.normal_matrix(1, c, 0.02), g);
    st.pos_embed = store.add(prefix + ".pos_embed", rng.normal_matrix(np + 1, c, 0.02), g);
    for (Index i = 0; i < config_.depth; ++i) {
      const std::string bp = prefix + ".blocks." + std::to_string(i);
      Block blk;
      blk.ln1 = LayerNorm(store, bp + ".ln1", c, g);
      blk.q = Linear(store, bp + ".attn.q", c, c, g, rng);
      blk.k = Linear(store, bp + ".attn.k", c, c, g, rng, false);
      blk.v = Linear(store, bp + ".attn.v", c, c, g, rng);
      blk.o = Linear(store, bp + ".attn.o", c, c, g, rng);
      blk.ln2 = LayerNorm(store, bp + ".ln2", c, g);
      blk.fc1 = Linear(store, bp + ".mlp.fc1", c, c * config_.mlp_ratio, g, rng);
      blk.fc2 = Linear(store, bp + ".mlp.fc2", c * config_.mlp_ratio, c, g, rng);
      st.blocks.push_back(std::move(blk));
    }
    st.final_norm = LayerNorm(store, prefix + ".final_norm", c, g);
    streams_.push_back(std::move(st));
  }
}

const Backbone::Stream& Backbone::stream(Modality m) const {
  return config_.share_across_modalities ? streams_.front()
                                         : streams_.at(static_cast<size_t>(m));
}

void Backbone::check_input(const ImageStack& images) const {
  if (images.height != config_.image_height || images.width != config_.image_width ||
      images.channels != config_.channels) {
    throw ConfigError("encoder: input " + std::to_string(images.channels) + "x" +
                      std::to_string(images.height) + "x" + std::to_string(images.width) +
                      " does not match configured " + std::to_string(config_.channels) + "x" +
                      std::to_string(config_.image_height) + "x" +
                      std::to_string(config_.image_width));
  }
  if (images.count <= 0) throw InputError("encoder: empty image batch");
  if (static_cast<Index>(images.data.size()) != images.count * images.image_size()) {
    throw InputError("encoder: image buffer size does not match its geometry");
  }
  for (double v : images.data) {
    if (!std::isfinite(v)) throw InputError("encoder: non-finite pixel value");
  }
}

EncoderOutput Backbone::forward(Modality m, const ImageStack& images) const {
  check_input(images);
  const Stream& st = stream(m);
  const Index batch = images.count;
  const Index np = config_.num_patches();
  const Index heads = config_.num_heads;

  Var patches(patchify(images, config_.patch_size));
  Var embedded = st.patch_embed(patches);

  // Interleave one class token ahead of each sample's patch rows.
  std::vector<Var> parts{st.class_token, embedded};
  Var pool = ops::concat_rows(parts);
  std::vector<Index> layout;
  layout.reserve(static_cast<size_t>(batch * (np + 1)));
  for (Index b = 0; b < batch; ++b) {
    layout.push_back(0);
    for (Index p = 0; p < np; ++p) layout.push_back(1 + b * np + p);
  }
  Var x = ops::add_tiled(ops::gather_rows(pool, layout), st.pos_embed);

  for (const auto& blk : st.blocks) {
    Var h = blk.ln1(x);
    Var probs = ops::attention_probs(blk.q(h), blk.k(h), batch, heads);
    Var attended = ops::attention_apply(probs, blk.v(h), batch, heads);
    x = ops::add(x, blk.o(attended));
    Var h2 = blk.ln2(x);
    x = ops::add(x, blk.fc2(ops::gelu(blk.fc1(h2))));
  }
  x = st.final_norm(x);
  return EncoderOutput{x, batch, np};
}

std::vector<TokenSet> Backbone::encode(Modality m, const ImageStack& images) const {
  NoGradGuard guard;
  EncoderOutput out = forward(m, images);
  const Index np = out.num_patches;
  std::vector<TokenSet> result;
  result.reserve(static_cast<size_t>(out.batch));
  for (Index b = 0; b < out.batch; ++b) {
    TokenSet ts;
    ts.modality = m;
    ts.class_token = out.tokens.value().row(b * (np + 1));
    ts.patch_tokens = out.tokens.value().middleRows(b * (np + 1) + 1, np);
    result.push_back(std::move(ts));
  }
  return result;
}

void Backbone::load_weights(const ArrayArchive& archive) const {
  load_parameters(archive, *store_, "encoder.");
}

std::vector<std::string> Backbone::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : store_->params()) {
    if (p.name.rfind("encoder.", 0) == 0) names.push_back(p.name);
  }
  return names;
}

}  // namespace demo
