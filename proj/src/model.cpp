// SPDX-License-Identifier: Apache-2.0
#include "demo/model.hpp"

#include "demo/errors.hpp"

namespace demo {

std::string_view to_string(InferenceStreams v) {
  return v == InferenceStreams::joint ? "joint" : "joint_and_modality";
}

InferenceStreams parse_inference_streams(std::string_view text) {
  if (text == "joint") return InferenceStreams::joint;
  if (text == "joint_and_modality") return InferenceStreams::joint_and_modality;
  throw ConfigError("unknown inference streams '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  encoder.validate();
  loss.validate();
  if (use_atmoe && !use_hdm) {
    throw ConfigError("use_atmoe requires use_hdm (ATMoE gates the decoupled features)");
  }
  if (inference == InferenceStreams::joint_and_modality && !use_hdm) {
    throw ConfigError(
        "inference=joint_and_modality requires use_hdm (without HDM the joint feature already "
        "is the modality concatenation)");
  }
  const Index hh = effective_hdm_heads();
  if (use_hdm && (hh <= 0 || encoder.embed_dim % hh != 0)) {
    throw ConfigError("HDM heads " + std::to_string(hh) + " do not divide embed_dim");
  }
  if (use_atmoe && (moe_heads <= 0 || encoder.embed_dim % moe_heads != 0)) {
    throw ConfigError("ATMoE heads " + std::to_string(moe_heads) + " do not divide embed_dim");
  }
}

char ModelConfig::variant() const {
  const bool plain = interaction == HdmInteraction::cross_attention;
  if (!use_pife && !use_hdm && !use_atmoe) return 'A';
  if (use_pife && !use_hdm && !use_atmoe) return 'B';
  if (use_pife && use_hdm && !use_atmoe && inference == InferenceStreams::joint && plain) {
    return 'C';
  }
  if (use_pife && use_hdm && use_atmoe && plain) {
    return inference == InferenceStreams::joint ? 'D' : 'E';
  }
  return '-';
}

ModelConfig ModelConfig::with_variant(char letter) const {
  ModelConfig c = *this;
  c.interaction = HdmInteraction::cross_attention;
  c.inference = InferenceStreams::joint;
  switch (letter) {
    case 'A': c.use_pife = c.use_hdm = c.use_atmoe = false; break;
    case 'B': c.use_pife = true; c.use_hdm = c.use_atmoe = false; break;
    case 'C': c.use_pife = c.use_hdm = true; c.use_atmoe = false; break;
    case 'D': c.use_pife = c.use_hdm = c.use_atmoe = true; break;
    case 'E':
      c.use_pife = c.use_hdm = c.use_atmoe = true;
      c.inference = InferenceStreams::joint_and_modality;
      break;
    default: throw ConfigError(std::string("unknown model variant '") + letter + "'");
  }
  return c;
}

DeMoModel::DeMoModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.encoder.seed);
  const Index c = config_.encoder.embed_dim;
  backbone_ = std::make_unique<Backbone>(store_, config_.encoder, rng);
  if (config_.use_pife) {
    for (Modality m : kModalities) {
      pife_[static_cast<size_t>(m)] = std::make_unique<Pife>(
          store_, "pife." + std::string(modality_tag(m)), c, config_.pooling, rng);
    }
  }
  if (config_.use_hdm) {
    hdm_ = std::make_unique<Hdm>(
        store_, "hdm", HdmConfig{c, config_.effective_hdm_heads(), config_.interaction}, rng);
  }
  if (config_.use_atmoe) {
    atmoe_ = std::make_unique<Atmoe>(
        store_, "atmoe", AtmoeConfig{c, config_.moe_heads, config_.expert, config_.gating}, rng);
  }
  heads_ = ClassifierHeads(store_, "classifier", c, joint_dim(), config_.loss.num_classes, rng);
}

const Pife* DeMoModel::pife(Modality m) const { return pife_[static_cast<size_t>(m)].get(); }

Index DeMoModel::joint_dim() const {
  const Index c = config_.encoder.embed_dim;
  if (atmoe_) return atmoe_->feature_dim();
  if (config_.use_hdm) return kNumDecoupled * c;
  return kNumModalities * c;
}

Index DeMoModel::descriptor_dim() const {
  Index d = joint_dim();
  if (config_.inference == InferenceStreams::joint_and_modality) {
    d += kNumModalities * config_.encoder.embed_dim;
  }
  return d;
}

ForwardResult DeMoModel::forward(const ModalImages& images, const RunMode& mode,
                                 bool retain_attention) const {
  const Index batch = images[0].count;
  for (const auto& st : images) {
    if (st.count != batch) throw InputError("model: modality stacks differ in batch size");
  }
  ForwardResult r;
  std::array<EncoderOutput, 3> tokens;
  for (Modality m : kModalities) {
    const size_t i = static_cast<size_t>(m);
    tokens[i] = backbone_->forward(m, images[i]);
    r.modality[i] = pife_[i] ? pife_[i]->forward(tokens[i]) : tokens[i].class_tokens();
  }
  if (!hdm_) {
    std::vector<Var> parts(r.modality.begin(), r.modality.end());
    r.joint = ops::concat_cols(parts);
    return r;
  }
  r.hdm = hdm_->forward(r.modality, tokens, retain_attention);
  if (!atmoe_) {
    r.joint = ops::reshape(r.hdm->decoupled, batch, kNumDecoupled * config_.encoder.embed_dim);
    return r;
  }
  r.atmoe = atmoe_->forward(r.hdm->decoupled, mode);
  r.joint = r.atmoe->final_feature;
  return r;
}

CompositeLoss DeMoModel::loss(const ForwardResult& result,
                              std::span<const std::int64_t> labels) const {
  return composite_loss(result.modality, result.joint, labels, heads_, config_.loss);
}

Mat DeMoModel::descriptor(const ForwardResult& result) const {
  if (config_.inference == InferenceStreams::joint) return result.joint.value();
  const Mat& j = result.joint.value();
  const Index c = config_.encoder.embed_dim;
  Mat out(j.rows(), descriptor_dim());
  out.leftCols(j.cols()) = j;
  for (int m = 0; m < kNumModalities; ++m) {
    out.middleCols(j.cols() + m * c, c) = result.modality[m].value();
  }
  return out;
}

std::unique_ptr<DeMoModel> build_model(const ModelConfig& config) {
  return std::make_unique<DeMoModel>(config);
}

}  // namespace demo
