// SPDX-License-Identifier: Apache-2.0
//
// Model assembly: backbone -> PIFE -> HDM -> ATMoE with the ablation lattice
// A (class tokens) < B (+PIFE) < C (+HDM) < D (+ATMoE) < E (D with [f, f_m]).
#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "demo/atmoe.hpp"
#include "demo/backbone.hpp"
#include "demo/hdm.hpp"
#include "demo/losses.hpp"
#include "demo/pife.hpp"

namespace demo {

enum class InferenceStreams {
  joint,           // the supervised joint feature only
  joint_and_modality,  // [joint, f_R, f_N, f_T]
};

std::string_view to_string(InferenceStreams v);
InferenceStreams parse_inference_streams(std::string_view text);

struct ModelConfig {
  EncoderConfig encoder;
  bool use_pife = true;
  bool use_hdm = true;
  bool use_atmoe = true;
  InferenceStreams inference = InferenceStreams::joint_and_modality;
  PoolingMode pooling = PoolingMode::average;
  HdmInteraction interaction = HdmInteraction::cross_attention;
  /// 0 reuses the encoder head count.
  Index hdm_heads = 0;
  GatingVariant gating = GatingVariant::attention;
  Index moe_heads = 4;
  ExpertStructure expert = ExpertStructure::simple;
  LossConfig loss;

  /// Checks the flag lattice and every sub-configuration.
  void validate() const;
  /// 'A'..'E' for the named ablation points, '-' for other valid combinations.
  char variant() const;
  Index effective_hdm_heads() const { return hdm_heads > 0 ? hdm_heads : encoder.num_heads; }
  /// Flags for one of the named models A-E applied on top of this config.
  ModelConfig with_variant(char letter) const;
};

/// Per-modality inputs in R, N, T order.
using ModalImages = std::array<ImageStack, 3>;

struct ForwardResult {
  std::array<Var, 3> modality;  // f_m, or raw class tokens without PIFE
  Var joint;                    // supervised joint feature
  std::optional<HdmOutput> hdm;
  std::optional<AtmoeOutput> atmoe;
};

class DeMoModel {
 public:
  explicit DeMoModel(const ModelConfig& config);
  DeMoModel(const DeMoModel&) = delete;
  DeMoModel& operator=(const DeMoModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  std::size_t parameter_count() const { return store_.parameter_count(); }

  ForwardResult forward(const ModalImages& images, const RunMode& mode,
                        bool retain_attention = false) const;
  CompositeLoss loss(const ForwardResult& result, std::span<const std::int64_t> labels) const;

  /// Retrieval descriptor per the configured inference streams.
  Mat descriptor(const ForwardResult& result) const;
  Index descriptor_dim() const;
  Index joint_dim() const;

  const Backbone& backbone() const { return *backbone_; }
  const Pife* pife(Modality m) const;
  const Hdm* hdm() const { return hdm_.get(); }
  const Atmoe* atmoe() const { return atmoe_.get(); }
  const ClassifierHeads& heads() const { return heads_; }

 private:
  ModelConfig config_;
  ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  std::array<std::unique_ptr<Pife>, 3> pife_;
  std::unique_ptr<Hdm> hdm_;
  std::unique_ptr<Atmoe> atmoe_;
  ClassifierHeads heads_;
};

std::unique_ptr<DeMoModel> build_model(const ModelConfig& config);

}  // namespace demo
