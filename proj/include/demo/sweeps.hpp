// SPDX-License-Identifier: Apache-2.0
//
// Missing-modality and ablation sweeps with their result tables.
#pragma once

#include <array>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "demo/config.hpp"
#include "demo/trainer.hpp"

namespace demo {

/// The six missing-modality settings: M(RGB), M(NIR), M(TIR), M(RGB+NIR),
/// M(RGB+TIR), M(NIR+TIR).
const std::array<std::set<Modality>, 6>& missing_patterns();
std::string missing_label(const std::set<Modality>& missing);

struct SweepRow {
  std::string label;
  double map = 0.0;
  double rank1 = 0.0;
};

struct MissingSweep {
  SweepRow full;                 // nothing masked, for reference
  std::vector<SweepRow> rows;    // six patterns then "Average"
};

MissingSweep sweep_missing(const DeMoModel& model, const ImageDataset& dataset,
                           std::span<const std::size_t> positions, const EvalOptions& options);

/// Patterns as columns, mAP and Rank-1 as rows.
std::string format_missing_table(const MissingSweep& sweep);
void write_missing_tsv(const std::filesystem::path& path, const MissingSweep& sweep);

struct AblationCell {
  std::string name;
  std::vector<std::string> overrides;  // "section.key=value"
};

/// Named matrices: models, gating, pooling, experts, interaction, all.
std::vector<AblationCell> ablation_preset(const std::string& name);

struct AblationRow {
  std::string name;
  std::string fingerprint;
  double map = 0.0;
  double rank1 = 0.0;
  std::size_t params = 0;
  bool ok = false;
  std::string error;
};

/// Compact description of the model-shaping keys plus a short hash of the full config.
std::string config_fingerprint(const ExperimentConfig& config);

/// Trains and evaluates every cell on top of `base`; a failing cell is
/// recorded and the sweep moves on.
std::vector<AblationRow> sweep_ablation(const ExperimentConfig& base,
                                        std::span<const AblationCell> cells,
                                        const ImageDataset& dataset,
                                        const std::function<void(const AblationRow&)>& on_row = {});

std::string format_ablation_table(std::span<const AblationRow> rows);
void write_ablation_tsv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace demo
