// SPDX-License-Identifier: Apache-2.0
//
// Figure writers: gate-weight bar charts and decoupling-attention heatmaps.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "demo/data.hpp"
#include "demo/hdm.hpp"
#include "demo/model.hpp"

namespace demo {

struct GateRow {
  Index instance = 0;
  std::int64_t id = 0;
  Index head = 0;
  std::array<double, kNumDecoupled> weights{};
};

/// Reads the TSV written by export_gates(); ParseError names the offending line.
std::vector<GateRow> parse_gate_export(const std::filesystem::path& path);

struct InstanceGates {
  Index instance = 0;
  std::int64_t id = 0;
  std::array<double, kNumDecoupled> mean{};  // averaged over heads
};
std::vector<InstanceGates> average_heads(std::span<const GateRow> rows);

/// One panel of seven bars per instance, laid out in a grid. Returns the
/// plotted (head-averaged) values.
std::vector<InstanceGates> plot_gates(const std::filesystem::path& gate_tsv,
                                      const std::filesystem::path& png, Index max_instances = 32);

/// Heatmaps of every (slot, modality) pair for each listed sample, named
/// attn_<sample>_<slot>_<modality>.png, plus attention.json with the raw grids.
/// Returns the number of images written.
Index plot_attention(const DeMoModel& model, const ImageDataset& dataset,
                     std::span<const std::size_t> positions, const std::filesystem::path& out_dir);

}  // namespace demo
