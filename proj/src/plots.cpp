// SPDX-License-Identifier: Apache-2.0
#include "demo/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "demo/errors.hpp"
#include "demo/render.hpp"

namespace demo {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, int line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ParseError("'" + s + "' is not a finite number", line);
  }
  return v;
}

std::int64_t parse_integer(const std::string& s, int line) {
  const double v = parse_number(s, line);
  if (v != std::floor(v)) throw ParseError("'" + s + "' is not an integer", line);
  return static_cast<std::int64_t>(v);
}

}  // namespace

std::vector<GateRow> parse_gate_export(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open gate export " + path.string());
  std::string line;
  int lineno = 0;
  std::vector<GateRow> rows;
  constexpr size_t kFields = 3 + kNumDecoupled;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (!header_seen) {
      if (f.size() != kFields || f[0] != "instance") {
        throw ParseError("expected header 'instance id head D_R ... D_RNT'", lineno);
      }
      header_seen = true;
      continue;
    }
    if (f.size() != kFields) {
      throw ParseError("expected " + std::to_string(kFields) + " tab-separated fields, found " +
                           std::to_string(f.size()),
                       lineno);
    }
    GateRow r;
    r.instance = parse_integer(f[0], lineno);
    r.id = parse_integer(f[1], lineno);
    r.head = parse_integer(f[2], lineno);
    for (int e = 0; e < kNumDecoupled; ++e) {
      r.weights[e] = parse_number(f[3 + e], lineno);
      if (r.weights[e] < 0) throw ParseError("negative gate weight", lineno);
    }
    rows.push_back(r);
  }
  if (!header_seen) throw ParseError("empty gate export", lineno);
  return rows;
}

std::vector<InstanceGates> average_heads(std::span<const GateRow> rows) {
  std::map<Index, std::pair<InstanceGates, Index>> acc;
  for (const auto& r : rows) {
    auto& [g, n] = acc[r.instance];
    g.instance = r.instance;
    g.id = r.id;
    for (int e = 0; e < kNumDecoupled; ++e) g.mean[e] += r.weights[e];
    ++n;
  }
  std::vector<InstanceGates> out;
  for (auto& [inst, gn] : acc) {
    auto& [g, n] = gn;
    for (auto& v : g.mean) v /= static_cast<double>(n);
    out.push_back(g);
  }
  return out;
}

std::vector<InstanceGates> plot_gates(const fs::path& gate_tsv, const fs::path& png,
                                      Index max_instances) {
  const auto rows = parse_gate_export(gate_tsv);
  auto gates = average_heads(rows);
  if (gates.empty()) throw ParseError("gate export has no data rows", 1);
  if (max_instances > 0 && static_cast<Index>(gates.size()) > max_instances) {
    gates.resize(static_cast<size_t>(max_instances));
  }
  constexpr int kBar = 10, kGap = 3, kPanelH = 80, kMargin = 8;
  constexpr int kPanelW = kNumDecoupled * kBar + (kNumDecoupled + 1) * kGap;
  const int n = static_cast<int>(gates.size());
  const int cols = std::min(n, 8);
  const int grid_rows = (n + cols - 1) / cols;
  double top = 0.0;
  for (const auto& g : gates) top = std::max(top, *std::max_element(g.mean.begin(), g.mean.end()));
  if (top <= 0) top = 1.0;

  Raster img = render::canvas(cols * (kPanelW + kMargin) + kMargin,
                                      grid_rows * (kPanelH + kMargin) + kMargin);
  for (int i = 0; i < n; ++i) {
    const int px = kMargin + (i % cols) * (kPanelW + kMargin);
    const int py = kMargin + (i / cols) * (kPanelH + kMargin);
    render::frame(img, px, py, kPanelW, kPanelH, 1, render::kGray);
    for (int e = 0; e < kNumDecoupled; ++e) {
      const int h = static_cast<int>(std::lround(gates[i].mean[e] / top * (kPanelH - 4)));
      render::fill_rect(img, px + kGap + e * (kBar + kGap), py + kPanelH - 2 - h, kBar, h,
                        render::palette(e));
    }
  }
  write_png(png, img);
  return gates;
}

Index plot_attention(const DeMoModel& model, const ImageDataset& dataset,
                     std::span<const std::size_t> positions, const fs::path& out_dir) {
  if (!model.hdm()) throw StateError("attention heatmaps need a model with HDM");
  fs::create_directories(out_dir);
  const auto& enc = model.config().encoder;
  const int cell = static_cast<int>(std::max<Index>(4, enc.patch_size));
  nlohmann::json side = nlohmann::json::array();
  Index written = 0;
  NoGradGuard guard;
  for (std::size_t pos : positions) {
    const std::size_t one[1] = {pos};
    const ModalBatch batch = dataset.batch(one);
    const ForwardResult fr = model.forward(batch.images, RunMode{false, false}, true);
    const auto maps = dump_decoupling_attention(*fr.hdm, 0, enc.grid_height(), enc.grid_width());
    for (const auto& hm : maps) {
      const std::string file = "attn_" + std::to_string(pos) + "_" +
                               std::string(slot_name(hm.slot)) + "_" +
                               std::string(modality_tag(hm.modality)) + ".png";
      write_png(out_dir / file, render::heatmap(hm.grid, cell));
      ++written;
      std::vector<std::vector<double>> grid(static_cast<size_t>(hm.grid.rows()));
      for (Index r = 0; r < hm.grid.rows(); ++r) {
        for (Index c = 0; c < hm.grid.cols(); ++c) grid[r].push_back(hm.grid(r, c));
      }
      side.push_back({{"sample", pos},
                      {"id", batch.labels[0]},
                      {"slot", slot_name(hm.slot)},
                      {"modality", modality_name(hm.modality)},
                      {"image", file},
                      {"grid", grid}});
    }
  }
  std::ofstream(out_dir / "attention.json") << side.dump(1) << '\n';
  return written;
}

}  // namespace demo
