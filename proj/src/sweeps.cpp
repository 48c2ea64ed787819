// SPDX-License-Identifier: Apache-2.0
#include "demo/sweeps.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "demo/errors.hpp"

namespace demo {

namespace fs = std::filesystem;

const std::array<std::set<Modality>, 6>& missing_patterns() {
  using M = Modality;
  static const std::array<std::set<Modality>, 6> kPatterns{{
      {M::R}, {M::N}, {M::T}, {M::R, M::N}, {M::R, M::T}, {M::N, M::T}}};
  return kPatterns;
}

std::string missing_label(const std::set<Modality>& missing) {
  if (missing.empty()) return "Full";
  std::string s = "M(";
  bool first = true;
  for (Modality m : missing) {
    if (!first) s += "+";
    s += modality_name(m);
    first = false;
  }
  return s + ")";
}

MissingSweep sweep_missing(const DeMoModel& model, const ImageDataset& dataset,
                           std::span<const std::size_t> positions, const EvalOptions& options) {
  auto run = [&](const std::set<Modality>& missing) {
    const FeatureSet f = extract_features(model, dataset, positions, missing);
    const RetrievalResult r = evaluate(f, f, options);
    return SweepRow{missing_label(missing), r.map, r.rank(1)};
  };
  MissingSweep s;
  s.full = run({});
  SweepRow avg{"Average", 0.0, 0.0};
  for (const auto& p : missing_patterns()) {
    s.rows.push_back(run(p));
    avg.map += s.rows.back().map;
    avg.rank1 += s.rows.back().rank1;
  }
  avg.map /= static_cast<double>(missing_patterns().size());
  avg.rank1 /= static_cast<double>(missing_patterns().size());
  s.rows.push_back(avg);
  return s;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

std::string pad(const std::string& s, size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string format_missing_table(const MissingSweep& sweep) {
  std::ostringstream os;
  constexpr size_t kW = 16;
  os << pad("Metric", 8);
  for (const auto& r : sweep.rows) os << pad(r.label, kW);
  os << pad(sweep.full.label, kW) << '\n';
  os << pad("mAP", 8);
  for (const auto& r : sweep.rows) os << pad(pct(r.map), kW);
  os << pad(pct(sweep.full.map), kW) << '\n';
  os << pad("R-1", 8);
  for (const auto& r : sweep.rows) os << pad(pct(r.rank1), kW);
  os << pad(pct(sweep.full.rank1), kW) << '\n';
  return os.str();
}

void write_missing_tsv(const fs::path& path, const MissingSweep& sweep) {
  std::ofstream os(path);
  if (!os) throw ExportError("cannot write " + path.string());
  os.precision(12);
  os << "pattern\tmAP\trank1\n";
  for (const auto& r : sweep.rows) os << r.label << '\t' << r.map << '\t' << r.rank1 << '\n';
}

std::vector<AblationCell> ablation_preset(const std::string& name) {
  std::vector<AblationCell> cells;
  if (name == "models" || name == "all") {
    for (char v : std::string("ABCDE")) {
      cells.push_back({std::string("Model ") + v, {std::string("model.variant=") + v}});
    }
  }
  if (name == "gating" || name == "all") {
    cells.push_back({"simple-add", {"model.variant=D", "model.gating=simple_add"}});
    cells.push_back({"simple-concat", {"model.variant=D", "model.gating=simple_concat"}});
    for (int h : {1, 2, 4, 8}) {
      cells.push_back({"attention H=" + std::to_string(h),
                       {"model.variant=D", "model.gating=attention",
                        "model.moe_heads=" + std::to_string(h)}});
    }
  }
  if (name == "pooling" || name == "all") {
    for (const char* p : {"average", "max", "gem"}) {
      cells.push_back({std::string("pool ") + p, {"model.variant=E", std::string("model.pooling=") + p}});
    }
  }
  if (name == "experts" || name == "all") {
    for (const char* e : {"simple", "bottleneck", "ffn"}) {
      cells.push_back({std::string("expert ") + e, {"model.variant=E", std::string("model.expert=") + e}});
    }
  }
  if (name == "interaction" || name == "all") {
    for (const char* i :
         {"no_interaction", "cross_attention_no_fused", "cross_attention", "transformer_block"}) {
      cells.push_back({std::string("hdm ") + i, {"model.variant=E", std::string("model.interaction=") + i}});
    }
  }
  if (cells.empty()) {
    throw ConfigError("unknown ablation preset '" + name +
                      "' (models, gating, pooling, experts, interaction, all)");
  }
  return cells;
}

std::string config_fingerprint(const ExperimentConfig& config) {
  const ModelConfig& m = config.train.model;
  std::ostringstream os;
  os << m.variant() << ':' << (m.use_pife ? "P" : "-") << (m.use_hdm ? "H" : "-")
     << (m.use_atmoe ? "M" : "-") << " pool=" << to_string(m.pooling)
     << " hdm=" << to_string(m.interaction) << " gate=" << to_string(m.gating);
  if (m.gating == GatingVariant::attention) os << '/' << m.moe_heads;
  os << " expert=" << to_string(m.expert) << " C=" << m.encoder.embed_dim;
  // FNV-1a over every key so distinct configurations never share a fingerprint.
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [k, v] : to_key_values(config)) {
    for (char ch : k + "=" + v + ";") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
  os << " #" << buf;
  return os.str();
}

std::vector<AblationRow> sweep_ablation(const ExperimentConfig& base,
                                        std::span<const AblationCell> cells,
                                        const ImageDataset& dataset,
                                        const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationRow row;
    row.name = cell.name;
    try {
      ExperimentConfig c = base;
      apply_overrides(c, cell.overrides);
      c.train.output_dir.clear();
      row.fingerprint = config_fingerprint(c);
      Trainer t(c.train, dataset);
      row.params = t.model().parameter_count();
      const TrainResult r = t.run();
      row.map = r.final_map;
      row.rank1 = r.final_rank1;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << pad("Setting", 28) << pad("mAP", 8) << pad("R-1", 8) << pad("Params", 10) << "Config\n";
  for (const auto& r : rows) {
    os << pad(r.name, 28);
    if (r.ok) {
      os << pad(pct(r.map), 8) << pad(pct(r.rank1), 8) << pad(std::to_string(r.params), 10)
         << r.fingerprint << '\n';
    } else {
      os << "FAILED: " << r.error << '\n';
    }
  }
  return os.str();
}

void write_ablation_tsv(const fs::path& path, std::span<const AblationRow> rows) {
  std::ofstream os(path);
  if (!os) throw ExportError("cannot write " + path.string());
  os.precision(12);
  os << "setting\tfingerprint\tmAP\trank1\tparams\tstatus\n";
  for (const auto& r : rows) {
    os << r.name << '\t' << r.fingerprint << '\t' << r.map << '\t' << r.rank1 << '\t' << r.params
       << '\t' << (r.ok ? "ok" : "failed: " + r.error) << '\n';
  }
}

}  // namespace demo
