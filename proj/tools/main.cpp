// SPDX-License-Identifier: Apache-2.0
//
// demo: synthesis, training, evaluation, sweeps and figures from one binary.
//
// Exit codes: 0 success, 2 configuration error, 3 ingestion error (unreadable
// dataset, checkpoint or export file), 4 runtime error.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "demo/config.hpp"
#include "demo/errors.hpp"
#include "demo/evaluation.hpp"
#include "demo/plots.hpp"
#include "demo/sweeps.hpp"
#include "demo/trainer.hpp"

namespace fs = std::filesystem;
using namespace demo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIngestion = 3;
constexpr int kExitRuntime = 4;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve(const Common& common) {
  ExperimentConfig c;
  if (!common.config_path.empty()) load_config_file(c, common.config_path);
  apply_overrides(c, common.overrides);
  c.output_dir = resolve_output_dir(c.output_dir);
  return c;
}

std::set<Modality> parse_missing(const std::string& text) {
  std::set<Modality> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(parse_modality(item));
  }
  return out;
}

fs::path default_checkpoint(const ExperimentConfig& c, const std::string& given) {
  if (!given.empty()) return given;
  const fs::path best = c.output_dir / "best.ckpt";
  return fs::exists(best) ? best : c.output_dir / "last.ckpt";
}

struct Loaded {
  LoadedModel model;
  std::unique_ptr<ImageDataset> dataset;
  std::vector<std::size_t> positions;
};

Loaded load_for_inference(const ExperimentConfig& c, const std::string& checkpoint) {
  Loaded l;
  l.model = load_checkpoint(default_checkpoint(c, checkpoint));
  const auto& enc = l.model.config.model.encoder;
  l.dataset = std::make_unique<ImageDataset>(load_dataset(c.data_root), enc.image_height,
                                             enc.image_width);
  l.positions = split_dataset(*l.dataset, l.model.config.val_instances).val;
  return l;
}

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config_path, "INI configuration file");
  cmd->add_option("-s,--set", common.overrides, "override, section.key=value (repeatable)");
}

int cmd_synth(const Common& common) {
  const ExperimentConfig c = resolve(common);
  generate_synthetic(c.synth, c.data_root);
  std::cout << "wrote " << load_dataset(c.data_root).summary() << " to " << c.data_root << '\n';
  return 0;
}

int cmd_train(const Common& common, const std::string& resume_from) {
  ExperimentConfig c = resolve(common);
  c.train.model.validate();
  c.train.output_dir = c.output_dir;
  const auto& enc = c.train.model.encoder;
  ImageDataset ds(load_dataset(c.data_root), enc.image_height, enc.image_width);
  std::cout << "dataset: " << ds.index().summary() << '\n';
  Trainer trainer(c.train, ds);
  fs::create_directories(c.output_dir);
  std::ofstream(c.output_dir / "config.ini") << to_ini(c);
  if (!resume_from.empty()) {
    trainer.resume(resume_from);
    std::cout << "resumed at step " << trainer.global_step() << '\n';
  }
  std::cout << "model " << trainer.model().config().variant() << ", "
            << trainer.model().parameter_count() << " parameters\n";
  trainer.on_step = [](const StepRecord& r) {
    if (r.step % 10 == 0) {
      std::cout << "epoch " << r.epoch << " step " << r.step << " loss " << r.total << '\n';
    }
  };
  const TrainResult r = trainer.run();
  std::cout << "final mAP " << r.final_map << " Rank-1 " << r.final_rank1;
  if (r.best_epoch >= 0) std::cout << " (best mAP " << r.best_map << " at epoch " << r.best_epoch << ")";
  std::cout << '\n';
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& missing_text) {
  const ExperimentConfig c = resolve(common);
  const auto missing = parse_missing(missing_text);
  Loaded l = load_for_inference(c, checkpoint);
  const FeatureSet f = extract_features(*l.model.model, *l.dataset, l.positions, missing);
  const RetrievalResult r = evaluate(f, f, c.train.eval);
  const fs::path dir = c.output_dir / "eval";
  fs::create_directories(dir);
  save_features(f, dir / "features.arc");
  write_results_tsv(dir / "results.tsv", r, f);
  nlohmann::json summary = r.summary();
  summary["missing"] = missing_label(missing);
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  if (l.model.model->atmoe()) export_gates(*l.model.model, *l.dataset, l.positions, dir / "gates.tsv");
  std::cout << missing_label(missing) << ": mAP " << r.map << " Rank-1 " << r.rank(1) << " Rank-5 "
            << r.rank(5) << " Rank-10 " << r.rank(10) << " (" << r.valid_queries << " queries, "
            << r.skipped_queries << " skipped)\n";
  return 0;
}

int cmd_sweep_missing(const Common& common, const std::string& checkpoint) {
  const ExperimentConfig c = resolve(common);
  Loaded l = load_for_inference(c, checkpoint);
  const MissingSweep s = sweep_missing(*l.model.model, *l.dataset, l.positions, c.train.eval);
  fs::create_directories(c.output_dir);
  write_missing_tsv(c.output_dir / "sweep_missing.tsv", s);
  std::cout << format_missing_table(s);
  return 0;
}

int cmd_sweep_ablation(const Common& common, const std::string& preset) {
  ExperimentConfig c = resolve(common);
  const auto cells = ablation_preset(preset);
  const auto& enc = c.train.model.encoder;
  ImageDataset ds(load_dataset(c.data_root), enc.image_height, enc.image_width);
  const auto rows = sweep_ablation(c, cells, ds, [](const AblationRow& r) {
    std::cout << r.name << ": " << (r.ok ? "mAP " + std::to_string(r.map) : "FAILED " + r.error)
              << '\n';
  });
  fs::create_directories(c.output_dir);
  write_ablation_tsv(c.output_dir / ("sweep_ablation_" + preset + ".tsv"), rows);
  std::cout << '\n' << format_ablation_table(rows);
  return 0;
}

int cmd_plot_gates(const Common& common, const std::string& gates, const std::string& out) {
  const ExperimentConfig c = resolve(common);
  const fs::path src = gates.empty() ? c.output_dir / "eval" / "gates.tsv" : fs::path(gates);
  const fs::path dst = out.empty() ? c.output_dir / "gates.png" : fs::path(out);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  const auto plotted = plot_gates(src, dst);
  std::cout << "plotted " << plotted.size() << " instances to " << dst << '\n';
  return 0;
}

std::vector<std::size_t> pick(const Loaded& l, const std::vector<Index>& picks) {
  std::vector<std::size_t> out;
  for (Index i : picks) {
    if (i < 0 || i >= static_cast<Index>(l.positions.size())) {
      throw ConfigError("sample index " + std::to_string(i) + " outside the evaluation split (" +
                        std::to_string(l.positions.size()) + " samples)");
    }
    out.push_back(l.positions[static_cast<size_t>(i)]);
  }
  return out;
}

int cmd_plot_attention(const Common& common, const std::string& checkpoint,
                       const std::vector<Index>& samples) {
  const ExperimentConfig c = resolve(common);
  Loaded l = load_for_inference(c, checkpoint);
  const Index n = plot_attention(*l.model.model, *l.dataset, pick(l, samples),
                                 c.output_dir / "attention");
  std::cout << "wrote " << n << " heatmaps to " << c.output_dir / "attention" << '\n';
  return 0;
}

int cmd_plot_ranks(const Common& common, const std::string& checkpoint,
                   const std::vector<Index>& queries) {
  const ExperimentConfig c = resolve(common);
  Loaded l = load_for_inference(c, checkpoint);
  const FeatureSet f = extract_features(*l.model.model, *l.dataset, l.positions);
  const RetrievalResult r = evaluate(f, f, c.train.eval);
  std::vector<fs::path> images;
  for (std::size_t pos : l.positions) images.push_back(l.dataset->index().samples[pos].paths[0]);
  const fs::path dir = c.output_dir / "ranks";
  fs::create_directories(dir);
  for (Index q : queries) {
    pick(l, {q});
    const fs::path png = dir / ("query_" + std::to_string(q) + ".png");
    export_rank_list(r, q, c.top_k, images, images, png);
    std::cout << "wrote " << png << '\n';
  }
  return 0;
}

int cmd_keys() {
  for (const auto& k : config_keys()) std::cout << k.name << "\t" << k.doc << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeMo multi-modal re-identification toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, missing, resume, preset = "models", gates, out;
  std::vector<Index> samples{0}, queries{0};

  auto* synth = app.add_subcommand("synth", "render a synthetic RGB/NIR/TIR dataset");
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--resume", resume, "checkpoint to continue from");
  auto* eval = app.add_subcommand("eval", "extract features and evaluate retrieval");
  eval->add_option("--missing", missing, "modalities to mask, e.g. RGB,NIR");
  auto* sweep_m = app.add_subcommand("sweep-missing", "evaluate the six missing-modality settings");
  auto* sweep_a = app.add_subcommand("sweep-ablation", "train and evaluate an ablation matrix");
  sweep_a->add_option("--preset", preset, "models | gating | pooling | experts | interaction | all");
  auto* plot_g = app.add_subcommand("plot-gates", "bar charts of exported gate weights");
  plot_g->add_option("--gates", gates, "gate export TSV (default <output>/eval/gates.tsv)");
  plot_g->add_option("--out", out, "PNG path (default <output>/gates.png)");
  auto* plot_a = app.add_subcommand("plot-attention", "decoupling-attention heatmaps");
  plot_a->add_option("--samples", samples, "evaluation-split sample indices");
  auto* plot_r = app.add_subcommand("plot-ranks", "rank-list grids");
  plot_r->add_option("--queries", queries, "evaluation-split query indices");
  auto* keys = app.add_subcommand("keys", "list every configuration key");
  for (auto* cmd : {synth, train, eval, sweep_m, sweep_a, plot_g, plot_a, plot_r}) {
    add_common(cmd, common);
  }
  for (auto* cmd : {eval, sweep_m, plot_a, plot_r}) {
    cmd->add_option("--checkpoint", checkpoint, "checkpoint (default <output>/best.ckpt)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(common);
    if (train->parsed()) return cmd_train(common, resume);
    if (eval->parsed()) return cmd_eval(common, checkpoint, missing);
    if (sweep_m->parsed()) return cmd_sweep_missing(common, checkpoint);
    if (sweep_a->parsed()) return cmd_sweep_ablation(common, preset);
    if (plot_g->parsed()) return cmd_plot_gates(common, gates, out);
    if (plot_a->parsed()) return cmd_plot_attention(common, checkpoint, samples);
    if (plot_r->parsed()) return cmd_plot_ranks(common, checkpoint, queries);
    if (keys->parsed()) return cmd_keys();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IngestionError& e) {
    std::cerr << "ingestion error: " << e.what() << '\n';
    return kExitIngestion;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitIngestion;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kExitIngestion;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
