// SPDX-License-Identifier: Apache-2.0
//
// Training loop, checkpoints and feature extraction.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "demo/data.hpp"
#include "demo/evaluation.hpp"
#include "demo/model.hpp"
#include "demo/optimizer.hpp"

namespace demo {

struct TrainConfig {
  ModelConfig model;
  Index epochs = 50;
  /// Stops after this many optimizer steps in total; 0 means no cap.
  Index max_steps = 0;
  double base_lr = 3.5e-4;
  double encoder_lr = 5e-6;
  double weight_decay = 1e-4;
  /// Cosine decay of both learning rates to zero over the run; off = constant.
  bool cosine = false;
  Index p = 8;
  Index k = 8;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  /// Instances per identity held out for validation; 0 validates on the training set.
  Index val_instances = 0;
  /// Evaluate every this many epochs (and after the last one); 0 disables.
  Index eval_every = 1;
  EvalOptions eval;
  /// Where checkpoints and logs go; empty keeps everything in memory.
  std::filesystem::path output_dir;

  void validate() const;
  Index batch_size() const { return p * k; }
};

struct StepRecord {
  Index epoch = 0;
  Index step = 0;  // global, 1-based
  double total = 0.0;
  std::vector<LossTerm> terms;
  double encoder_lr = 0.0;
  double base_lr = 0.0;
};

struct EpochRecord {
  Index epoch = 0;
  double mean_loss = 0.0;
  double map = 0.0;
  double rank1 = 0.0;
  bool evaluated = false;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  double best_map = -1.0;
  Index best_epoch = -1;
  /// Retrieval on the validation split after the final step.
  double final_map = 0.0;
  double final_rank1 = 0.0;
};

/// Training and validation positions: the last `val_instances` instances (by
/// sequence number) of each identity are held out.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
Split split_dataset(const ImageDataset& dataset, Index val_instances);

class Trainer {
 public:
  Trainer(TrainConfig config, const ImageDataset& dataset);

  const TrainConfig& config() const { return config_; }
  DeMoModel& model() { return *model_; }
  const DeMoModel& model() const { return *model_; }
  const Split& split() const { return split_; }
  /// Identity id of each class index.
  const std::vector<std::int64_t>& class_ids() const { return class_ids_; }
  Index global_step() const { return global_step_; }

  /// Trains until `epochs` (or `max_steps`) is reached from the current state.
  TrainResult run();

  /// Evaluation of the current model on the validation positions.
  RetrievalResult validate(const std::set<Modality>& missing = {}) const;

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, buffers, optimizer state and the position in the schedule.
  void resume(const std::filesystem::path& path);

  /// Called after every optimizer step; used for progress output.
  std::function<void(const StepRecord&)> on_step;

 private:
  std::pair<double, double> learning_rates(Index step, Index total) const;
  void append_log(const StepRecord& rec) const;

  TrainConfig config_;
  const ImageDataset* dataset_;
  Split split_;
  std::vector<std::int64_t> class_ids_;
  std::unique_ptr<DeMoModel> model_;
  std::unique_ptr<Adam> adam_;
  Index epoch_ = 0;           // epochs completed
  Index batch_in_epoch_ = 0;  // batches of the current epoch already consumed
  Index global_step_ = 0;
  double best_map_ = -1.0;
  Index best_epoch_ = -1;
};

TrainResult train(const TrainConfig& config, const ImageDataset& dataset);

/// Eval-mode descriptors for the given positions with modalities masked.
FeatureSet extract_features(const DeMoModel& model, const ImageDataset& dataset,
                            std::span<const std::size_t> positions,
                            const std::set<Modality>& missing = {});

void save_features(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet load_features(const std::filesystem::path& path);

struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<DeMoModel> model;
  std::vector<std::int64_t> class_ids;
};
/// Rebuilds the model recorded in a checkpoint and loads its weights.
LoadedModel load_checkpoint(const std::filesystem::path& path);

/// TSV of gate weights: one row per (instance, head), seven slot columns.
/// Requires an ATMoE model.
void export_gates(const DeMoModel& model, const ImageDataset& dataset,
                  std::span<const std::size_t> positions, const std::filesystem::path& path);

}  // namespace demo
