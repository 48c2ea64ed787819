// SPDX-License-Identifier: Apache-2.0
#include "demo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "demo/checkpoint.hpp"
#include "demo/config.hpp"
#include "demo/errors.hpp"

namespace demo {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kAugmentStream = 0xA0C3E5F7ULL;
constexpr Index kChunk = 32;
const RunMode kEvalMode{false, false};

ExperimentConfig wrap(const TrainConfig& c) {
  ExperimentConfig e;
  e.train = c;
  return e;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 0 || max_steps < 0) throw ConfigError("train: epochs and max_steps must be >= 0");
  if (p < 2 || k < 2) {
    throw ConfigError("train: batch-hard mining needs P >= 2 identities and K >= 2 instances");
  }
  for (double lr : {base_lr, encoder_lr, weight_decay}) {
    if (!std::isfinite(lr) || lr < 0) {
      throw ConfigError("train: learning rates and weight decay must be finite and >= 0");
    }
  }
  if (val_instances < 0 || eval_every < 0) {
    throw ConfigError("train: val_instances and eval_every must be >= 0");
  }
}

Split split_dataset(const ImageDataset& dataset, Index val_instances) {
  std::map<std::int64_t, std::vector<std::size_t>> by_id;
  const auto& samples = dataset.index().samples;
  for (std::size_t i = 0; i < samples.size(); ++i) by_id[samples[i].id].push_back(i);
  Split s;
  for (auto& [id, members] : by_id) {
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return samples[a].sequence < samples[b].sequence;
    });
    const Index n = static_cast<Index>(members.size());
    const Index held = val_instances > 0 ? std::min(val_instances, n - 1) : 0;
    for (Index i = 0; i < n; ++i) {
      (i < n - held ? s.train : s.val).push_back(members[static_cast<size_t>(i)]);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  if (val_instances == 0) s.val = s.train;
  return s;
}

Trainer::Trainer(TrainConfig config, const ImageDataset& dataset)
    : config_(std::move(config)), dataset_(&dataset) {
  split_ = split_dataset(dataset, config_.val_instances);
  for (std::size_t pos : split_.train) class_ids_.push_back(dataset.index().samples[pos].id);
  std::sort(class_ids_.begin(), class_ids_.end());
  class_ids_.erase(std::unique(class_ids_.begin(), class_ids_.end()), class_ids_.end());
  config_.model.loss.num_classes = static_cast<Index>(class_ids_.size());
  config_.validate();
  if (static_cast<Index>(class_ids_.size()) < config_.p) {
    throw ConfigError("train: " + std::to_string(class_ids_.size()) +
                      " training identities cannot fill P = " + std::to_string(config_.p));
  }
  model_ = build_model(config_.model);
  adam_ = std::make_unique<Adam>(model_->store(), AdamConfig{0.9, 0.999, 1e-8, config_.weight_decay});
}

std::pair<double, double> Trainer::learning_rates(Index step, Index total) const {
  if (!config_.cosine || total <= 0) return {config_.encoder_lr, config_.base_lr};
  const double f =
      0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(std::min(step, total)) /
                            static_cast<double>(total)));
  return {config_.encoder_lr * f, config_.base_lr * f};
}

void Trainer::append_log(const StepRecord& rec) const {
  if (config_.output_dir.empty()) return;
  const fs::path path = config_.output_dir / "train_log.tsv";
  const bool fresh = !fs::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw ExportError("cannot append to " + path.string());
  os.precision(10);
  if (fresh) {
    os << "epoch\tstep\ttotal";
    for (const auto& t : rec.terms) os << '\t' << t.name;
    os << "\tlr_encoder\tlr_base\n";
  }
  os << rec.epoch << '\t' << rec.step << '\t' << rec.total;
  for (const auto& t : rec.terms) os << '\t' << t.value;
  os << '\t' << rec.encoder_lr << '\t' << rec.base_lr << '\n';
}

RetrievalResult Trainer::validate(const std::set<Modality>& missing) const {
  const FeatureSet f = extract_features(*model_, *dataset_, split_.val, missing);
  return evaluate(f, f, config_.eval);
}

TrainResult Trainer::run() {
  TrainResult res;
  const fs::path out = config_.output_dir;
  if (!out.empty()) {
    fs::create_directories(out);
    if (global_step_ == 0) {
      fs::remove(out / "train_log.tsv");
      std::ofstream(out / "eval_log.tsv") << "epoch\tmean_loss\tmAP\trank1\n";
    }
  }
  std::vector<std::int64_t> train_labels;
  std::map<std::int64_t, std::int64_t> class_of;
  for (size_t c = 0; c < class_ids_.size(); ++c) class_of[class_ids_[c]] = static_cast<std::int64_t>(c);
  for (std::size_t pos : split_.train) train_labels.push_back(dataset_->index().samples[pos].id);

  const Index per_epoch =
      static_cast<Index>(pk_sample(train_labels, config_.p, config_.k, derive_seed(config_.seed, 0)).size());
  Index total = config_.epochs * per_epoch;
  if (config_.max_steps > 0) total = std::min(total, config_.max_steps);

  bool capped = false;
  while (epoch_ < config_.epochs && !capped) {
    const auto batches =
        pk_sample(train_labels, config_.p, config_.k,
                  derive_seed(config_.seed, static_cast<std::uint64_t>(epoch_)));
    double loss_sum = 0.0;
    Index loss_count = 0;
    for (size_t b = static_cast<size_t>(batch_in_epoch_); b < batches.size(); ++b) {
      if (config_.max_steps > 0 && global_step_ >= config_.max_steps) {
        capped = true;
        break;
      }
      std::vector<std::size_t> positions;
      for (std::size_t i : batches[b]) positions.push_back(split_.train[i]);
      ModalBatch batch = dataset_->batch(positions);
      const std::uint64_t batch_seed =
          derive_seed(config_.seed ^ kAugmentStream, static_cast<std::uint64_t>(global_step_));
      augment(batch, batch_seed, config_.augment);
      std::vector<std::int64_t> labels;
      for (auto id : batch.labels) labels.push_back(class_of.at(id));

      model_->store().zero_grad();
      const ForwardResult fr = model_->forward(batch.images, RunMode{true, true});
      const CompositeLoss loss = model_->loss(fr, labels);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        if (!out.empty()) {
          nlohmann::json dump = {{"epoch", epoch_},
                                 {"batch", b},
                                 {"global_step", global_step_},
                                 {"batch_seed", batch_seed},
                                 {"positions", positions},
                                 {"labels", batch.labels}};
          std::ofstream(out / "nonfinite_batch.json") << dump.dump(2) << '\n';
        }
        throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch_) + ", step " +
                             std::to_string(global_step_ + 1) + " (batch seed " +
                             std::to_string(batch_seed) + ")");
      }
      loss.total.backward();
      const auto [lr_enc, lr_base] = learning_rates(global_step_, total);
      adam_->step(lr_enc, lr_base);
      ++global_step_;
      batch_in_epoch_ = static_cast<Index>(b) + 1;

      StepRecord rec{epoch_, global_step_, value, loss.breakdown, lr_enc, lr_base};
      append_log(rec);
      if (on_step) on_step(rec);
      res.steps.push_back(std::move(rec));
      loss_sum += value;
      ++loss_count;
    }
    if (capped) break;
    ++epoch_;
    batch_in_epoch_ = 0;
    EpochRecord er;
    er.epoch = epoch_;
    er.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    if (config_.eval_every > 0 &&
        (epoch_ % config_.eval_every == 0 || epoch_ == config_.epochs)) {
      const RetrievalResult r = validate();
      er.evaluated = true;
      er.map = r.map;
      er.rank1 = r.rank(1);
      if (r.map > best_map_) {
        best_map_ = r.map;
        best_epoch_ = epoch_;
        if (!out.empty()) save_checkpoint(out / "best.ckpt");
      }
      if (!out.empty()) {
        std::ofstream os(out / "eval_log.tsv", std::ios::app);
        os.precision(10);
        os << er.epoch << '\t' << er.mean_loss << '\t' << er.map << '\t' << er.rank1 << '\n';
      }
    }
    res.epochs.push_back(er);
    if (!out.empty()) save_checkpoint(out / "last.ckpt");
  }
  const RetrievalResult final_eval = validate();
  res.final_map = final_eval.map;
  res.final_rank1 = final_eval.rank(1);
  res.best_map = best_map_;
  res.best_epoch = best_epoch_;
  if (!out.empty()) save_checkpoint(out / "last.ckpt");
  return res;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  ArrayArchive ar;
  save_parameters(model_->store(), ar);
  adam_->save(ar);
  auto& meta = ar.meta();
  meta["kind"] = "demo-checkpoint";
  meta["config"] = to_key_values(wrap(config_));
  meta["class_ids"] = class_ids_;
  meta["epoch"] = epoch_;
  meta["batch_in_epoch"] = batch_in_epoch_;
  meta["global_step"] = global_step_;
  meta["best_map"] = best_map_;
  meta["best_epoch"] = best_epoch_;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ar.save(path);
}

void Trainer::resume(const fs::path& path) {
  const ArrayArchive ar = ArrayArchive::load(path);
  const auto& meta = ar.meta();
  if (meta.value("kind", "") != "demo-checkpoint") {
    throw CheckpointError(path.string() + " is not a training checkpoint");
  }
  if (meta["class_ids"].get<std::vector<std::int64_t>>() != class_ids_) {
    throw CheckpointError("checkpoint was trained on a different identity set");
  }
  load_parameters(ar, model_->store());
  adam_->load(ar);
  epoch_ = meta["epoch"].get<Index>();
  batch_in_epoch_ = meta["batch_in_epoch"].get<Index>();
  global_step_ = meta["global_step"].get<Index>();
  best_map_ = meta["best_map"].get<double>();
  best_epoch_ = meta["best_epoch"].get<Index>();
}

TrainResult train(const TrainConfig& config, const ImageDataset& dataset) {
  Trainer t(config, dataset);
  return t.run();
}

FeatureSet extract_features(const DeMoModel& model, const ImageDataset& dataset,
                            std::span<const std::size_t> positions,
                            const std::set<Modality>& missing) {
  NoGradGuard guard;
  FeatureSet f;
  f.features.resize(static_cast<Index>(positions.size()), model.descriptor_dim());
  for (size_t start = 0; start < positions.size(); start += kChunk) {
    const size_t n = std::min<size_t>(kChunk, positions.size() - start);
    ModalBatch batch = mask_modalities(dataset.batch(positions.subspan(start, n)), missing);
    const ForwardResult fr = model.forward(batch.images, kEvalMode);
    f.features.middleRows(static_cast<Index>(start), static_cast<Index>(n)) = model.descriptor(fr);
    f.ids.insert(f.ids.end(), batch.labels.begin(), batch.labels.end());
    f.cams.insert(f.cams.end(), batch.cameras.begin(), batch.cameras.end());
  }
  return f;
}

void save_features(const FeatureSet& features, const fs::path& path) {
  ArrayArchive ar;
  ar.put("features", features.features);
  ar.put_ints("ids", features.ids);
  ar.put_ints("cams", features.cams);
  ar.meta()["kind"] = "demo-features";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ar.save(path);
}

FeatureSet load_features(const fs::path& path) {
  const ArrayArchive ar = ArrayArchive::load(path);
  for (const char* name : {"features", "ids", "cams"}) {
    if (!ar.contains(name)) {
      throw IngestionError(path.string() + ": feature archive lacks '" + name + "'");
    }
  }
  FeatureSet f{ar.matrix("features"), ar.ints("ids"), ar.ints("cams")};
  f.check();
  return f;
}

LoadedModel load_checkpoint(const fs::path& path) {
  const ArrayArchive ar = ArrayArchive::load(path);
  const auto& meta = ar.meta();
  if (meta.value("kind", "") != "demo-checkpoint" || !meta.contains("config")) {
    throw CheckpointError(path.string() + " is not a training checkpoint");
  }
  ExperimentConfig ec;
  from_key_values(ec, meta["config"].get<std::map<std::string, std::string>>());
  LoadedModel out;
  out.config = ec.train;
  out.model = build_model(out.config.model);
  out.class_ids = meta["class_ids"].get<std::vector<std::int64_t>>();
  load_parameters(ar, out.model->store());
  return out;
}

void export_gates(const DeMoModel& model, const ImageDataset& dataset,
                  std::span<const std::size_t> positions, const fs::path& path) {
  if (!model.atmoe()) throw StateError("gate export needs a model with ATMoE");
  const bool attention = model.config().gating == GatingVariant::attention;
  const Index heads = attention ? model.config().moe_heads : 1;
  std::ofstream os(path);
  if (!os) throw ExportError("cannot write " + path.string());
  os.precision(10);
  os << "instance\tid\thead";
  for (DecoupledSlot s : kDecoupledSlots) os << '\t' << slot_name(s);
  os << '\n';
  NoGradGuard guard;
  for (size_t start = 0; start < positions.size(); start += kChunk) {
    const size_t n = std::min<size_t>(kChunk, positions.size() - start);
    const ModalBatch batch = dataset.batch(positions.subspan(start, n));
    const ForwardResult fr = model.forward(batch.images, kEvalMode);
    const Mat& g = fr.atmoe->gate.value();
    for (size_t i = 0; i < n; ++i) {
      for (Index h = 0; h < heads; ++h) {
        os << start + i << '\t' << batch.labels[i] << '\t' << h;
        const Index row = static_cast<Index>(i) * heads + h;
        for (Index e = 0; e < g.cols(); ++e) os << '\t' << g(row, e);
        os << '\n';
      }
    }
  }
}

}  // namespace demo
