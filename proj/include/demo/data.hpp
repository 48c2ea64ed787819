// SPDX-License-Identifier: Apache-2.0
//
// Multi-modal datasets: synthetic generation, directory ingestion, P x K
// identity-balanced sampling, aligned augmentation and modality masking.
//
// Directory layout (bit-exact):
//   <root>/RGB/<id>_c<cam>_<seq>.png
//   <root>/NI/<id>_c<cam>_<seq>.png
//   <root>/TI/<id>_c<cam>_<seq>.png
// with zero-padded decimal fields, e.g. 0003_c2_0001.png (id 3, camera 2).
// The same file name in all three folders forms one aligned triple.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "demo/model.hpp"
#include "demo/types.hpp"

namespace demo {

/// Subdirectory holding modality `m` ("RGB", "NI", "TI").
std::string_view modality_folder(Modality m);

struct SynthSpec {
  Index num_identities = 8;
  Index instances_per_identity = 8;
  Index height = 32;
  Index width = 16;
  /// Per-modality strength of the identity pattern, R, N, T order; 0 = pure noise.
  std::array<double, 3> signal{1.0, 1.0, 1.0};
  std::array<double, 3> noise{0.05, 0.05, 0.05};
  Index cameras = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Renders every (identity, instance) triple under `root`. Byte-identical for equal SynthSpecs.
void generate_synthetic(const SynthSpec& spec, const std::filesystem::path& root);

struct SampleName {
  std::int64_t id = 0;
  std::int64_t camera = 0;
  std::int64_t sequence = 0;
};
/// Parses "<id>_c<cam>_<seq>.<ext>"; IngestionError otherwise.
SampleName parse_sample_name(const std::string& filename);
std::string format_sample_name(const SampleName& name, const std::string& ext = ".png");

struct SampleRecord {
  std::array<std::filesystem::path, 3> paths;  // R, N, T
  std::int64_t id = 0;
  std::int64_t camera = 0;
  std::int64_t sequence = 0;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<SampleRecord> samples;  // sorted by file name

  Index num_identities() const;
  Index num_cameras() const;
  std::vector<std::int64_t> identities() const;  // sorted, unique
  std::string summary() const;
};

DatasetIndex load_dataset(const std::filesystem::path& root);

/// Batches of dataset positions for one epoch: each batch holds P distinct
/// identities with exactly K instances each (sampled with replacement when an
/// identity has fewer than K). Order is a pure function of (labels, seed).
std::vector<std::vector<std::size_t>> pk_sample(std::span<const std::int64_t> labels, Index p,
                                                Index k, std::uint64_t seed);

struct ModalBatch {
  ModalImages images;
  std::vector<std::int64_t> labels;   // identity ids
  std::vector<std::int64_t> cameras;
  std::vector<std::array<bool, 3>> presence;

  Index size() const { return static_cast<Index>(labels.size()); }
};

/// Pixel loading and normalisation, (x - 0.5) / 0.5 per channel.
class ImageDataset {
 public:
  ImageDataset(DatasetIndex index, Index height, Index width);

  const DatasetIndex& index() const { return index_; }
  Index size() const { return static_cast<Index>(index_.samples.size()); }
  std::vector<std::int64_t> identity_labels() const;
  std::vector<std::int64_t> camera_labels() const;

  ModalBatch batch(std::span<const std::size_t> positions) const;
  ModalBatch all() const;

 private:
  DatasetIndex index_;
  Index height_;
  Index width_;
  std::vector<ImageStack> cache_;  // per sample: 3 modalities stacked as count=3
};

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  /// Zero-padding before the random crop; negative picks ~4% of the height.
  Index pad = -1;
  double erase_prob = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.4;
  double erase_aspect_min = 0.3;
};

/// Flip, pad-and-crop, random erasing. One geometric transform is drawn per
/// instance and applied to all three modalities.
void augment(ModalBatch& batch, std::uint64_t seed, const AugmentConfig& config = {});

/// Mirrors image n of the stack left-right in place.
void flip_horizontal(ImageStack& stack, Index n);

/// Replaces the listed modalities with zero images and clears their presence bits.
ModalBatch mask_modalities(const ModalBatch& batch, const std::set<Modality>& missing);

}  // namespace demo
