// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>

#include "demo/data.hpp"
#include "demo/errors.hpp"
#include "demo/evaluation.hpp"
#include "helpers.hpp"

using namespace demo;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SynthSpec small_spec() {
  SynthSpec s;
  s.num_identities = 4;
  s.instances_per_identity = 4;
  s.height = 16;
  s.width = 8;
  s.seed = 5;
  return s;
}

double raw_pixel_map(const SynthSpec& spec, const std::string& name) {
  const auto root = testing::temp_dir(name);
  generate_synthetic(spec, root);
  ImageDataset ds(load_dataset(root), spec.height, spec.width);
  const ModalBatch all = ds.all();
  const Index per = all.images[0].image_size();
  FeatureSet fs;
  fs.features.resize(all.size(), 3 * per);
  for (Index i = 0; i < all.size(); ++i) {
    for (int m = 0; m < 3; ++m) {
      for (Index j = 0; j < per; ++j) {
        fs.features(i, m * per + j) = all.images[m].data[static_cast<size_t>(i * per + j)];
      }
    }
  }
  fs.ids = all.labels;
  fs.cams = all.cameras;
  return evaluate(fs, fs).map;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and complete") {
  SynthSpec spec;
  const auto a = testing::temp_dir("synth_a");
  const auto b = testing::temp_dir("synth_b");
  generate_synthetic(spec, a);
  generate_synthetic(spec, b);
  const DatasetIndex index = load_dataset(a);
  CHECK(index.samples.size() == 64);
  CHECK(index.num_identities() == 8);
  for (const auto& rec : index.samples) {
    for (int m = 0; m < 3; ++m) {
      const auto rel = fs::relative(rec.paths[m], a);
      CHECK(slurp(rec.paths[m]) == slurp(b / rel));
    }
  }
  spec.seed = 1;
  const auto c = testing::temp_dir("synth_c");
  generate_synthetic(spec, c);
  const auto rel = fs::relative(index.samples[0].paths[0], a);
  CHECK(slurp(a / rel) != slurp(c / rel));
}

TEST_CASE("sample names") {
  const SampleName n = parse_sample_name("0003_c2_0001.png");
  CHECK(n.id == 3);
  CHECK(n.camera == 2);
  CHECK(n.sequence == 1);
  CHECK(format_sample_name(n) == "0003_c2_0001.png");
  CHECK_THROWS_AS(parse_sample_name("0003-c2-0001.png"), IngestionError);
  CHECK_THROWS_AS(parse_sample_name("abc_c2_0001.png"), IngestionError);
  CHECK_THROWS_AS(parse_sample_name("0003_c2_0001"), IngestionError);
}

TEST_CASE("ingestion errors") {
  const auto root = testing::temp_dir("ingest");
  generate_synthetic(small_spec(), root);
  fs::remove(root / "TI" / "0002_c1_0001.png");
  try {
    load_dataset(root);
    FAIL("expected an orphan error");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("TI") != std::string::npos);
    CHECK(std::string(e.what()).find("0002_c1_0001.png") != std::string::npos);
  }
  fs::remove_all(root / "TI");
  CHECK_THROWS_AS(load_dataset(root), IngestionError);

  const auto bad = testing::temp_dir("ingest_bad");
  generate_synthetic(small_spec(), bad);
  for (const char* m : {"RGB", "NI", "TI"}) {
    std::ofstream(bad / m / "junk.png") << "x";
  }
  CHECK_THROWS_AS(load_dataset(bad), IngestionError);
}

TEST_CASE("images load normalised to [-1, 1]") {
  const auto root = testing::temp_dir("load");
  generate_synthetic(small_spec(), root);
  ImageDataset ds(load_dataset(root), 16, 8);
  const ModalBatch b = ds.all();
  CHECK(b.size() == 16);
  for (const auto& st : b.images) {
    CHECK(st.channels == 3);
    const auto [lo, hi] = std::minmax_element(st.data.begin(), st.data.end());
    CHECK(*lo >= -1.0);
    CHECK(*hi <= 1.0);
  }
  CHECK_THROWS_AS(ImageDataset(load_dataset(root), 32, 8), IngestionError);
}

TEST_CASE("P x K sampling") {
  std::vector<std::int64_t> labels;
  for (int id = 0; id < 16; ++id) {
    const int count = id == 3 ? 2 : 8;
    for (int k = 0; k < count; ++k) labels.push_back(id);
  }
  for (auto [p, k] : {std::pair<Index, Index>{8, 8}, {16, 8}}) {
    const auto batches = pk_sample(labels, p, k, 3);
    REQUIRE(!batches.empty());
    for (const auto& batch : batches) {
      CHECK(static_cast<Index>(batch.size()) == p * k);
      std::map<std::int64_t, int> counts;
      for (auto pos : batch) ++counts[labels[pos]];
      CHECK(static_cast<Index>(counts.size()) == p);
      for (const auto& [id, n] : counts) CHECK(n == k);
    }
  }
  // Identity 3 has only two instances, so its chunk is filled with replacement.
  bool saw_three = false;
  for (const auto& batch : pk_sample(labels, 16, 8, 3)) {
    for (auto pos : batch) saw_three |= labels[pos] == 3;
  }
  CHECK(saw_three);
  CHECK(pk_sample(labels, 8, 4, 9) == pk_sample(labels, 8, 4, 9));
  CHECK(pk_sample(labels, 8, 4, 9) != pk_sample(labels, 8, 4, 10));
  CHECK_THROWS_AS(pk_sample(labels, 17, 4, 1), ConfigError);
}

TEST_CASE("augmentation") {
  const auto root = testing::temp_dir("augment");
  generate_synthetic(small_spec(), root);
  ImageDataset ds(load_dataset(root), 16, 8);
  const ModalBatch original = ds.all();

  ModalBatch same = original;
  augment(same, 1, AugmentConfig{.enabled = false});
  for (int m = 0; m < 3; ++m) CHECK(same.images[m].data == original.images[m].data);

  ImageStack st = original.images[0];
  flip_horizontal(st, 2);
  CHECK(st.data != original.images[0].data);
  flip_horizontal(st, 2);
  CHECK(st.data == original.images[0].data);

  // Identical content in every modality stays identical after augmentation.
  ModalBatch tied = original;
  tied.images[1] = tied.images[0];
  tied.images[2] = tied.images[0];
  augment(tied, 7);
  CHECK(tied.images[0].data != original.images[0].data);
  CHECK(tied.images[1].data == tied.images[0].data);
  CHECK(tied.images[2].data == tied.images[0].data);

  ModalBatch again = original;
  again.images[1] = again.images[0];
  again.images[2] = again.images[0];
  augment(again, 7);
  CHECK(again.images[0].data == tied.images[0].data);
}

TEST_CASE("modality masking") {
  const auto root = testing::temp_dir("mask");
  generate_synthetic(small_spec(), root);
  ImageDataset ds(load_dataset(root), 16, 8);
  const ModalBatch b = ds.all();
  const ModalBatch m = mask_modalities(b, {Modality::R, Modality::T});
  CHECK(std::all_of(m.images[0].data.begin(), m.images[0].data.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(m.images[2].data.begin(), m.images[2].data.end(), [](double v) { return v == 0.0; }));
  CHECK(m.images[1].data == b.images[1].data);
  CHECK(m.presence[0] == std::array<bool, 3>{false, true, false});
  CHECK(mask_modalities(b, {}).images[0].data == b.images[0].data);
  CHECK_THROWS_AS(mask_modalities(b, {Modality::R, Modality::N, Modality::T}), InputError);
}

TEST_CASE("identity signal controls raw-pixel retrieval") {
  SynthSpec spec;
  spec.seed = 3;
  CHECK(raw_pixel_map(spec, "signal_on") > 0.9);
  spec.signal = {0.0, 0.0, 0.0};
  CHECK(raw_pixel_map(spec, "signal_off") < 0.3);
  SynthSpec bad;
  bad.signal[1] = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
