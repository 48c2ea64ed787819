// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "demo/errors.hpp"
#include "demo/sweeps.hpp"
#include "helpers.hpp"

using namespace demo;

TEST_CASE("missing-modality sweep") {
  CHECK(missing_patterns().size() == 6);
  CHECK(missing_label({Modality::R, Modality::N}) == "M(RGB+NIR)");
  CHECK(missing_label({}) == "Full");

  const auto dir = testing::temp_dir("sweep_missing");
  SynthSpec spec;
  spec.num_identities = 3;
  spec.instances_per_identity = 3;
  generate_synthetic(spec, dir);
  ImageDataset ds(load_dataset(dir), spec.height, spec.width);
  DeMoModel model(testing::toy_model().with_variant('E'));
  std::vector<std::size_t> pos(ds.size());
  for (size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  const MissingSweep s = sweep_missing(model, ds, pos, {});
  REQUIRE(s.rows.size() == 7);
  CHECK(s.rows.back().label == "Average");
  double map = 0.0, r1 = 0.0;
  for (int i = 0; i < 6; ++i) {
    map += s.rows[i].map;
    r1 += s.rows[i].rank1;
  }
  CHECK(std::abs(s.rows[6].map - map / 6) < 1e-9);
  CHECK(std::abs(s.rows[6].rank1 - r1 / 6) < 1e-9);
  const std::string table = format_missing_table(s);
  CHECK(table.find("M(NIR+TIR)") != std::string::npos);
  write_missing_tsv(dir / "missing.tsv", s);
  CHECK(std::filesystem::exists(dir / "missing.tsv"));
}

TEST_CASE("ablation presets") {
  CHECK(ablation_preset("models").size() == 5);
  CHECK(ablation_preset("gating").size() == 6);
  CHECK(ablation_preset("pooling").size() == 3);
  CHECK(ablation_preset("experts").size() == 3);
  CHECK(ablation_preset("interaction").size() == 4);
  CHECK(ablation_preset("all").size() == 21);
  CHECK_THROWS_AS(ablation_preset("everything"), ConfigError);
}

TEST_CASE("ablation sweep records failures and continues") {
  const auto dir = testing::temp_dir("sweep_ablation");
  ExperimentConfig base;
  base.train.model = testing::toy_model();
  base.train.p = 2;
  base.train.k = 2;
  base.train.epochs = 1;
  base.train.eval_every = 0;
  base.synth.num_identities = 2;
  base.synth.instances_per_identity = 2;
  generate_synthetic(base.synth, dir);
  ImageDataset ds(load_dataset(dir), base.synth.height, base.synth.width);

  const std::vector<AblationCell> cells{{"Model A", {"model.variant=A"}},
                                        {"broken", {"model.variant=D", "model.moe_heads=3"}},
                                        {"Model D", {"model.variant=D"}}};
  int seen = 0;
  const auto rows = sweep_ablation(base, cells, ds, [&](const AblationRow&) { ++seen; });
  REQUIRE(rows.size() == 3);
  CHECK(seen == 3);
  CHECK(rows[0].ok);
  CHECK(!rows[1].ok);
  CHECK(rows[1].error.find("heads") != std::string::npos);
  CHECK(rows[2].ok);
  CHECK(rows[2].params > rows[0].params);
  CHECK(rows[0].fingerprint != rows[2].fingerprint);
  CHECK(format_ablation_table(rows).find("broken") != std::string::npos);

  ExperimentConfig same = base;
  CHECK(config_fingerprint(same) == config_fingerprint(base));
  same.train.seed = 99;
  CHECK(config_fingerprint(same) != config_fingerprint(base));
}
