// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <iterator>

#include "demo/data.hpp"
#include "demo/errors.hpp"
#include "demo/evaluation.hpp"
#include "demo/image_io.hpp"
#include "demo/render.hpp"
#include "helpers.hpp"

using namespace demo;
namespace fs = std::filesystem;

namespace {

FeatureSet random_set(Rng& rng, Index n, Index ids, Index cams, Index dim) {
  FeatureSet s;
  s.features = rng.normal_matrix(n, dim, 1.0);
  for (Index i = 0; i < n; ++i) {
    s.ids.push_back(rng.integer(0, ids - 1));
    s.cams.push_back(rng.integer(0, cams - 1));
  }
  return s;
}

}  // namespace

TEST_CASE("average precision examples") {
  CHECK(average_precision({true, false, true}) == doctest::Approx(5.0 / 6.0));
  CHECK(average_precision({true, true, false}) == 1.0);
  CHECK(average_precision({false, false, true}) == doctest::Approx(1.0 / 3.0));
  CHECK(average_precision({false, false}) == 0.0);
}

TEST_CASE("perfect and delayed retrieval") {
  FeatureSet q;
  q.features = Mat(1, 1);
  q.features << 0.0;
  q.ids = {1};
  q.cams = {0};
  FeatureSet g;
  g.features = Mat(5, 1);
  g.features << 1, 2, 3, 4, 5;
  g.ids = {2, 3, 1, 4, 5};
  g.cams = {1, 1, 1, 1, 1};
  const EvalOptions raw{Metric::euclidean, false, 50};
  const RetrievalResult r = evaluate(q, g, raw);
  CHECK(r.rank(1) == 0.0);
  CHECK(r.rank(2) == 0.0);
  CHECK(r.rank(3) == 1.0);
  CHECK(r.rank(5) == 1.0);
  CHECK(r.map == doctest::Approx(1.0 / 3.0));

  g.ids = {1, 1, 2, 3, 4};
  const RetrievalResult perfect = evaluate(q, g, raw);
  CHECK(perfect.map == 1.0);
  CHECK(perfect.rank(1) == 1.0);
}

TEST_CASE("same-camera positives are filtered and unmatched queries skipped") {
  FeatureSet q;
  q.features = Mat::Zero(2, 2);
  q.features.col(1).setOnes();
  q.ids = {1, 2};
  q.cams = {0, 0};
  FeatureSet g;
  g.features = Mat::Identity(3, 2);
  g.ids = {1, 1, 2};
  g.cams = {0, 1, 0};
  const RetrievalResult r = evaluate(q, g);
  CHECK(r.valid_queries == 1);
  CHECK(r.skipped_queries == 1);
  CHECK(!r.queries[1].valid);
  CHECK(r.queries[0].ranked.size() == 2);
  CHECK(r.map == 1.0);
  CHECK(r.summary()["skipped_queries"] == 1);

  q.ids = {2, 2};
  CHECK_THROWS_AS(evaluate(q, g), EvaluationError);
  FeatureSet bad = g;
  bad.features(0, 0) = std::nan("");
  CHECK_THROWS_AS(evaluate(q, bad), EvaluationError);
}

TEST_CASE("brute-force oracle agreement") {
  Rng rng(31);
  int compared = 0;
  while (compared < 100) {
    const FeatureSet q = random_set(rng, rng.integer(1, 20), 5, 3, 4);
    const FeatureSet g = random_set(rng, rng.integer(1, 50), 5, 3, 4);
    const Mat d = distance_matrix(q.features, g.features);
    const auto ref = oracle::oracle_map_cmc(d, q.ids, q.cams, g.ids, g.cams, 50);
    if (ref.valid == 0) {
      CHECK_THROWS_AS(evaluate(q, g), EvaluationError);
      continue;
    }
    const RetrievalResult r = evaluate(q, g);
    CHECK(std::abs(r.map - ref.map) < 1e-9);
    CHECK(r.valid_queries == ref.valid);
    REQUIRE(r.cmc.size() == ref.cmc.size());
    for (size_t k = 0; k < r.cmc.size(); ++k) {
      CHECK(std::abs(r.cmc[k] - ref.cmc[k]) < 1e-9);
      if (k > 0) CHECK(r.cmc[k] >= r.cmc[k - 1]);
    }
    ++compared;
  }
}

TEST_CASE("distances") {
  Rng rng(32);
  const Mat q = rng.normal_matrix(4, 6, 1.0);
  const Mat g = rng.normal_matrix(9, 6, 1.0);
  const Mat raw = distance_matrix(q, g, {Metric::euclidean, false, 50});
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 9; ++j) {
      CHECK(std::abs(raw(i, j) - (q.row(i) - g.row(j)).norm()) < 1e-12);
    }
  }
  // Ranking is invariant to squaring the distances.
  FeatureSet qs{q, {0, 1, 2, 0}, {0, 0, 0, 0}};
  FeatureSet gs{g, {0, 1, 2, 0, 1, 2, 0, 1, 2}, {1, 1, 1, 1, 1, 1, 1, 1, 1}};
  const RetrievalResult a = evaluate_distances(raw, qs, gs);
  const RetrievalResult b = evaluate_distances(raw.array().square().matrix(), qs, gs);
  CHECK(a.map == b.map);
  CHECK(a.cmc == b.cmc);

  // On unit vectors Euclidean and cosine rank identically.
  const RetrievalResult eu = evaluate(qs, gs, {Metric::euclidean, true, 50});
  const RetrievalResult co = evaluate(qs, gs, {Metric::cosine, true, 50});
  CHECK(std::abs(eu.map - co.map) < 1e-12);
  CHECK_THROWS_AS(parse_metric("manhattan"), ConfigError);
}

TEST_CASE("rank list export") {
  const auto root = testing::temp_dir("ranks");
  SynthSpec spec;
  spec.height = 16;
  spec.width = 8;
  generate_synthetic(spec, root);
  ImageDataset ds(load_dataset(root), 16, 8);
  FeatureSet all;
  const ModalBatch b = ds.all();
  all.features = Mat(b.size(), 1);
  for (Index i = 0; i < b.size(); ++i) all.features(i, 0) = static_cast<double>(b.labels[i]);
  all.ids = b.labels;
  all.cams = b.cameras;
  const RetrievalResult r = evaluate(all, all, {Metric::euclidean, false, 50});
  std::vector<fs::path> images;
  for (const auto& s : ds.index().samples) images.push_back(s.paths[0]);

  const fs::path out = root / "rank.png";
  export_rank_list(r, 0, 10, images, images, out);
  const Raster img = read_png(out);
  CHECK(img.width == 11 * 14 + 13 * 6);
  CHECK(img.height == 22 + 12);
  // Query frame blue, then the first gallery tile green (same identity first).
  auto px = [&](int x, int y) { return render::Rgb{img.at(x, y)[0], img.at(x, y)[1], img.at(x, y)[2]}; };
  CHECK(px(6, 6) == render::kBlue);
  CHECK(px(6 + 14 + 12, 6) == render::kGreen);

  const fs::path again = root / "rank2.png";
  export_rank_list(r, 0, 10, images, images, again);
  std::ifstream a(out, std::ios::binary), c(again, std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) ==
        std::string(std::istreambuf_iterator<char>(c), {}));

  CHECK_THROWS_AS(export_rank_list(r, 0, 10, images, images, root / "missing" / "x.png"),
                  ExportError);
  std::vector<fs::path> broken = images;
  broken[r.queries[0].ranked[0]] = root / "nope.png";
  CHECK_THROWS_AS(export_rank_list(r, 0, 10, images, broken, root / "y.png"), ExportError);
  CHECK_THROWS_AS(export_rank_list(r, 999, 10, images, images, root / "z.png"), ExportError);
}
