// SPDX-License-Identifier: Apache-2.0
#include "demo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "demo/errors.hpp"
#include "demo/image_io.hpp"
#include "demo/render.hpp"

namespace demo {

namespace fs = std::filesystem;

std::string_view to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

Metric parse_metric(std::string_view text) {
  if (text == "euclidean") return Metric::euclidean;
  if (text == "cosine") return Metric::cosine;
  throw ConfigError("unknown metric '" + std::string(text) + "'");
}

void FeatureSet::check() const {
  if (static_cast<Index>(ids.size()) != features.rows() ||
      static_cast<Index>(cams.size()) != features.rows()) {
    throw EvaluationError("feature set: ids/cams length differs from feature rows");
  }
  if (!features.allFinite()) throw EvaluationError("feature set contains non-finite values");
}

double RetrievalResult::rank(Index k) const {
  if (k < 1) throw InputError("rank: K must be at least 1");
  if (cmc.empty()) return 0.0;
  return cmc[static_cast<size_t>(std::min<Index>(k, static_cast<Index>(cmc.size())) - 1)];
}

nlohmann::json RetrievalResult::summary() const {
  return {{"mAP", map},
          {"rank1", rank(1)},
          {"rank5", rank(5)},
          {"rank10", rank(10)},
          {"valid_queries", valid_queries},
          {"skipped_queries", skipped_queries},
          {"cmc", cmc}};
}

double average_precision(const std::vector<bool>& relevance) {
  double sum = 0.0;
  Index hits = 0;
  for (size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return hits ? sum / static_cast<double>(hits) : 0.0;
}

namespace {

Mat normalized(const Mat& x) {
  Mat out = x;
  for (Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

}  // namespace

Mat distance_matrix(const Mat& query, const Mat& gallery, const EvalOptions& options) {
  if (query.cols() != gallery.cols()) {
    throw EvaluationError("query feature width " + std::to_string(query.cols()) +
                          " differs from gallery width " + std::to_string(gallery.cols()));
  }
  const bool norm = options.normalize || options.metric == Metric::cosine;
  const Mat q = norm ? normalized(query) : query;
  const Mat g = norm ? normalized(gallery) : gallery;
  if (options.metric == Metric::cosine) return (-(q * g.transpose())).array() + 1.0;
  Mat d(q.rows(), g.rows());
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index j = 0; j < g.rows(); ++j) d(i, j) = (q.row(i) - g.row(j)).norm();
  }
  return d;
}

RetrievalResult evaluate_distances(const Mat& distances, const FeatureSet& query,
                                   const FeatureSet& gallery, Index max_rank) {
  if (distances.rows() != static_cast<Index>(query.ids.size()) ||
      distances.cols() != static_cast<Index>(gallery.ids.size())) {
    throw EvaluationError("distance matrix shape does not match query/gallery sizes");
  }
  if (query.cams.size() != query.ids.size() || gallery.cams.size() != gallery.ids.size()) {
    throw EvaluationError("ids/cams length mismatch");
  }
  if (max_rank < 1) throw ConfigError("max_rank must be at least 1");
  RetrievalResult res;
  res.queries.resize(query.ids.size());
  std::vector<double> cmc_sum(static_cast<size_t>(max_rank), 0.0);
  double ap_sum = 0.0;
  const Index ng = distances.cols();
  for (Index q = 0; q < distances.rows(); ++q) {
    QueryResult& qr = res.queries[static_cast<size_t>(q)];
    std::vector<Index> order(static_cast<size_t>(ng));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return distances(q, a) < distances(q, b); });
    const auto qid = query.ids[static_cast<size_t>(q)];
    const auto qcam = query.cams[static_cast<size_t>(q)];
    for (Index g : order) {
      const auto gid = gallery.ids[static_cast<size_t>(g)];
      const auto gcam = gallery.cams[static_cast<size_t>(g)];
      if (gid == qid && gcam == qcam) continue;
      qr.ranked.push_back(g);
      qr.matches.push_back(gid == qid);
    }
    const auto first = std::find(qr.matches.begin(), qr.matches.end(), true);
    if (first == qr.matches.end()) {
      ++res.skipped_queries;
      continue;
    }
    qr.valid = true;
    ++res.valid_queries;
    qr.ap = average_precision(qr.matches);
    ap_sum += qr.ap;
    const Index pos = first - qr.matches.begin();
    for (Index k = pos; k < max_rank; ++k) cmc_sum[static_cast<size_t>(k)] += 1.0;
  }
  if (res.valid_queries == 0) {
    throw EvaluationError("no query has a valid positive in the filtered gallery");
  }
  res.map = ap_sum / static_cast<double>(res.valid_queries);
  res.cmc.resize(cmc_sum.size());
  for (size_t k = 0; k < cmc_sum.size(); ++k) {
    res.cmc[k] = cmc_sum[k] / static_cast<double>(res.valid_queries);
  }
  return res;
}

RetrievalResult evaluate(const FeatureSet& query, const FeatureSet& gallery,
                         const EvalOptions& options) {
  query.check();
  gallery.check();
  if (gallery.size() == 0) throw EvaluationError("empty gallery");
  return evaluate_distances(distance_matrix(query.features, gallery.features, options), query,
                            gallery, options.max_rank);
}

void write_results_tsv(const fs::path& path, const RetrievalResult& result,
                       const FeatureSet& query) {
  std::ofstream os(path);
  if (!os) throw ExportError("cannot write " + path.string());
  os << "query\tid\tcam\tvalid\tap\tfirst_match_rank\n";
  for (size_t q = 0; q < result.queries.size(); ++q) {
    const QueryResult& qr = result.queries[q];
    const auto first = std::find(qr.matches.begin(), qr.matches.end(), true);
    os << q << '\t' << query.ids[q] << '\t' << query.cams[q] << '\t' << (qr.valid ? 1 : 0)
       << '\t' << qr.ap << '\t'
       << (first == qr.matches.end() ? -1 : (first - qr.matches.begin()) + 1) << '\n';
  }
}

void export_rank_list(const RetrievalResult& result, Index query, Index top_k,
                      std::span<const fs::path> query_images,
                      std::span<const fs::path> gallery_images, const fs::path& out) {
  if (query < 0 || query >= static_cast<Index>(result.queries.size())) {
    throw ExportError("rank list: query index " + std::to_string(query) + " out of range");
  }
  if (top_k < 1) throw ExportError("rank list: top_k must be positive");
  if (static_cast<Index>(query_images.size()) != static_cast<Index>(result.queries.size())) {
    throw ExportError("rank list: one query image path per query required");
  }
  const QueryResult& qr = result.queries[static_cast<size_t>(query)];
  const Index shown = std::min<Index>(top_k, static_cast<Index>(qr.ranked.size()));

  auto load = [](const fs::path& p) {
    if (!fs::is_regular_file(p)) throw ExportError("rank list: cannot resolve image " + p.string());
    try {
      return read_png(p);
    } catch (const Error& e) {
      throw ExportError("rank list: " + std::string(e.what()));
    }
  };
  std::vector<Raster> tiles;
  tiles.push_back(load(query_images[static_cast<size_t>(query)]));
  for (Index i = 0; i < shown; ++i) {
    const Index g = qr.ranked[static_cast<size_t>(i)];
    if (g < 0 || g >= static_cast<Index>(gallery_images.size())) {
      throw ExportError("rank list: gallery index " + std::to_string(g) + " has no image path");
    }
    tiles.push_back(load(gallery_images[static_cast<size_t>(g)]));
  }
  int th = 0, tw = 0;
  for (const auto& t : tiles) {
    th = std::max(th, t.height);
    tw = std::max(tw, t.width);
  }
  constexpr int kBorder = 3;
  constexpr int kGap = 6;
  const int cell_w = tw + 2 * kBorder;
  const int cell_h = th + 2 * kBorder;
  const int n = static_cast<int>(tiles.size());
  Raster img = render::canvas(n * cell_w + (n + 1) * kGap + kGap, cell_h + 2 * kGap);
  for (int i = 0; i < n; ++i) {
    // An extra gap separates the query from its rank list.
    const int x = kGap + i * (cell_w + kGap) + (i > 0 ? kGap : 0);
    const render::Rgb color =
        i == 0 ? render::kBlue : (qr.matches[static_cast<size_t>(i - 1)] ? render::kGreen : render::kRed);
    render::frame(img, x, kGap, cell_w, cell_h, kBorder, color);
    render::blit(img, tiles[static_cast<size_t>(i)], x + kBorder, kGap + kBorder);
  }
  write_png(out, img);
}

}  // namespace demo
