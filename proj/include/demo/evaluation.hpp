// SPDX-License-Identifier: Apache-2.0
//
// Retrieval evaluation: mAP and CMC with same-id/same-camera gallery filtering.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demo/tensor.hpp"

namespace demo {

enum class Metric { euclidean, cosine };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view text);

struct EvalOptions {
  Metric metric = Metric::euclidean;
  /// L2-normalise features before measuring distances.
  bool normalize = true;
  Index max_rank = 50;
};

struct FeatureSet {
  Mat features;  // one row per sample
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> cams;

  Index size() const { return features.rows(); }
  void check() const;
};

struct QueryResult {
  /// Gallery indices in ascending distance, same-id/same-camera entries removed.
  std::vector<Index> ranked;
  std::vector<bool> matches;  // parallel to ranked
  double ap = 0.0;
  bool valid = false;  // false when no positive survived filtering
};

struct RetrievalResult {
  std::vector<QueryResult> queries;
  double map = 0.0;
  /// cmc[k] = fraction of valid queries with a positive in the top k+1.
  std::vector<double> cmc;
  Index valid_queries = 0;
  Index skipped_queries = 0;

  double rank(Index k) const;  // CMC@k, 1-based; saturates past the curve end
  nlohmann::json summary() const;
};

/// Precision at each positive's rank, averaged over the positives.
double average_precision(const std::vector<bool>& relevance);

Mat distance_matrix(const Mat& query, const Mat& gallery, const EvalOptions& options = {});

RetrievalResult evaluate(const FeatureSet& query, const FeatureSet& gallery,
                         const EvalOptions& options = {});
/// Same, from a precomputed query x gallery distance matrix.
RetrievalResult evaluate_distances(const Mat& distances, const FeatureSet& query,
                                   const FeatureSet& gallery, Index max_rank = 50);

/// Per-query TSV (index, id, cam, valid, AP, first-match rank).
void write_results_tsv(const std::filesystem::path& path, const RetrievalResult& result,
                       const FeatureSet& query);

/// Writes one row: the query tile then the top_k gallery tiles, framed green
/// for a correct match and red otherwise.
void export_rank_list(const RetrievalResult& result, Index query, Index top_k,
                      std::span<const std::filesystem::path> query_images,
                      std::span<const std::filesystem::path> gallery_images,
                      const std::filesystem::path& out);

}  // namespace demo
