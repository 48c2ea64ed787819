// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference implementations for tests. Nothing here calls into
// the demoreid library: every formula is re-written with explicit loops.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// y = x * w + b, w stored (in, out).
struct Affine {
  Matrix w;
  std::optional<Vector> b;
};

Vector apply(const Affine& a, const Vector& x);

struct BatchNormParams {
  Vector gamma, beta, mean, var;
  double eps = 1e-5;
};

/// Multi-head attention of one query over `keys` (rows), with q/k/v/o projections.
Vector oracle_attention(const Vector& query, const Matrix& keys, const Affine& q, const Affine& k,
                        const Affine& v, const Affine& o, int heads);

struct MapCmc {
  double map = 0.0;
  std::vector<double> cmc;
  int valid = 0;
  int skipped = 0;
};
/// Explicit sort and per-positive precision sums; same-id same-camera gallery
/// entries are dropped. Ties keep gallery order.
MapCmc oracle_map_cmc(const Matrix& distances, const std::vector<std::int64_t>& qids,
                      const std::vector<std::int64_t>& qcams, const std::vector<std::int64_t>& gids,
                      const std::vector<std::int64_t>& gcams, int max_rank);

/// Average precision of a ranked relevance pattern.
double oracle_ap(const std::vector<bool>& relevance);

/// Batch-hard triplet loss by enumerating all pairs.
double oracle_triplet(const Matrix& embeddings, const std::vector<std::int64_t>& labels,
                      double margin);

/// Label-smoothed cross entropy, mean over rows.
double oracle_ce_smooth(const Matrix& logits, const std::vector<std::int64_t>& labels,
                        double smoothing);

struct ExpertParams {
  Affine first;
  std::optional<Affine> second;
  BatchNormParams norm;
};

struct AtmoeParams {
  Affine reduction;  // 7C -> C
  BatchNormParams reduction_norm;
  Affine w_q, w_k;
  std::vector<ExpertParams> experts;  // 7
  int heads = 1;
};

/// Eval-mode ATMoE output for one instance whose decoupled features are the rows of `d`.
Vector oracle_atmoe(const Matrix& d, const AtmoeParams& p);
/// Gate weights (heads x 7) of the same computation.
Matrix oracle_atmoe_gate(const Matrix& d, const AtmoeParams& p);

struct FiniteDiff {
  std::vector<double> grad;
  /// Indices whose perturbed loss was non-finite; their entry in grad is NaN.
  std::vector<std::size_t> skipped;
};

/// Central differences of `loss` w.r.t. each pointed-to scalar.
FiniteDiff finite_diff_grad(const std::function<double()>& loss, const std::vector<double*>& params,
                            double step = 1e-5);

struct OracleReport {
  std::string case_id;
  double reference = 0.0;
  double implementation = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Fills errors and pass flag; rel error is |a-b| / max(|a|, |b|, 1e-300).
OracleReport compare(std::string case_id, double reference, double implementation,
                     double tolerance, bool relative = false);

void write_reports(const std::filesystem::path& path, const std::vector<OracleReport>& reports);

}  // namespace oracle
