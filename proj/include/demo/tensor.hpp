// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense row-major float64 matrices.
//
// Every value is a 2-D matrix. Batched sequence data is stored "block-major":
// a batch of B sequences of length L with width C is a (B*L) x C matrix whose
// rows [b*L, (b+1)*L) belong to sequence b.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace demo {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {
struct Node;
}

class Var {
 public:
  /// Receives the gradient w.r.t. this op's output and the output value.
  using Backward = std::function<void(const Mat& grad_out, const Mat& out)>;

  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const;
  /// Direct write access; used by optimizers and finite-difference probes.
  Mat& value_mut();
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  const Mat& grad() const;
  void zero_grad();
  void accumulate_grad(const Mat& g) const;

  /// Seeds d(this)/d(this) = 1 and back-propagates. Requires a 1x1 value.
  void backward() const;

  /// Creates an op result. The backward closure is dropped when no input
  /// requires a gradient or gradient recording is disabled.
  static Var from_op(Mat value, std::vector<Var> inputs, Backward backward);

  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// Adds `tile` to `x`, repeating tile's rows: x.row(i) += tile.row(i % tile.rows()).
Var add_tiled(const Var& x, const Var& tile);
/// Multiplies every entry by a constant matrix of the same shape.
Var mul_const(const Var& a, const Mat& c);

Var matmul(const Var& a, const Var& b);
Var matmul_const(const Var& a, const Mat& b);
/// x * w + b with w in the (in, out) row-input convention; bias may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);

Var gelu(const Var& x);
Var relu(const Var& x);

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

struct BatchStats {
  Mat mean;
  Mat var;  // biased
};
/// Batch normalisation with statistics of the current batch (rows are samples).
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     BatchStats* stats_out);
/// Batch normalisation with fixed statistics.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Mat& mean,
                    const Mat& var, double eps);

Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& x, Index start, Index count);
/// out.row(i) = x.row(index[i]); gradient is scatter-added.
Var gather_rows(const Var& x, std::span<const Index> index);
/// out(r, c) = x.data()[index[r * cols + c]] over the flat row-major storage.
Var gather_elements(const Var& x, std::span<const Index> index, Index rows, Index cols);
Var reshape(const Var& x, Index rows, Index cols);

/// Per-block column statistics over `blocks` equal row blocks; output blocks x C.
Var pool_mean(const Var& x, Index blocks);
Var pool_max(const Var& x, Index blocks);
/// Generalised mean with inputs clamped to >= eps; p is a learnable 1x1.
Var pool_gem(const Var& x, Index blocks, const Var& p, double eps = 1e-6);

/// Scaled dot-product attention weights for `blocks` independent groups.
/// q: (blocks*qb) x C, k: (blocks*kb) x C, C divisible by heads.
/// Result: (blocks*heads*qb) x kb, row ((b*heads)+h)*qb + i holds the softmax
/// over keys of query i in block b restricted to head h's feature slice.
Var attention_probs(const Var& q, const Var& k, Index blocks, Index heads);
/// Applies attention weights from attention_probs to values v: (blocks*kb) x C.
Var attention_apply(const Var& probs, const Var& v, Index blocks, Index heads);

/// Euclidean distance matrix between rows, sqrt clamped at 1e-12 squared distance.
Var pairwise_distance(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace ops

double gelu_scalar(double x);

}  // namespace demo
