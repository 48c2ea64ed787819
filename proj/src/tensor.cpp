// SPDX-License-Identifier: Apache-2.0
#include "demo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

#include "demo/errors.hpp"

namespace demo {

namespace detail {
struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  Var::Backward backward;
};
}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

const Mat& empty_matrix() {
  static const Mat kEmpty;
  return kEmpty;
}

std::string shape_str(const Mat& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InputError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Mat& Var::value() const {
  if (!node_) throw StateError("access to undefined Var");
  return node_->value;
}

Mat& Var::value_mut() {
  if (!node_) throw StateError("access to undefined Var");
  return node_->value;
}

double Var::item() const {
  const Mat& v = value();
  if (v.size() != 1) throw InputError("item() on non-scalar " + shape_str(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

bool Var::has_grad() const { return node_ && node_->grad.size() > 0; }

const Mat& Var::grad() const { return has_grad() ? node_->grad : empty_matrix(); }

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

void Var::accumulate_grad(const Mat& g) const {
  if (!requires_grad()) return;
  if (node_->grad.size() == 0) {
    node_->grad = g;
  } else {
    node_->grad += g;
  }
}

Var Var::from_op(Mat value, std::vector<Var> inputs, Backward backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Var& v) { return v.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.requires_grad()) out.node_->inputs.push_back(v.node_);
  }
  out.node_->backward = std::move(backward);
  return out;
}

void Var::backward() const {
  if (value().size() != 1) throw InputError("backward() needs a scalar output");
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  accumulate_grad(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() > 0) {
      n->backward(n->grad, n->value);
      // Interior gradients are not needed once propagated.
      n->grad.resize(0, 0);
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

namespace ops {

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return Var::from_op(a.value() + b.value(), {a, b}, [a, b](const Mat& g, const Mat&) {
    a.accumulate_grad(g);
    b.accumulate_grad(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return Var::from_op(a.value() - b.value(), {a, b}, [a, b](const Mat& g, const Mat&) {
    a.accumulate_grad(g);
    b.accumulate_grad(-g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return Var::from_op(a.value().cwiseProduct(b.value()), {a, b},
                      [a, b](const Mat& g, const Mat&) {
                        if (a.requires_grad()) a.accumulate_grad(g.cwiseProduct(b.value()));
                        if (b.requires_grad()) b.accumulate_grad(g.cwiseProduct(a.value()));
                      });
}

Var scale(const Var& a, double s) {
  return Var::from_op(a.value() * s, {a},
                      [a, s](const Mat& g, const Mat&) { a.accumulate_grad(g * s); });
}

Var add_scalar(const Var& a, double s) {
  Mat v = a.value().array() + s;
  return Var::from_op(std::move(v), {a}, [a](const Mat& g, const Mat&) { a.accumulate_grad(g); });
}

Var add_tiled(const Var& x, const Var& tile) {
  const Index t = tile.rows();
  if (t == 0 || x.rows() % t != 0 || x.cols() != tile.cols()) {
    throw InputError("add_tiled: cannot tile " + shape_str(tile.value()) + " over " +
                     shape_str(x.value()));
  }
  Mat v = x.value();
  for (Index start = 0; start < v.rows(); start += t) v.middleRows(start, t) += tile.value();
  return Var::from_op(std::move(v), {x, tile}, [x, tile, t](const Mat& g, const Mat&) {
    x.accumulate_grad(g);
    if (tile.requires_grad()) {
      Mat gt = Mat::Zero(t, g.cols());
      for (Index start = 0; start < g.rows(); start += t) gt += g.middleRows(start, t);
      tile.accumulate_grad(gt);
    }
  });
}

Var mul_const(const Var& a, const Mat& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) {
    throw InputError("mul_const: shape mismatch");
  }
  return Var::from_op(a.value().cwiseProduct(c), {a},
                      [a, c](const Mat& g, const Mat&) { a.accumulate_grad(g.cwiseProduct(c)); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw InputError("matmul: inner dimensions differ " + shape_str(a.value()) + " * " +
                     shape_str(b.value()));
  }
  return Var::from_op(a.value() * b.value(), {a, b}, [a, b](const Mat& g, const Mat&) {
    if (a.requires_grad()) a.accumulate_grad(g * b.value().transpose());
    if (b.requires_grad()) b.accumulate_grad(a.value().transpose() * g);
  });
}

Var matmul_const(const Var& a, const Mat& b) {
  if (a.cols() != b.rows()) throw InputError("matmul_const: inner dimensions differ");
  return Var::from_op(a.value() * b, {a}, [a, b](const Mat& g, const Mat&) {
    a.accumulate_grad(g * b.transpose());
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) {
    throw InputError("linear: input width " + std::to_string(x.cols()) +
                     " does not match weight " + shape_str(w.value()));
  }
  Mat v = x.value() * w.value();
  if (b.defined()) {
    if (b.rows() != 1 || b.cols() != w.cols()) throw InputError("linear: bad bias shape");
    v.rowwise() += b.value().row(0);
  }
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return Var::from_op(std::move(v), std::move(inputs), [x, w, b](const Mat& g, const Mat&) {
    if (x.requires_grad()) x.accumulate_grad(g * w.value().transpose());
    if (w.requires_grad()) w.accumulate_grad(x.value().transpose() * g);
    if (b.defined() && b.requires_grad()) b.accumulate_grad(g.colwise().sum());
  });
}

Var gelu(const Var& x) {
  Mat v = x.value().unaryExpr([](double t) { return gelu_scalar(t); });
  return Var::from_op(std::move(v), {x}, [x](const Mat& g, const Mat&) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Mat d = x.value().unaryExpr([inv_sqrt_2pi](double t) {
      return 0.5 * (1.0 + std::erf(t / std::numbers::sqrt2)) +
             t * inv_sqrt_2pi * std::exp(-0.5 * t * t);
    });
    x.accumulate_grad(g.cwiseProduct(d));
  });
}

Var relu(const Var& x) {
  Mat v = x.value().cwiseMax(0.0);
  return Var::from_op(std::move(v), {x}, [x](const Mat& g, const Mat&) {
    Mat mask = (x.value().array() > 0.0).cast<double>().matrix();
    x.accumulate_grad(g.cwiseProduct(mask));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw InputError("layer_norm: affine parameters must be 1x" + std::to_string(d));
  }
  auto xhat = std::make_shared<Mat>(n, d);
  auto rstd = std::make_shared<Eigen::VectorXd>(n);
  for (Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    (*rstd)(i) = 1.0 / std::sqrt(var + eps);
    xhat->row(i) = (row.array() - mu) * (*rstd)(i);
  }
  Mat v = *xhat;
  for (Index i = 0; i < n; ++i) {
    v.row(i) = v.row(i).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  }
  return Var::from_op(std::move(v), {x, gain, bias},
                      [x, gain, bias, xhat, rstd, d](const Mat& g, const Mat&) {
                        if (x.requires_grad()) {
                          Mat dx(g.rows(), d);
                          for (Index i = 0; i < g.rows(); ++i) {
                            Eigen::RowVectorXd dxh = g.row(i).cwiseProduct(gain.value().row(0));
                            const double m1 = dxh.mean();
                            const double m2 = dxh.cwiseProduct(xhat->row(i)).mean();
                            dx.row(i) = (*rstd)(i) *
                                        (dxh.array() - m1 - xhat->row(i).array() * m2).matrix();
                          }
                          x.accumulate_grad(dx);
                        }
                        if (gain.requires_grad()) {
                          gain.accumulate_grad(g.cwiseProduct(*xhat).colwise().sum());
                        }
                        if (bias.requires_grad()) bias.accumulate_grad(g.colwise().sum());
                      });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     BatchStats* stats_out) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (n < 2) throw InputError("batch_norm_train: needs at least two samples");
  Mat mu = x.value().colwise().mean();
  Mat centered = x.value().rowwise() - mu.row(0);
  Mat var = centered.array().square().colwise().mean();
  auto rstd = std::make_shared<Mat>((var.array() + eps).rsqrt().matrix());
  auto xhat = std::make_shared<Mat>(n, d);
  for (Index i = 0; i < n; ++i) xhat->row(i) = centered.row(i).cwiseProduct(rstd->row(0));
  Mat v(n, d);
  for (Index i = 0; i < n; ++i) {
    v.row(i) = xhat->row(i).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  if (stats_out) {
    stats_out->mean = mu;
    stats_out->var = var;
  }
  return Var::from_op(std::move(v), {x, gamma, beta},
                      [x, gamma, beta, xhat, rstd, n](const Mat& g, const Mat&) {
                        if (x.requires_grad()) {
                          Mat dxh = g;
                          for (Index i = 0; i < n; ++i) {
                            dxh.row(i) = dxh.row(i).cwiseProduct(gamma.value().row(0));
                          }
                          Eigen::RowVectorXd s1 = dxh.colwise().sum();
                          Eigen::RowVectorXd s2 = dxh.cwiseProduct(*xhat).colwise().sum();
                          Mat dx(n, g.cols());
                          const double inv_n = 1.0 / static_cast<double>(n);
                          for (Index i = 0; i < n; ++i) {
                            dx.row(i) = (rstd->row(0).array() * inv_n *
                                         (static_cast<double>(n) * dxh.row(i).array() -
                                          s1.array() - xhat->row(i).array() * s2.array()))
                                            .matrix();
                          }
                          x.accumulate_grad(dx);
                        }
                        if (gamma.requires_grad()) {
                          gamma.accumulate_grad(g.cwiseProduct(*xhat).colwise().sum());
                        }
                        if (beta.requires_grad()) beta.accumulate_grad(g.colwise().sum());
                      });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Mat& mean,
                    const Mat& var, double eps) {
  const Index n = x.rows();
  Mat rstd = (var.array() + eps).rsqrt().matrix();
  auto xhat = std::make_shared<Mat>(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    xhat->row(i) = (x.value().row(i) - mean.row(0)).cwiseProduct(rstd.row(0));
  }
  Mat v(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    v.row(i) = xhat->row(i).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return Var::from_op(std::move(v), {x, gamma, beta},
                      [x, gamma, beta, xhat, rstd, n](const Mat& g, const Mat&) {
                        if (x.requires_grad()) {
                          Mat dx = g;
                          Eigen::RowVectorXd s = gamma.value().row(0).cwiseProduct(rstd.row(0));
                          for (Index i = 0; i < n; ++i) dx.row(i) = dx.row(i).cwiseProduct(s);
                          x.accumulate_grad(dx);
                        }
                        if (gamma.requires_grad()) {
                          gamma.accumulate_grad(g.cwiseProduct(*xhat).colwise().sum());
                        }
                        if (beta.requires_grad()) beta.accumulate_grad(g.colwise().sum());
                      });
}

Var softmax_rows(const Var& x) {
  Mat v = x.value();
  for (Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  return Var::from_op(std::move(v), {x}, [x](const Mat& g, const Mat& y) {
    Mat dx(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      dx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    x.accumulate_grad(dx);
  });
}

Var log_softmax_rows(const Var& x) {
  Mat v = x.value();
  for (Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    const double lse = m + std::log((v.row(i).array() - m).exp().sum());
    v.row(i).array() -= lse;
  }
  return Var::from_op(std::move(v), {x}, [x](const Mat& g, const Mat& y) {
    Mat dx(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const double s = g.row(i).sum();
      dx.row(i) = g.row(i) - (y.row(i).array().exp() * s).matrix();
    }
    x.accumulate_grad(dx);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("concat_cols: nothing to concatenate");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw InputError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return Var::from_op(std::move(v), inputs, [inputs](const Mat& g, const Mat&) {
    Index off = 0;
    for (const auto& p : inputs) {
      if (p.requires_grad()) p.accumulate_grad(g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("concat_rows: nothing to concatenate");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw InputError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return Var::from_op(std::move(v), inputs, [inputs](const Mat& g, const Mat&) {
    Index off = 0;
    for (const auto& p : inputs) {
      if (p.requires_grad()) p.accumulate_grad(g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var slice_cols(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw InputError("slice_cols: range out of bounds");
  }
  return Var::from_op(x.value().middleCols(start, count), {x},
                      [x, start, count](const Mat& g, const Mat&) {
                        Mat dx = Mat::Zero(x.rows(), x.cols());
                        dx.middleCols(start, count) = g;
                        x.accumulate_grad(dx);
                      });
}

Var gather_rows(const Var& x, std::span<const Index> index) {
  Mat v(static_cast<Index>(index.size()), x.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw InputError("gather_rows: index out of range");
    v.row(static_cast<Index>(i)) = x.value().row(index[i]);
  }
  std::vector<Index> idx(index.begin(), index.end());
  return Var::from_op(std::move(v), {x}, [x, idx = std::move(idx)](const Mat& g, const Mat&) {
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(static_cast<Index>(i));
    x.accumulate_grad(dx);
  });
}

Var gather_elements(const Var& x, std::span<const Index> index, Index rows, Index cols) {
  if (static_cast<Index>(index.size()) != rows * cols) {
    throw InputError("gather_elements: index count does not match output shape");
  }
  Mat v(rows, cols);
  const double* src = x.value().data();
  const Index n = x.value().size();
  for (Index i = 0; i < rows * cols; ++i) {
    if (index[i] < 0 || index[i] >= n) throw InputError("gather_elements: index out of range");
    v.data()[i] = src[index[i]];
  }
  std::vector<Index> idx(index.begin(), index.end());
  return Var::from_op(std::move(v), {x}, [x, idx = std::move(idx)](const Mat& g, const Mat&) {
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (size_t i = 0; i < idx.size(); ++i) dx.data()[idx[i]] += g.data()[i];
    x.accumulate_grad(dx);
  });
}

Var reshape(const Var& x, Index rows, Index cols) {
  if (rows * cols != x.value().size()) throw InputError("reshape: element count changes");
  Mat v = Eigen::Map<const Mat>(x.value().data(), rows, cols);
  return Var::from_op(std::move(v), {x}, [x](const Mat& g, const Mat&) {
    x.accumulate_grad(Eigen::Map<const Mat>(g.data(), x.rows(), x.cols()));
  });
}

namespace {
Index block_length(const Var& x, Index blocks, const char* op) {
  if (blocks <= 0 || x.rows() % blocks != 0 || x.rows() == 0) {
    throw InputError(std::string(op) + ": rows not divisible into non-empty blocks");
  }
  return x.rows() / blocks;
}
}  // namespace

Var pool_mean(const Var& x, Index blocks) {
  const Index len = block_length(x, blocks, "pool_mean");
  Mat v(blocks, x.cols());
  for (Index b = 0; b < blocks; ++b) v.row(b) = x.value().middleRows(b * len, len).colwise().mean();
  return Var::from_op(std::move(v), {x}, [x, blocks, len](const Mat& g, const Mat&) {
    Mat dx(x.rows(), x.cols());
    for (Index b = 0; b < blocks; ++b) {
      for (Index i = 0; i < len; ++i) dx.row(b * len + i) = g.row(b) / static_cast<double>(len);
    }
    x.accumulate_grad(dx);
  });
}

Var pool_max(const Var& x, Index blocks) {
  const Index len = block_length(x, blocks, "pool_max");
  const Index c = x.cols();
  Mat v(blocks, c);
  auto arg = std::make_shared<std::vector<Index>>(blocks * c);
  for (Index b = 0; b < blocks; ++b) {
    for (Index j = 0; j < c; ++j) {
      Index best = 0;
      double bv = x.value()(b * len, j);
      for (Index i = 1; i < len; ++i) {
        if (x.value()(b * len + i, j) > bv) {
          bv = x.value()(b * len + i, j);
          best = i;
        }
      }
      v(b, j) = bv;
      (*arg)[b * c + j] = b * len + best;
    }
  }
  return Var::from_op(std::move(v), {x}, [x, arg, blocks, c](const Mat& g, const Mat&) {
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (Index b = 0; b < blocks; ++b) {
      for (Index j = 0; j < c; ++j) dx((*arg)[b * c + j], j) += g(b, j);
    }
    x.accumulate_grad(dx);
  });
}

Var pool_gem(const Var& x, Index blocks, const Var& p, double eps) {
  const Index len = block_length(x, blocks, "pool_gem");
  if (p.value().size() != 1) throw InputError("pool_gem: exponent must be 1x1");
  const double pv = p.item();
  if (!(pv > 0.0)) throw InputError("pool_gem: exponent must be positive");
  const Index c = x.cols();
  Mat clamped = x.value().cwiseMax(eps);
  Mat powered = clamped.array().pow(pv).matrix();
  Mat mean_pow(blocks, c);
  Mat v(blocks, c);
  for (Index b = 0; b < blocks; ++b) {
    mean_pow.row(b) = powered.middleRows(b * len, len).colwise().mean();
  }
  v = mean_pow.array().pow(1.0 / pv).matrix();
  return Var::from_op(
      v, {x, p},
      [x, p, blocks, len, c, pv, eps, clamped, powered, mean_pow](const Mat& g, const Mat& y) {
        const double inv_len = 1.0 / static_cast<double>(len);
        if (x.requires_grad()) {
          Mat dx = Mat::Zero(x.rows(), c);
          for (Index b = 0; b < blocks; ++b) {
            for (Index j = 0; j < c; ++j) {
              // dy/dx_i = y^(1-p) * x_i^(p-1) / len
              const double coef = g(b, j) * std::pow(y(b, j), 1.0 - pv) * inv_len;
              for (Index i = 0; i < len; ++i) {
                const Index r = b * len + i;
                if (x.value()(r, j) >= eps) dx(r, j) = coef * std::pow(clamped(r, j), pv - 1.0);
              }
            }
          }
          x.accumulate_grad(dx);
        }
        if (p.requires_grad()) {
          double dp = 0.0;
          for (Index b = 0; b < blocks; ++b) {
            for (Index j = 0; j < c; ++j) {
              double weighted_log = 0.0;
              for (Index i = 0; i < len; ++i) {
                const Index r = b * len + i;
                weighted_log += powered(r, j) * std::log(clamped(r, j));
              }
              weighted_log *= inv_len;
              const double s = mean_pow(b, j);
              dp += g(b, j) * y(b, j) * (-std::log(s) / (pv * pv) + weighted_log / (pv * s));
            }
          }
          p.accumulate_grad(Mat::Constant(1, 1, dp));
        }
      });
}

Var attention_probs(const Var& q, const Var& k, Index blocks, Index heads) {
  const Index c_total = q.cols();
  if (k.cols() != c_total) throw InputError("attention_probs: query/key widths differ");
  if (heads <= 0 || c_total % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(c_total) +
                      " not divisible by head count " + std::to_string(heads));
  }
  if (blocks <= 0 || q.rows() % blocks != 0 || k.rows() % blocks != 0) {
    throw InputError("attention_probs: rows not divisible by block count");
  }
  const Index qb = q.rows() / blocks;
  const Index kb = k.rows() / blocks;
  if (kb == 0) throw InputError("attention: empty key set");
  const Index c = c_total / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(c));
  Mat probs(blocks * heads * qb, kb);
  for (Index b = 0; b < blocks; ++b) {
    for (Index h = 0; h < heads; ++h) {
      auto out = probs.middleRows((b * heads + h) * qb, qb);
      out.noalias() = q.value().block(b * qb, h * c, qb, c) *
                      k.value().block(b * kb, h * c, kb, c).transpose();
      out *= inv_scale;
      for (Index i = 0; i < qb; ++i) {
        auto row = out.row(i);
        const double m = row.maxCoeff();
        row = (row.array() - m).exp().matrix();
        row /= row.sum();
      }
    }
  }
  return Var::from_op(
      std::move(probs), {q, k},
      [q, k, blocks, heads, qb, kb, c, inv_scale](const Mat& g, const Mat& p) {
        Mat dq = Mat::Zero(q.rows(), q.cols());
        Mat dk = Mat::Zero(k.rows(), k.cols());
        for (Index b = 0; b < blocks; ++b) {
          for (Index h = 0; h < heads; ++h) {
            const Index r0 = (b * heads + h) * qb;
            const auto pb = p.middleRows(r0, qb);
            const auto gb = g.middleRows(r0, qb);
            Mat ds(qb, kb);
            for (Index i = 0; i < qb; ++i) {
              const double dot = gb.row(i).dot(pb.row(i));
              ds.row(i) = pb.row(i).cwiseProduct((gb.row(i).array() - dot).matrix());
            }
            ds *= inv_scale;
            dq.block(b * qb, h * c, qb, c).noalias() += ds * k.value().block(b * kb, h * c, kb, c);
            dk.block(b * kb, h * c, kb, c).noalias() +=
                ds.transpose() * q.value().block(b * qb, h * c, qb, c);
          }
        }
        q.accumulate_grad(dq);
        k.accumulate_grad(dk);
      });
}

Var attention_apply(const Var& probs, const Var& v, Index blocks, Index heads) {
  const Index kb = probs.cols();
  if (blocks <= 0 || heads <= 0 || probs.rows() % (blocks * heads) != 0) {
    throw InputError("attention_apply: weight rows not divisible by blocks*heads");
  }
  if (v.rows() != blocks * kb) throw InputError("attention_apply: value rows mismatch");
  if (v.cols() % heads != 0) throw ConfigError("attention_apply: width not divisible by heads");
  const Index qb = probs.rows() / (blocks * heads);
  const Index c = v.cols() / heads;
  Mat out(blocks * qb, v.cols());
  for (Index b = 0; b < blocks; ++b) {
    for (Index h = 0; h < heads; ++h) {
      out.block(b * qb, h * c, qb, c).noalias() =
          probs.value().middleRows((b * heads + h) * qb, qb) * v.value().block(b * kb, h * c, kb, c);
    }
  }
  return Var::from_op(std::move(out), {probs, v},
                      [probs, v, blocks, heads, qb, kb, c](const Mat& g, const Mat&) {
                        Mat dp(probs.rows(), kb);
                        Mat dv = Mat::Zero(v.rows(), v.cols());
                        for (Index b = 0; b < blocks; ++b) {
                          for (Index h = 0; h < heads; ++h) {
                            const Index r0 = (b * heads + h) * qb;
                            const auto gb = g.block(b * qb, h * c, qb, c);
                            dp.middleRows(r0, qb).noalias() =
                                gb * v.value().block(b * kb, h * c, kb, c).transpose();
                            dv.block(b * kb, h * c, kb, c).noalias() +=
                                probs.value().middleRows(r0, qb).transpose() * gb;
                          }
                        }
                        probs.accumulate_grad(dp);
                        v.accumulate_grad(dv);
                      });
}

Var pairwise_distance(const Var& x) {
  constexpr double kMinSq = 1e-12;
  const Index n = x.rows();
  Mat d(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double sq = (x.value().row(i) - x.value().row(j)).squaredNorm();
      d(i, j) = std::sqrt(std::max(sq, kMinSq));
    }
  }
  return Var::from_op(std::move(d), {x}, [x, n](const Mat& g, const Mat& dist) {
    Mat w = Mat::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double sq = (x.value().row(i) - x.value().row(j)).squaredNorm();
        if (sq > kMinSq) w(i, j) = (g(i, j) + g(j, i)) / dist(i, j);
      }
    }
    Mat dx = w.rowwise().sum().asDiagonal() * x.value() - w * x.value();
    x.accumulate_grad(dx);
  });
}

Var sum(const Var& x) {
  return Var::from_op(Mat::Constant(1, 1, x.value().sum()), {x}, [x](const Mat& g, const Mat&) {
    x.accumulate_grad(Mat::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw InputError("mean of empty matrix");
  return Var::from_op(Mat::Constant(1, 1, x.value().sum() / n), {x},
                      [x, n](const Mat& g, const Mat&) {
                        x.accumulate_grad(Mat::Constant(x.rows(), x.cols(), g(0, 0) / n));
                      });
}

}  // namespace ops
}  // namespace demo
