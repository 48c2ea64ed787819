// SPDX-License-Identifier: Apache-2.0
//
// Parameter bookkeeping and the few layer types shared by every module.
#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "demo/tensor.hpp"

namespace demo {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double normal(double mean, double stddev);
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  std::mt19937_64& engine() { return engine_; }

  Mat normal_matrix(Index rows, Index cols, double stddev);
  Mat uniform_matrix(Index rows, Index cols, double bound);

 private:
  std::mt19937_64 engine_;
};

/// Mixes a seed with a stream id into an independent 64-bit seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Optimizer group: pretrained-style encoder weights vs newly added modules.
enum class ParamGroup { encoder, modules };

struct NamedParam {
  std::string name;
  Var var;
  ParamGroup group;
};

struct NamedBuffer {
  std::string name;
  Var var;
};

/// Owns every trainable parameter and persistent buffer of a model, in
/// registration order. Names are unique.
class ParameterStore {
 public:
  Var add(const std::string& name, Mat init, ParamGroup group);
  Var add_buffer(const std::string& name, Mat init);

  const std::deque<NamedParam>& params() const { return params_; }
  const std::deque<NamedBuffer>& buffers() const { return buffers_; }
  const NamedParam* find(const std::string& name) const;
  const NamedBuffer* find_buffer(const std::string& name) const;

  std::size_t parameter_count() const;
  void zero_grad();

 private:
  void claim(const std::string& name);

  std::deque<NamedParam> params_;
  std::deque<NamedBuffer> buffers_;
  std::vector<std::string> names_;
};

/// Batch-norm behaviour for one forward call.
struct RunMode {
  bool training = false;
  /// Update running statistics in training mode. Gradient checks turn this off.
  bool update_stats = true;
};

struct Linear {
  Var weight;  // (in, out)
  Var bias;    // (1, out) or undefined

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out, ParamGroup group,
         Rng& rng, bool with_bias = true);
  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }
};

struct LayerNorm {
  Var gain;
  Var bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index dim, ParamGroup group);
  Var operator()(const Var& x) const { return ops::layer_norm(x, gain, bias); }
};

struct BatchNorm {
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  Var gamma;
  Var beta;
  Var running_mean;  // buffer
  Var running_var;   // buffer

  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, Index dim, ParamGroup group);
  Var operator()(const Var& x, const RunMode& mode) const;
};

}  // namespace demo
