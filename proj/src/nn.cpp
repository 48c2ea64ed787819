// SPDX-License-Identifier: Apache-2.0
#include "demo/nn.hpp"

#include <algorithm>
#include <cmath>

#include "demo/errors.hpp"

namespace demo {

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(engine_);
}

bool Rng::bernoulli(double p) { return uniform(0.0, 1.0) < p; }

Mat Rng::normal_matrix(Index rows, Index cols, double stddev) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(0.0, stddev);
  return m;
}

Mat Rng::uniform_matrix(Index rows, Index cols, double bound) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(-bound, bound);
  return m;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void ParameterStore::claim(const std::string& name) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  names_.push_back(name);
}

Var ParameterStore::add(const std::string& name, Mat init, ParamGroup group) {
  claim(name);
  params_.push_back({name, Var(std::move(init), true), group});
  return params_.back().var;
}

Var ParameterStore::add_buffer(const std::string& name, Mat init) {
  claim(name);
  buffers_.push_back({name, Var(std::move(init), false)});
  return buffers_.back().var;
}

const NamedParam* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const NamedBuffer* ParameterStore::find_buffer(const std::string& name) const {
  for (const auto& b : buffers_) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

Linear::Linear(ParameterStore& store, const std::string& name, Index in, Index out,
               ParamGroup group, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.add(name + ".weight", rng.uniform_matrix(in, out, bound), group);
  if (with_bias) bias = store.add(name + ".bias", Mat::Zero(1, out), group);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Index dim,
                     ParamGroup group) {
  gain = store.add(name + ".gain", Mat::Ones(1, dim), group);
  bias = store.add(name + ".bias", Mat::Zero(1, dim), group);
}

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, Index dim,
                     ParamGroup group) {
  gamma = store.add(name + ".gamma", Mat::Ones(1, dim), group);
  beta = store.add(name + ".beta", Mat::Zero(1, dim), group);
  running_mean = store.add_buffer(name + ".running_mean", Mat::Zero(1, dim));
  running_var = store.add_buffer(name + ".running_var", Mat::Ones(1, dim));
}

Var BatchNorm::operator()(const Var& x, const RunMode& mode) const {
  if (!mode.training) {
    return ops::batch_norm_eval(x, gamma, beta, running_mean.value(), running_var.value(), kEps);
  }
  ops::BatchStats stats;
  Var out = ops::batch_norm_train(x, gamma, beta, kEps, &stats);
  if (mode.update_stats) {
    const double n = static_cast<double>(x.rows());
    Mat unbiased = stats.var * (n / (n - 1.0));
    // Buffers are plain Vars; writing through a copy updates the shared node.
    Var rm = running_mean;
    Var rv = running_var;
    rm.value_mut() = (1.0 - kMomentum) * rm.value() + kMomentum * stats.mean;
    rv.value_mut() = (1.0 - kMomentum) * rv.value() + kMomentum * unbiased;
  }
  return out;
}

}  // namespace demo
