// SPDX-License-Identifier: Apache-2.0
#include "demo/pife.hpp"

#include <algorithm>
#include <cctype>

#include "demo/errors.hpp"

namespace demo {

std::string_view to_string(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::average: return "average";
    case PoolingMode::max: return "max";
    case PoolingMode::gem: return "gem";
  }
  return "?";
}

PoolingMode parse_pooling_mode(std::string_view text) {
  if (text == "average" || text == "avg" || text == "mean") return PoolingMode::average;
  if (text == "max") return PoolingMode::max;
  if (text == "gem") return PoolingMode::gem;
  throw ConfigError("unknown pooling mode '" + std::string(text) + "'");
}

Pife::Pife(ParameterStore& store, const std::string& name, Index dim, PoolingMode mode, Rng& rng)
    : dim_(dim), mode_(mode) {
  constexpr auto g = ParamGroup::modules;
  norm_ = LayerNorm(store, name + ".norm", 2 * dim, g);
  projection_ = Linear(store, name + ".projection", 2 * dim, dim, g, rng);
  if (mode_ == PoolingMode::gem) {
    gem_p_ = store.add(name + ".gem_p", Mat::Constant(1, 1, kDefaultGemP), g);
  }
}

Var Pife::pool(const Var& patch_tokens, Index batch) const {
  switch (mode_) {
    case PoolingMode::average: return ops::pool_mean(patch_tokens, batch);
    case PoolingMode::max: return ops::pool_max(patch_tokens, batch);
    case PoolingMode::gem: return ops::pool_gem(patch_tokens, batch, gem_p_);
  }
  throw ConfigError("unknown pooling mode");
}

Var Pife::fuse(const Var& class_tokens, const Var& pooled) const {
  if (class_tokens.cols() != dim_ || pooled.cols() != dim_ ||
      class_tokens.rows() != pooled.rows()) {
    throw ConfigError("pife: expected two batch x " + std::to_string(dim_) + " inputs");
  }
  std::vector<Var> parts{class_tokens, pooled};
  return ops::gelu(projection_(norm_(ops::concat_cols(parts))));
}

Var Pife::forward(const EncoderOutput& tokens) const {
  if (tokens.num_patches < 1) throw InputError("pife: no patch tokens");
  return fuse(tokens.class_tokens(), pool(tokens.patch_tokens(), tokens.batch));
}

Eigen::RowVectorXd pool_patches(const Mat& patch_tokens, PoolingMode mode, double gem_p) {
  if (patch_tokens.rows() < 1) throw InputError("pool_patches: empty token set");
  if (mode == PoolingMode::gem && !(gem_p > 0.0)) {
    throw ConfigError("pool_patches: GeM exponent must be positive");
  }
  NoGradGuard guard;
  Var x(patch_tokens);
  switch (mode) {
    case PoolingMode::average: return ops::pool_mean(x, 1).value().row(0);
    case PoolingMode::max: return ops::pool_max(x, 1).value().row(0);
    case PoolingMode::gem:
      return ops::pool_gem(x, 1, Var(Mat::Constant(1, 1, gem_p))).value().row(0);
  }
  throw ConfigError("unknown pooling mode");
}

FusedFeature fuse(const Eigen::RowVectorXd& class_token, const Eigen::RowVectorXd& pooled,
                  const Pife& params, Modality modality) {
  if (class_token.size() != params.dim() || pooled.size() != params.dim()) {
    throw ConfigError("fuse: inputs must both have dimension " + std::to_string(params.dim()));
  }
  NoGradGuard guard;
  Var out = params.fuse(Var(Mat(class_token)), Var(Mat(pooled)));
  return FusedFeature{out.value().row(0), modality};
}

}  // namespace demo
