// SPDX-License-Identifier: Apache-2.0
#include "demo/optimizer.hpp"

#include <cmath>

#include "demo/errors.hpp"

namespace demo {

Adam::Adam(const ParameterStore& store, AdamConfig config) : store_(&store), config_(config) {
  for (const auto& p : store.params()) {
    m_.push_back(Mat::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Mat::Zero(p.var.rows(), p.var.cols()));
  }
}

void Adam::step(double encoder_lr, double modules_lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  size_t i = 0;
  for (const auto& p : store_->params()) {
    Mat& m = m_[i];
    Mat& v = v_[i];
    ++i;
    if (!p.var.has_grad()) continue;
    Var w = p.var;
    Mat g = p.var.grad();
    if (config_.weight_decay != 0.0) g += config_.weight_decay * w.value();
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const double lr = p.group == ParamGroup::encoder ? encoder_lr : modules_lr;
    if (lr == 0.0) continue;
    w.value_mut().array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.eps);
  }
}

void Adam::save(ArrayArchive& archive) const {
  size_t i = 0;
  for (const auto& p : store_->params()) {
    archive.put("adam_m/" + p.name, m_[i]);
    archive.put("adam_v/" + p.name, v_[i]);
    ++i;
  }
  archive.meta()["adam_step"] = t_;
}

void Adam::load(const ArrayArchive& archive) {
  size_t i = 0;
  for (const auto& p : store_->params()) {
    for (auto [prefix, dst] : {std::pair{"adam_m/", &m_[i]}, std::pair{"adam_v/", &v_[i]}}) {
      const std::string key = prefix + p.name;
      if (!archive.contains(key)) throw CheckpointError("checkpoint lacks optimizer state " + key);
      const Mat& src = archive.matrix(key);
      if (src.rows() != dst->rows() || src.cols() != dst->cols()) {
        throw CheckpointError("optimizer state " + key + " has the wrong shape");
      }
      *dst = src;
    }
    ++i;
  }
  if (!archive.meta().contains("adam_step")) throw CheckpointError("checkpoint lacks adam_step");
  t_ = archive.meta()["adam_step"].get<Index>();
}

}  // namespace demo
