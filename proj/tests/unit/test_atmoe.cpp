// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "demo/atmoe.hpp"
#include "demo/errors.hpp"
#include "helpers.hpp"

using namespace demo;

namespace {

DecoupledSet random_set(Index c, std::uint64_t seed) {
  Rng rng(seed);
  DecoupledSet d;
  for (auto& f : d.features) f = rng.normal_matrix(1, c, 1.0).row(0);
  return d;
}

oracle::AtmoeParams oracle_params(const ParameterStore& store, Index heads) {
  oracle::AtmoeParams p;
  p.reduction = testing::affine(store, "atmoe.reduction");
  p.reduction_norm = testing::batch_norm(store, "atmoe.reduction_norm");
  p.w_q = testing::affine(store, "atmoe.w_q");
  p.w_k = testing::affine(store, "atmoe.w_k");
  p.heads = static_cast<int>(heads);
  for (DecoupledSlot s : kDecoupledSlots) {
    const std::string base = "atmoe.experts." + std::string(slot_name(s));
    oracle::ExpertParams e;
    if (store.find(base + ".fc.weight")) {
      e.first = testing::affine(store, base + ".fc");
    } else {
      e.first = testing::affine(store, base + ".fc1");
      e.second = testing::affine(store, base + ".fc2");
    }
    e.norm = testing::batch_norm(store, base + ".norm");
    p.experts.push_back(e);
  }
  return p;
}

Mat rows_of(const DecoupledSet& d) {
  Mat m(7, d.features[0].size());
  for (int s = 0; s < 7; ++s) m.row(s) = d.features[s];
  return m;
}

}  // namespace

TEST_CASE("gate rows are distributions") {
  ParameterStore store;
  Rng rng(1);
  Atmoe moe(store, "atmoe", AtmoeConfig{8, 2}, rng);
  testing::randomize(store, 2, 0.5);
  for (int t = 0; t < 200; ++t) {
    const DecoupledSet d = random_set(8, 100 + t);
    const GateTensor g = gate(reduce_query(d, moe), d, moe);
    REQUIRE(g.heads() == 2);
    REQUIRE(g.experts() == 7);
    for (Index h = 0; h < 2; ++h) {
      CHECK(std::abs(g.weights.row(h).sum() - 1.0) < 1e-6);
      CHECK(g.weights.row(h).minCoeff() > 0.0);
      CHECK(g.weights.row(h).maxCoeff() < 1.0);
    }
  }
}

TEST_CASE("equal logits give uniform gates; one head spans all of C") {
  ParameterStore store;
  Rng rng(3);
  Atmoe moe(store, "atmoe", AtmoeConfig{8, 1}, rng);
  testing::randomize(store, 4);
  Var wq = moe.query_projection().weight;
  wq.value_mut().setZero();
  const DecoupledSet d = random_set(8, 5);
  const GateTensor g = gate(reduce_query(d, moe), d, moe);
  CHECK(g.heads() == 1);
  for (Index e = 0; e < 7; ++e) CHECK(g.weights(0, e) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("straight-line oracle agreement in eval mode") {
  for (auto expert : {ExpertStructure::simple, ExpertStructure::bottleneck, ExpertStructure::ffn}) {
    CAPTURE(to_string(expert));
    ParameterStore store;
    Rng rng(6);
    Atmoe moe(store, "atmoe", AtmoeConfig{8, 2, expert}, rng);
    testing::randomize(store, 7);
    const auto op = oracle_params(store, 2);
    for (int t = 0; t < 20; ++t) {
      const DecoupledSet d = random_set(8, 200 + t);
      const GateTensor g = gate(reduce_query(d, moe), d, moe);
      const oracle::Matrix ref_gate = oracle::oracle_atmoe_gate(rows_of(d), op);
      CHECK((g.weights - ref_gate).cwiseAbs().maxCoeff() < 1e-9);

      std::vector<Eigen::RowVectorXd> experts;
      for (int s = 0; s < 7; ++s) experts.push_back(expert_forward(d.features[s], s, moe));
      const auto f = weighted_mix(experts, g);
      const oracle::Vector ref = oracle::oracle_atmoe(rows_of(d), op);
      CHECK((f.transpose() - ref).cwiseAbs().maxCoeff() < 1e-9);

      // The batched path agrees with the unbatched spelling.
      const AtmoeOutput out = moe.forward(Var(rows_of(d)), RunMode{false, false});
      CHECK((out.final_feature.value().row(0) - f).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("zero propagation") {
  ParameterStore store;
  Rng rng(8);
  Atmoe moe(store, "atmoe", AtmoeConfig{8, 2}, rng);
  DecoupledSet zero;
  for (auto& f : zero.features) f = Eigen::RowVectorXd::Zero(8);
  CHECK(reduce_query(zero, moe).cwiseAbs().maxCoeff() == 0.0);
  CHECK(reduce_query(zero, moe).size() == 8);
  CHECK(expert_forward(Eigen::RowVectorXd::Zero(8), 3, moe).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(expert_forward(Eigen::RowVectorXd::Zero(8), 7, moe), InputError);
  CHECK_THROWS_AS(expert_forward(Eigen::RowVectorXd::Zero(8), -1, moe), InputError);
}

TEST_CASE("experts have independent parameters") {
  ParameterStore store;
  Rng rng(9);
  Atmoe moe(store, "atmoe", AtmoeConfig{8, 2}, rng);
  const Eigen::RowVectorXd x = Eigen::RowVectorXd::LinSpaced(8, -1, 1);
  const auto before = expert_forward(x, 1, moe);
  Var w = moe.expert_params(0).first.weight;
  w.value_mut().array() += 1.0;
  CHECK(expert_forward(x, 1, moe) == before);
}

TEST_CASE("weighted mixing") {
  Rng rng(10);
  std::vector<Eigen::RowVectorXd> experts;
  for (int e = 0; e < 7; ++e) experts.push_back(rng.normal_matrix(1, 4, 1.0).row(0));
  const auto ones = weighted_mix(experts, GateTensor{Mat::Ones(2, 7)});
  for (int e = 0; e < 7; ++e) CHECK(ones.segment(e * 4, 4) == experts[e]);

  Mat w(1, 7);
  w << 0.1, 0.2, 0.3, 0.05, 0.05, 0.2, 0.1;
  const auto scaled = weighted_mix(experts, GateTensor{w});
  for (int e = 0; e < 7; ++e) {
    CHECK((scaled.segment(e * 4, 4) - w(0, e) * experts[e]).cwiseAbs().maxCoeff() < 1e-15);
  }

  Mat two(2, 7);
  two.row(0).setConstant(2.0);
  two.row(1).setConstant(3.0);
  const auto chunked = weighted_mix(experts, GateTensor{two});
  CHECK(chunked(0) == 2.0 * experts[0](0));
  CHECK(chunked(3) == 3.0 * experts[0](3));

  const Var big = weighted_mix(Var(Mat::Ones(1, 7 * 512)), Var(Mat::Constant(4, 7, 1.0 / 7)), 4);
  CHECK(big.cols() == 3584);
  CHECK_THROWS_AS(weighted_mix(Var(Mat::Ones(1, 7 * 6)), Var(Mat::Ones(4, 7)), 4), ConfigError);
  CHECK_THROWS_AS(weighted_mix(Var(Mat::Ones(2, 7 * 4)), Var(Mat::Ones(1, 7)), 1), InputError);
}

TEST_CASE("simple gating") {
  ParameterStore store;
  Rng rng(11);
  Atmoe moe(store, "atmoe", AtmoeConfig{4, 1, ExpertStructure::simple, GatingVariant::simple_concat}, rng);
  Var gw = moe.simple_gate_layer().weight;
  gw.value_mut().setZero();
  const DecoupledSet d = random_set(4, 12);
  Mat cat(1, 28);
  for (int s = 0; s < 7; ++s) cat.block(0, s * 4, 1, 4) = d.features[s];
  const Mat weights = moe.simple_weights(Var(cat)).value();
  for (Index e = 0; e < 7; ++e) CHECK(weights(0, e) == doctest::Approx(1.0 / 7.0));
  CHECK(simple_gate(d, false, moe).size() == 28);
  CHECK(simple_gate(d, true, moe).size() == 4);

  Mat one_hot = Mat::Zero(1, 7);
  one_hot(0, 2) = 1.0;
  Rng r2(13);
  const Mat experts = r2.normal_matrix(1, 28, 1.0);
  const Mat added = combine_simple(Var(experts), Var(one_hot), true).value();
  CHECK((added - experts.block(0, 8, 1, 4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(moe.gate(Var(Mat::Zero(1, 4)), Var(Mat::Zero(7, 4))), StateError);
}

TEST_CASE("configuration errors") {
  ParameterStore store;
  Rng rng(14);
  CHECK_THROWS_AS(Atmoe(store, "atmoe", AtmoeConfig{6, 4}, rng), ConfigError);
  CHECK(parse_gating_variant("simple_add") == GatingVariant::simple_add);
  CHECK(parse_expert_structure("ffn") == ExpertStructure::ffn);
  CHECK_THROWS_AS(parse_expert_structure("moe"), ConfigError);
}
