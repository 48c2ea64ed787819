// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "demo/errors.hpp"
#include "demo/hdm.hpp"
#include "helpers.hpp"

using namespace demo;

namespace {

struct Inputs {
  std::array<FusedFeature, 3> fused;
  std::array<TokenSet, 3> tokens;
};

Inputs random_inputs(Index np, Index c, std::uint64_t seed) {
  Rng rng(seed);
  Inputs in;
  for (Modality m : kModalities) {
    const size_t i = static_cast<size_t>(m);
    in.fused[i] = FusedFeature{rng.normal_matrix(1, c, 1.0).row(0), m};
    in.tokens[i].patch_tokens = rng.normal_matrix(np, c, 1.0);
    in.tokens[i].class_token = rng.normal_matrix(1, c, 1.0).row(0);
    in.tokens[i].modality = m;
  }
  return in;
}

oracle::Vector as_vec(const Eigen::RowVectorXd& r) { return r.transpose(); }

}  // namespace

TEST_CASE("slot bookkeeping") {
  CHECK(kNumDecoupled == 7);
  CHECK(slot_name(DecoupledSlot::TR) == "D_TR");
  CHECK(slot_modalities(DecoupledSlot::RN) == std::vector<Modality>{Modality::R, Modality::N});
  CHECK(slot_modalities(DecoupledSlot::TR) == std::vector<Modality>{Modality::T, Modality::R});
  CHECK(slot_level(DecoupledSlot::N) == 0);
  CHECK(slot_level(DecoupledSlot::NT) == 1);
  CHECK(slot_level(DecoupledSlot::RNT) == 2);
}

TEST_CASE("key matrices") {
  const Inputs in = random_inputs(4, 3, 1);
  const Mat uni = build_keys_unimodal(in.fused[1], in.tokens[1]);
  CHECK(uni.rows() == 5);
  CHECK(uni.row(0) == in.fused[1].value);
  CHECK(uni.bottomRows(4) == in.tokens[1].patch_tokens);
  CHECK_THROWS_AS(build_keys_unimodal(in.fused[0], in.tokens[1]), InputError);

  const Mat rn = build_keys_bimodal(DecoupledSlot::RN, in.fused, in.tokens);
  CHECK(rn.rows() == 10);
  CHECK(rn.row(0) == in.fused[0].value);
  CHECK(rn.row(5) == in.fused[1].value);
  CHECK(rn.middleRows(6, 4) == in.tokens[1].patch_tokens);
  const Mat tr = build_keys_bimodal(DecoupledSlot::TR, in.fused, in.tokens);
  CHECK(tr.row(0) == in.fused[2].value);
  CHECK_THROWS_AS(build_keys_bimodal(DecoupledSlot::R, in.fused, in.tokens), InputError);

  const Mat all = build_keys_trimodal(in.fused, in.tokens);
  CHECK(all.rows() == 15);
  CHECK(all.row(0) == in.fused[0].value);
  CHECK(all.row(5) == in.fused[1].value);
  CHECK(all.row(10) == in.fused[2].value);
  CHECK(build_keys_trimodal(random_inputs(2, 3, 2).fused, random_inputs(2, 3, 2).tokens).rows() == 9);
}

TEST_CASE("cross attention special cases and oracle agreement") {
  ParameterStore store;
  Rng rng(2);
  CrossAttention att(store, "att", 4, 2, rng);
  testing::randomize(store, 3);
  const auto q = testing::affine(store, "att.q"), k = testing::affine(store, "att.k"),
             v = testing::affine(store, "att.v"), o = testing::affine(store, "att.o");

  Rng data(4);
  const Eigen::RowVectorXd query = data.normal_matrix(1, 4, 1.0).row(0);
  const Mat key = data.normal_matrix(1, 4, 1.0);
  const auto single = cross_attend(query, key, att);
  const oracle::Vector direct = oracle::apply(o, oracle::apply(v, as_vec(key.row(0))));
  for (Index i = 0; i < 4; ++i) CHECK(single(i) == doctest::Approx(direct(i)).epsilon(1e-12));

  Mat repeated(5, 4);
  repeated.rowwise() = key.row(0);
  const auto rep = cross_attend(query, repeated, att);
  CHECK((rep - single).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(cross_attend(query, Mat(0, 4), att), InputError);

  for (int t = 0; t < 100; ++t) {
    const Eigen::RowVectorXd qq = data.normal_matrix(1, 4, 1.0).row(0);
    const Mat keys = data.normal_matrix(1 + t % 7, 4, 1.0);
    const auto impl = cross_attend(qq, keys, att);
    const auto ref = oracle::oracle_attention(as_vec(qq), keys, q, k, v, o, 2);
    CHECK((as_vec(impl) - ref).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("decoupling composes cross attention per slot") {
  const Index c = 8, np = 4;
  ParameterStore store;
  Rng rng(5);
  Hdm hdm(store, "hdm", HdmConfig{c, 2, HdmInteraction::cross_attention}, rng);
  testing::randomize(store, 6);
  const Inputs in = random_inputs(np, c, 7);
  const DecoupledSet d = hdm.decouple(in.fused, in.tokens);
  for (DecoupledSlot s : kDecoupledSlots) {
    const int level = slot_level(s);
    Mat keys;
    if (level == 0) keys = build_keys_unimodal(in.fused[static_cast<size_t>(s)], in.tokens[static_cast<size_t>(s)]);
    if (level == 1) keys = build_keys_bimodal(s, in.fused, in.tokens);
    if (level == 2) keys = build_keys_trimodal(in.fused, in.tokens);
    const auto expected = cross_attend(hdm.queries().value().row(static_cast<Index>(s)), keys, hdm.level(level));
    CHECK((d[s] - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("identical tokens make bimodal attention collapse to one key") {
  const Index c = 4, np = 3;
  ParameterStore store;
  Rng rng(8);
  Hdm hdm(store, "hdm", HdmConfig{c, 2, HdmInteraction::cross_attention}, rng);
  testing::randomize(store, 9);
  Inputs in = random_inputs(np, c, 10);
  const Eigen::RowVectorXd row = in.fused[0].value;
  for (auto& f : in.fused) f.value = row;
  for (auto& t : in.tokens) t.patch_tokens.rowwise() = row;
  const DecoupledSet d = hdm.decouple(in.fused, in.tokens);
  const auto one = cross_attend(hdm.queries().value().row(3), Mat(row), hdm.level(1));
  CHECK((d[DecoupledSlot::RN] - one).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("batched forward equals per-sample decoupling for every interaction") {
  const Index c = 8, np = 4, batch = 3;
  for (auto mode : {HdmInteraction::cross_attention, HdmInteraction::cross_attention_no_fused,
                    HdmInteraction::no_interaction, HdmInteraction::transformer_block}) {
    CAPTURE(to_string(mode));
    ParameterStore store;
    Rng rng(11);
    Hdm hdm(store, "hdm", HdmConfig{c, 2, mode}, rng);
    testing::randomize(store, 12);
    std::array<Var, 3> fused;
    std::array<EncoderOutput, 3> tokens;
    std::vector<Inputs> per(batch);
    for (Index b = 0; b < batch; ++b) per[b] = random_inputs(np, c, 20 + b);
    for (int m = 0; m < 3; ++m) {
      Mat f(batch, c), t(batch * (np + 1), c);
      for (Index b = 0; b < batch; ++b) {
        f.row(b) = per[b].fused[m].value;
        t.row(b * (np + 1)) = per[b].tokens[m].class_token;
        t.middleRows(b * (np + 1) + 1, np) = per[b].tokens[m].patch_tokens;
      }
      fused[m] = Var(f);
      tokens[m] = EncoderOutput{Var(t), batch, np};
    }
    const HdmOutput out = hdm.forward(fused, tokens);
    REQUIRE(out.decoupled.rows() == batch * 7);
    REQUIRE(out.decoupled.cols() == c);
    for (Index b = 0; b < batch; ++b) {
      const DecoupledSet d = hdm.decouple(per[b].fused, per[b].tokens);
      for (int s = 0; s < 7; ++s) {
        CHECK((out.decoupled.value().row(b * 7 + s) - d.features[s]).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
    if (mode == HdmInteraction::no_interaction) {
      CHECK_THROWS_AS(hdm.forward(fused, tokens, true), StateError);
    }
  }
}

TEST_CASE("attention heatmaps") {
  const Index c = 4, np = 4, batch = 2;
  ParameterStore store;
  Rng rng(13);
  Hdm hdm(store, "hdm", HdmConfig{c, 2, HdmInteraction::cross_attention}, rng);
  testing::randomize(store, 14);
  std::array<Var, 3> fused;
  std::array<EncoderOutput, 3> tokens;
  Rng data(15);
  for (int m = 0; m < 3; ++m) {
    fused[m] = Var(data.normal_matrix(batch, c, 1.0));
    tokens[m] = EncoderOutput{Var(data.normal_matrix(batch * (np + 1), c, 1.0)), batch, np};
  }
  CHECK_THROWS_AS(dump_decoupling_attention(hdm.forward(fused, tokens), 0, 2, 2), StateError);

  const HdmOutput out = hdm.forward(fused, tokens, true);
  const auto maps = dump_decoupling_attention(out, 1, 2, 2);
  CHECK(maps.size() == 12);
  for (const auto& m : maps) {
    CHECK(m.grid.rows() == 2);
    CHECK(m.grid.minCoeff() >= 0.0);
    CHECK(m.grid.sum() <= 1.0 + 1e-12);
  }

  SUBCASE("uniform attention gives flat maps") {
    Var queries = hdm.queries();
    queries.value_mut().setZero();
    Var qb = store.find("hdm.unimodal.attn.q.bias")->var;
    Var bb = store.find("hdm.bimodal.attn.q.bias")->var;
    Var tb = store.find("hdm.trimodal.attn.q.bias")->var;
    for (Var* v : {&qb, &bb, &tb}) v->value_mut().setZero();
    const auto flat = dump_decoupling_attention(hdm.forward(fused, tokens, true), 0, 2, 2);
    for (const auto& m : flat) {
      const double keys = static_cast<double>(slot_modalities(m.slot).size() * (np + 1));
      for (Index i = 0; i < 4; ++i) CHECK(m.grid.data()[i] == doctest::Approx(1.0 / keys));
    }
  }
}
