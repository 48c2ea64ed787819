// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "demo/errors.hpp"
#include "demo/pife.hpp"
#include "helpers.hpp"

using namespace demo;

TEST_CASE("pooling modes") {
  Mat same(3, 2);
  same.rowwise() = Eigen::RowVector2d(0.5, -1.5);
  CHECK(pool_patches(same, PoolingMode::average) == same.row(0));

  Mat m(2, 2);
  m << 0, 2, 4, 0;
  CHECK(pool_patches(m, PoolingMode::max) == Eigen::RowVector2d(4, 2));

  Mat g(2, 2);
  g << 1, 1, 3, 3;
  const auto gem = pool_patches(g, PoolingMode::gem, 1.0);
  CHECK(gem(0) == doctest::Approx(2.0));
  CHECK(gem(1) == doctest::Approx(2.0));

  // Large p approaches the maximum; inputs below the clamp count as 1e-6.
  Mat h(2, 1);
  h << 1.0, 2.0;
  CHECK(pool_patches(h, PoolingMode::gem, 60.0)(0) == doctest::Approx(2.0).epsilon(0.02));
  Mat neg(1, 1);
  neg << -5.0;
  CHECK(pool_patches(neg, PoolingMode::gem, 3.0)(0) == doctest::Approx(1e-6));

  CHECK_THROWS_AS(pool_patches(Mat(0, 2), PoolingMode::average), InputError);
  CHECK(parse_pooling_mode("gem") == PoolingMode::gem);
  CHECK_THROWS_AS(parse_pooling_mode("median"), ConfigError);
}

TEST_CASE("fuse collapses constant input to zero") {
  ParameterStore store;
  Rng rng(3);
  Pife p(store, "pife.R", 4, PoolingMode::average, rng);
  const auto out = fuse(Eigen::RowVectorXd::Constant(4, 2.0), Eigen::RowVectorXd::Constant(4, 2.0), p,
                        Modality::R);
  CHECK(out.value.size() == 4);
  CHECK(out.value.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fuse matches a scalar re-evaluation") {
  ParameterStore store;
  Rng rng(4);
  Pife p(store, "pife.N", 2, PoolingMode::average, rng);
  testing::randomize(store, 9);
  // Identity-like projection taking the first two normalised coordinates.
  Var w = p.projection().weight;
  w.value_mut().setZero();
  w.value_mut()(0, 0) = 1.0;
  w.value_mut()(1, 1) = 1.0;

  Eigen::RowVectorXd cls(2), pooled(2);
  cls << 0.3, -1.2;
  pooled << 2.0, 0.7;
  const auto out = fuse(cls, pooled, p, Modality::N);

  const double x[4] = {0.3, -1.2, 2.0, 0.7};
  const double mean = (x[0] + x[1] + x[2] + x[3]) / 4;
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= 4;
  const Mat& gain = p.norm().gain.value();
  const Mat& bias = p.norm().bias.value();
  const Mat& b = p.projection().bias.value();
  for (int j = 0; j < 2; ++j) {
    const double ln = (x[j] - mean) / std::sqrt(var + 1e-5) * gain(0, j) + bias(0, j);
    const double z = ln + b(0, j);
    const double expected = 0.5 * z * (1 + std::erf(z / std::sqrt(2.0)));
    CHECK(out.value(j) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("output width is C and dimension errors are config errors") {
  for (Index c : {1, 3, 8, 16}) {
    ParameterStore store;
    Rng rng(5);
    Pife p(store, "pife.T", c, PoolingMode::max, rng);
    const auto out = fuse(Eigen::RowVectorXd::Random(c), Eigen::RowVectorXd::Random(c), p, Modality::T);
    CHECK(out.value.size() == c);
    CHECK_THROWS_AS(fuse(Eigen::RowVectorXd::Random(c + 1), Eigen::RowVectorXd::Random(c), p, Modality::T),
                    ConfigError);
  }
}

TEST_CASE("GeM exponent is a trainable parameter only in gem mode") {
  ParameterStore a, b;
  Rng r1(1), r2(1);
  Pife gem(a, "pife.R", 4, PoolingMode::gem, r1);
  Pife avg(b, "pife.R", 4, PoolingMode::average, r2);
  CHECK(a.find("pife.R.gem_p"));
  CHECK_FALSE(b.find("pife.R.gem_p"));
  CHECK(gem.gem_p().item() == Pife::kDefaultGemP);
  CHECK(a.parameter_count() == b.parameter_count() + 1);
}
