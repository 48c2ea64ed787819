// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>

#include "demo/nn.hpp"
#include "demo/tensor.hpp"
#include "oracles.hpp"

using namespace demo;

namespace {

// Compares backprop against central differences for every entry of `inputs`.
void check_grad(std::vector<Var> inputs, const std::function<Var(const std::vector<Var>&)>& f,
                double tol = 1e-6) {
  Var loss = f(inputs);
  for (auto& v : inputs) v.zero_grad();
  loss = f(inputs);
  loss.backward();
  for (size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double*> ptrs;
    Mat& m = inputs[i].value_mut();
    for (Index j = 0; j < m.size(); ++j) ptrs.push_back(m.data() + j);
    const auto fd = oracle::finite_diff_grad(
        [&] {
          NoGradGuard g;
          return f(inputs).item();
        },
        ptrs);
    REQUIRE(fd.skipped.empty());
    const Mat& g = inputs[i].grad();
    for (Index j = 0; j < m.size(); ++j) {
      CHECK(g.data()[j] == doctest::Approx(fd.grad[static_cast<size_t>(j)]).epsilon(tol).scale(1.0));
    }
  }
}

Var param(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return Var(rng.normal_matrix(r, c, scale), true);
}

}  // namespace

TEST_CASE("elementwise and matrix ops backpropagate exactly") {
  check_grad({param(3, 4, 1), param(3, 4, 2)}, [](const std::vector<Var>& v) {
    return ops::sum(ops::mul(ops::add(v[0], v[1]), ops::sub(v[0], ops::scale(v[1], 0.5))));
  });
  check_grad({param(3, 4, 3), param(4, 2, 4), param(1, 2, 5)}, [](const std::vector<Var>& v) {
    return ops::mean(ops::gelu(ops::linear(v[0], v[1], v[2])));
  });
  check_grad({param(6, 3, 6), param(2, 3, 7)}, [](const std::vector<Var>& v) {
    return ops::sum(ops::mul(ops::add_tiled(v[0], v[1]), ops::add_tiled(v[0], v[1])));
  });
}

TEST_CASE("normalisation layers backpropagate") {
  check_grad({param(4, 5, 8), param(1, 5, 9), param(1, 5, 10)}, [](const std::vector<Var>& v) {
    return ops::sum(ops::mul(ops::layer_norm(v[0], v[1], v[2]), ops::layer_norm(v[0], v[1], v[2])));
  });
  check_grad({param(5, 3, 11), param(1, 3, 12), param(1, 3, 13)}, [](const std::vector<Var>& v) {
    Var y = ops::batch_norm_train(v[0], v[1], v[2], 1e-5, nullptr);
    return ops::sum(ops::mul(y, ops::scale(y, 0.7)));
  });
  Mat mean = Mat::Constant(1, 3, 0.2);
  Mat var = Mat::Constant(1, 3, 1.3);
  check_grad({param(5, 3, 14), param(1, 3, 15), param(1, 3, 16)}, [&](const std::vector<Var>& v) {
    Var y = ops::batch_norm_eval(v[0], v[1], v[2], mean, var, 1e-5);
    return ops::sum(ops::mul(y, y));
  });
}

TEST_CASE("softmax, pooling and attention backpropagate") {
  check_grad({param(3, 4, 17)}, [](const std::vector<Var>& v) {
    Mat w = Eigen::VectorXd::LinSpaced(12, -1, 1).reshaped<Eigen::RowMajor>(3, 4);
    return ops::sum(ops::mul_const(ops::log_softmax_rows(v[0]), w));
  });
  check_grad({param(6, 3, 18)}, [](const std::vector<Var>& v) {
    return ops::sum(ops::mul(ops::pool_mean(v[0], 3), ops::pool_max(v[0], 3)));
  });
  Var p(Mat::Constant(1, 1, 2.5), true);
  check_grad({Var(param(6, 3, 19).value().cwiseAbs(), true), p}, [](const std::vector<Var>& v) {
    return ops::sum(ops::pool_gem(v[0], 2, v[1]));
  });
  check_grad({param(4, 4, 20), param(6, 4, 21), param(6, 4, 22)}, [](const std::vector<Var>& v) {
    Var probs = ops::attention_probs(v[0], v[1], 2, 2);
    Var out = ops::attention_apply(probs, v[2], 2, 2);
    return ops::sum(ops::mul(out, out));
  });
  check_grad({param(6, 3, 23)}, [](const std::vector<Var>& v) {
    return ops::sum(ops::pairwise_distance(v[0]));
  });
}

TEST_CASE("gather, concat and reshape route gradients") {
  check_grad({param(4, 3, 24), param(4, 2, 25)}, [](const std::vector<Var>& v) {
    const Index rows[] = {3, 0, 0, 2};
    Var parts[] = {v[0], v[1]};
    Var cat = ops::concat_cols(parts);
    Var g = ops::gather_rows(cat, rows);
    Var r = ops::reshape(ops::slice_cols(g, 1, 4), 8, 2);
    return ops::sum(ops::mul(r, r));
  });
  check_grad({param(2, 3, 26)}, [](const std::vector<Var>& v) {
    const Index idx[] = {0, 5, 5, 1, 2, 3};
    return ops::sum(ops::mul(ops::gather_elements(v[0], idx, 3, 2), ops::gather_elements(v[0], idx, 3, 2)));
  });
}

TEST_CASE("graph bookkeeping") {
  SUBCASE("no-grad scope records nothing") {
    Var a = param(2, 2, 27);
    Var y;
    {
      NoGradGuard g;
      CHECK_FALSE(grad_enabled());
      y = ops::sum(ops::mul(a, a));
    }
    CHECK(grad_enabled());
    CHECK_FALSE(y.requires_grad());
  }
  SUBCASE("gradients accumulate across backward calls until cleared") {
    Var a(Mat::Constant(1, 1, 3.0), true);
    ops::mul(a, a).backward();
    ops::mul(a, a).backward();
    CHECK(a.grad()(0, 0) == doctest::Approx(12.0));
    a.zero_grad();
    CHECK_FALSE(a.has_grad());
  }
  SUBCASE("attention rows are distributions") {
    Var q = param(6, 4, 28), k = param(9, 4, 29);
    const Mat p = ops::attention_probs(q, k, 3, 2).value();
    CHECK(p.rows() == 3 * 2 * 2);
    CHECK(p.cols() == 3);
    for (Index i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("pooling examples") {
  Mat x(2, 2);
  x << 1, 1, 3, 3;
  const Mat gem = ops::pool_gem(Var(x), 1, Var(Mat::Constant(1, 1, 1.0))).value();
  CHECK(gem(0, 0) == doctest::Approx(2.0));
  CHECK(gem(0, 1) == doctest::Approx(2.0));
  Mat y(2, 2);
  y << 0, 2, 4, 0;
  const Mat mx = ops::pool_max(Var(y), 1).value();
  CHECK(mx(0, 0) == 4.0);
  CHECK(mx(0, 1) == 2.0);
}
