// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace ovseg;
using namespace ovseg::testing;
using ad::Var;

namespace {

constexpr double kTol = 1e-6;

// Scalar probe: sum(out * fixed random weights) so every output element matters.
Var probe(const Var& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  ad::Tape* t = out.tape();
  return ad::sum(ad::mul(out, t->constant(random_tensor(out.shape(), rng))));
}

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ValidationError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_THROW(t.reshaped({4}), ValidationError);
  EXPECT_EQ(t.reshaped({3, 2}).at(2, 1), 6.0);
}

TEST(Rng, DeterministicStreams) {
  Rng a(7), b(7), c(8);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_NE(Rng(7).uniform(), c.uniform());
  EXPECT_NE(derive_seed(1, {2}), derive_seed(1, {3}));
  EXPECT_EQ(derive_seed(1, {2}), derive_seed(1, {2}));
  EXPECT_EQ(hash_name("rgb_dense"), hash_name("rgb_dense"));
}

TEST(Autograd, BackwardNeedsScalar) {
  ad::Tape t;
  Var x = t.leaf(Tensor({2}, 1.0));
  EXPECT_THROW(t.backward(x), ValidationError);
}

TEST(Autograd, ElementwiseGradients) {
  Rng rng(1);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.2, 1.0);
  EXPECT_LT(max_op_grad_error({a, b}, [](auto& v) { return probe(ad::add(v[0], v[1])); }), kTol);
  EXPECT_LT(max_op_grad_error({a, b}, [](auto& v) { return probe(ad::sub(v[0], v[1])); }), kTol);
  EXPECT_LT(max_op_grad_error({a, b}, [](auto& v) { return probe(ad::mul(v[0], v[1])); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::scale(v[0], -2.5)); }), kTol);
  EXPECT_LT(max_op_grad_error({b}, [](auto& v) { return probe(ad::abs(v[0])); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::sigmoid(v[0])); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::gelu(v[0])); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return ad::mean(v[0]); }), kTol);
}

TEST(Autograd, MatrixGradients) {
  Rng rng(2);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({5, 4}, rng);
  const Tensor bias = random_tensor({5}, rng);
  EXPECT_LT(max_op_grad_error({a, b}, [](auto& v) { return probe(ad::matmul(v[0], v[1])); }), kTol);
  EXPECT_LT(max_op_grad_error({a, c}, [](auto& v) { return probe(ad::matmul_nt(v[0], v[1])); }), kTol);
  EXPECT_LT(max_op_grad_error({a, b, bias}, [](auto& v) { return probe(ad::linear(v[0], v[1], v[2])); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::transpose(v[0])); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::slice_cols(v[0], 1, 3)); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::slice_rows(v[0], 1, 3)); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::tile_rows(v[0], 3)); }), kTol);
  EXPECT_LT(max_op_grad_error({a, a}, [](auto& v) { return probe(ad::concat_cols({v[0], v[1]})); }), kTol);
  EXPECT_LT(max_op_grad_error({a}, [](auto& v) { return probe(ad::mean_rows(v[0])); }), kTol);
}

TEST(Autograd, NormalisationGradients) {
  Rng rng(3);
  const Tensor x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
  EXPECT_LT(max_op_grad_error({x, g, b}, [](auto& v) { return probe(ad::layer_norm(v[0], v[1], v[2])); }), kTol);
  EXPECT_LT(max_op_grad_error({x}, [](auto& v) { return probe(ad::softmax_rows(v[0])); }), kTol);
  EXPECT_LT(max_op_grad_error({x}, [](auto& v) { return probe(ad::l2_normalize_rows(v[0])); }), kTol);
}

TEST(Autograd, L2NormalizeZeroRow) {
  ad::Tape t;
  Var y = ad::l2_normalize_rows(t.constant(Tensor({2, 2}, {3, 4, 0, 0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.6);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.8);
  EXPECT_EQ(y.value()[2], 0.0);
  EXPECT_EQ(y.value()[3], 0.0);
}

TEST(Autograd, SpatialGradients) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 4, 5, 3}, rng), w = random_tensor({27, 2}, rng), b = random_tensor({2}, rng);
  EXPECT_LT(max_op_grad_error({x, w, b}, [](auto& v) { return probe(ad::conv2d_same(v[0], v[1], v[2], 3)); }),
            kTol);
  EXPECT_LT(max_op_grad_error({x}, [](auto& v) { return probe(ad::resize_bilinear(v[0], 7, 3)); }), kTol);
  EXPECT_LT(max_op_grad_error({x}, [](auto& v) { return probe(ad::im2col(v[0], 3, 1)); }), kTol);
}

TEST(Autograd, ConvMatchesDirectLoop) {
  Rng rng(5);
  const std::size_t H = 5, W = 4, C = 2, O = 3, k = 3;
  const Tensor x = random_tensor({1, H, W, C}, rng), w = random_tensor({k * k * C, O}, rng),
               b = random_tensor({O}, rng);
  ad::Tape t;
  const Tensor y = ad::conv2d_same(t.constant(x), t.constant(w), t.constant(b), k).value();
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = b[o];
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const long yy = long(i + dy) - 1, xx = long(j + dx) - 1;
            if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
            for (std::size_t c = 0; c < C; ++c)
              acc += x[(yy * W + xx) * C + c] * w[((dy * k + dx) * C + c) * O + o];
          }
        EXPECT_NEAR(y[(i * W + j) * O + o], acc, 1e-12);
      }
}

TEST(Autograd, ResizeIdentityAndConstant) {
  Rng rng(6);
  const Tensor x = random_tensor({1, 3, 4, 2}, rng);
  ad::Tape t;
  EXPECT_EQ(ad::resize_bilinear(t.constant(x), 3, 4).value(), x);
  const Tensor up = ad::resize_bilinear(t.constant(Tensor({1, 2, 2, 1}, 0.25)), 8, 8).value();
  for (double v : up.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  ad::Tape t;
  const std::vector<int> y{0, 1, 2, 3, 4, 2};
  EXPECT_NEAR(ad::cross_entropy(t.constant(Tensor({6, 5}, 1.3)), y, 255).value()[0], std::log(5.0), 1e-12);
}

TEST(CrossEntropy, ConfidentLogitsGiveZero) {
  ad::Tape t;
  Tensor l({2, 3}, 0.0);
  l.at(0, 1) = 60.0;
  l.at(1, 2) = 60.0;
  const std::vector<int> y{1, 2};
  EXPECT_LT(ad::cross_entropy(t.constant(l), y, 255).value()[0], 1e-20);
}

TEST(CrossEntropy, AllIgnoredIsError) {
  ad::Tape t;
  const std::vector<int> y{255, 255};
  EXPECT_THROW(ad::cross_entropy(t.constant(Tensor({2, 3}, 0.0)), y, 255), ValidationError);
}

TEST(CrossEntropy, MatchesSoftmaxOracleAndGradient) {
  Rng rng(8);
  const Tensor l = random_tensor({4, 3}, rng, -2, 2);
  const std::vector<int> y{2, 255, 0, 1};
  ad::Tape t;
  const double got = ad::cross_entropy(t.constant(l), y, 255).value()[0];
  double want = 0.0;
  int n = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    if (y[r] == 255) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(l.at(r, c));
    want += -std::log(std::exp(l.at(r, y[r])) / z);
    ++n;
  }
  EXPECT_NEAR(got, want / n, 1e-12);
  EXPECT_LT(max_op_grad_error({l}, [&](auto& v) { return ad::cross_entropy(v[0], y, 255); }), 1e-4);
}

TEST(Autograd, ParameterNodesAreCachedAndFrozenGroupsGetNoGradient) {
  ParamStore ps;
  ps.add("a.w", Tensor({2}, 1.0));
  ps.add("b.w", Tensor({2}, 2.0));
  ad::Tape t;
  ParamScope P(t, ps, {"a"});
  EXPECT_EQ(P("a.w").id(), P("a.w").id());
  t.backward(ad::sum(ad::mul(P("a.w"), P("b.w"))));
  ASSERT_NE(t.param_grad(ps.get("a.w")), nullptr);
  EXPECT_EQ((*t.param_grad(ps.get("a.w")))[0], 2.0);
  EXPECT_EQ(t.param_grad(ps.get("b.w")), nullptr);
}

}  // namespace
