// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace ovseg;
using namespace ovseg::testing;
using ad::Var;

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

TEST(ProjectAndFuse, IdentityCases) {
  Rng rng(1);
  const Tensor a = random_tensor({4, 3}, rng);
  ad::Tape t;
  Var W = t.constant(identity(3));
  EXPECT_EQ(head::project_and_fuse(t.constant(a), t.constant(Tensor({4, 3}, 0.0)), W).value(), a);
  const Tensor two = head::project_and_fuse(t.constant(a), t.constant(a), W).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(two[i], 2.0 * a[i]);
  EXPECT_EQ(head::project_and_fuse(t.constant(a), Var{}, W).value(), a);
  EXPECT_THROW(head::project_and_fuse(t.constant(a), t.constant(Tensor({2, 3}, 0.0)), W), ValidationError);
}

TEST(ProjectAndFuse, MatchesPerPixelOracle) {
  Rng rng(2);
  const Tensor r = random_tensor({4, 3}, rng), s = random_tensor({4, 3}, rng), W = random_tensor({3, 5}, rng);
  ad::Tape t;
  const Tensor f = head::project_and_fuse(t.constant(r), t.constant(s), t.constant(W)).value();
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t j = 0; j < 5; ++j) {
      double v = 0.0;
      for (std::size_t k = 0; k < 3; ++k) v += r.at(p, k) * W.at(k, j) + s.at(p, k) * W.at(k, j);
      EXPECT_NEAR(f.at(p, j), v, 1e-12);
    }
}

TEST(Similarity, DenseCases) {
  ad::Tape t;
  const Tensor zt({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor f({3, 3}, {0, 2, 0,  // parallel to class 1
                          0, 0, 0,  // zero-norm pixel
                          1, 0, 0});
  const Tensor h = head::dense_text_similarity(t.constant(f), t.constant(zt)).value();
  EXPECT_EQ(h.at(0, 1), 1.0);
  EXPECT_EQ(h.at(0, 0), 0.0);  // orthogonal
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(h.at(1, k), 0.0);
  EXPECT_EQ(h.at(2, 0), 1.0);
  EXPECT_THROW(head::dense_text_similarity(t.constant(f), t.constant(Tensor({3, 2}, 0.0))), ValidationError);
}

TEST(Similarity, DenseMatchesLoopOracle) {
  Rng rng(3);
  const Tensor f = random_tensor({6, 4}, rng);
  Tensor zt = random_tensor({3, 4}, rng);
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0.0;
    for (std::size_t k = 0; k < 4; ++k) n += zt.at(r, k) * zt.at(r, k);
    for (std::size_t k = 0; k < 4; ++k) zt.at(r, k) /= std::sqrt(n);
  }
  ad::Tape t;
  const Tensor h = head::dense_text_similarity(t.constant(f), t.constant(zt)).value();
  for (std::size_t p = 0; p < 6; ++p) {
    double n = 0.0;
    for (std::size_t k = 0; k < 4; ++k) n += f.at(p, k) * f.at(p, k);
    for (std::size_t c = 0; c < 3; ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < 4; ++k) d += f.at(p, k) * zt.at(c, k);
      EXPECT_NEAR(h.at(p, c), d / std::sqrt(n), 1e-6);
    }
  }
}

TEST(Similarity, GlobalCases) {
  ad::Tape t;
  const Tensor zt({2, 3}, {0.6, 0.8, 0, 0, 0.6, 0.8});
  const Tensor row1 = head::global_text_similarity(t.constant(Tensor({1, 3}, {0, 0.6, 0.8})), t.constant(zt)).value();
  EXPECT_NEAR(row1[1], 1.0, 1e-15);
  const Tensor orth =
      head::global_text_similarity(t.constant(Tensor({1, 3}, {0.64, -0.48, 0.36})), t.constant(zt)).value();
  EXPECT_NEAR(orth[0], 0.0, 1e-15);
  EXPECT_NEAR(orth[1], 0.0, 1e-15);
  Rng rng(4);
  const Tensor z = random_tensor({1, 3}, rng);
  const Tensor h = head::global_text_similarity(t.constant(z), t.constant(zt)).value();
  for (std::size_t c = 0; c < 2; ++c)
    EXPECT_NEAR(h[c], z[0] * zt.at(c, 0) + z[1] * zt.at(c, 1) + z[2] * zt.at(c, 2), 1e-15);
}

TEST(Layout, ClassMajorRoundTripAndBroadcast) {
  Rng rng(5);
  const Tensor m = random_tensor({6, 4}, rng);  // 2x3 pixels, 4 classes
  ad::Tape t;
  const Tensor cm = head::class_major(t.constant(m), 2, 3).value();
  EXPECT_EQ(cm.shape(), (Shape{4, 2, 3, 1}));
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(cm[c * 6 + p], m.at(p, c));
  EXPECT_EQ(head::pixel_major(head::class_major(t.constant(m), 2, 3)).value(), m);
  const Tensor g = head::broadcast_global(t.constant(Tensor({1, 2}, {0.3, -0.4})), 2, 2).value();
  for (std::size_t p = 0; p < 4; ++p) {
    EXPECT_EQ(g[p], 0.3);
    EXPECT_EQ(g[4 + p], -0.4);
  }
}

TEST(Refine, ZeroWeightsGiveHalf) {
  Rng rng(6);
  ad::Tape t;
  const Tensor r = head::refine_similarity(t.constant(random_tensor({3, 5, 4, 1}, rng)),
                                           t.constant(Tensor({49, 1}, 0.0)), t.constant(Tensor({1}, 0.0)))
                       .value();
  for (double v : r.values()) EXPECT_EQ(v, 0.5);
}

TEST(Refine, OutputsStrictlyInsideUnitInterval) {
  Rng rng(7);
  ad::Tape t;
  const Tensor r = head::refine_similarity(t.constant(random_tensor({4, 6, 6, 1}, rng, -1, 1)),
                                           t.constant(random_tensor({49, 1}, rng, -2, 2)),
                                           t.constant(random_tensor({1}, rng)))
                       .value();
  for (double v : r.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(head::refine_similarity(t.constant(Tensor({4, 6}, 0.0)), t.constant(Tensor({49, 1}, 0.0)),
                                       t.constant(Tensor({1}, 0.0))),
               ValidationError);
}

TEST(Refine, SinglePixelCentreKernelIsScalarSigmoid) {
  ad::Tape t;
  Tensor w({49, 1}, 0.0);
  w[24] = 1.7;  // centre tap of the 7x7 kernel
  for (double x : {-0.8, 0.0, 0.35, 1.0}) {
    const double r =
        head::refine_similarity(t.constant(Tensor({1, 1, 1, 1}, x)), t.constant(w), t.constant(Tensor({1}, 0.2)))
            .value()[0];
    EXPECT_NEAR(r, 1.0 / (1.0 + std::exp(-(1.7 * x + 0.2))), 1e-15);
  }
}

TEST(Fuse, ZeroWeightsAndBound) {
  Rng rng(8);
  ad::Tape t;
  const Tensor dt = random_tensor({2, 4, 4, 1}, rng, 0.01, 0.99), gt = random_tensor({2, 4, 4, 1}, rng, 0.01, 0.99);
  const Tensor f0 = head::fuse_residual(t.constant(dt), t.constant(gt), t.constant(Tensor({98, 1}, 0.0)),
                                        t.constant(Tensor({1}, 0.0)))
                        .value();
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_EQ(f0[i], 0.5 + gt[i]);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor f = head::fuse_residual(t.constant(dt), t.constant(gt), t.constant(random_tensor({98, 1}, rng, -3, 3)),
                                         t.constant(random_tensor({1}, rng, -3, 3)))
                         .value();
    for (std::size_t i = 0; i < gt.size(); ++i) {
      EXPECT_GT(f[i] - gt[i], 0.0);
      EXPECT_LT(f[i] - gt[i], 1.0);
    }
  }
  EXPECT_THROW(head::fuse_residual(t.constant(dt), t.constant(Tensor({2, 4, 2, 1}, 0.0)),
                                   t.constant(Tensor({98, 1}, 0.0)), t.constant(Tensor({1}, 0.0))),
               ValidationError);
}

TEST(Fuse, MatchesConcatConvSigmoidAddOracle) {
  Rng rng(9);
  const std::size_t N = 2, H = 3, W = 4;
  const Tensor dt = random_tensor({N, H, W, 1}, rng, 0, 1), gt = random_tensor({N, H, W, 1}, rng, 0, 1);
  const Tensor w = random_tensor({98, 1}, rng), b = random_tensor({1}, rng);
  ad::Tape t;
  const Tensor f = head::fuse_residual(t.constant(dt), t.constant(gt), t.constant(w), t.constant(b)).value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = b[0];
        for (std::size_t ky = 0; ky < 7; ++ky)
          for (std::size_t kx = 0; kx < 7; ++kx) {
            const long sy = long(y + ky) - 3, sx = long(x + kx) - 3;
            if (sy < 0 || sx < 0 || sy >= long(H) || sx >= long(W)) continue;
            const std::size_t src = (n * H + sy) * W + sx;
            acc += dt[src] * w[(ky * 7 + kx) * 2] + gt[src] * w[(ky * 7 + kx) * 2 + 1];
          }
        const std::size_t o = (n * H + y) * W + x;
        EXPECT_NEAR(f[o], 1.0 / (1.0 + std::exp(-acc)) + gt[o], 1e-12);
      }
}

class HeadModel : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = tiny_config(8);
    auto [seen, novel] = class_names(3, 2);
    cfg_.seen_classes = seen;
    cfg_.novel_classes = novel;
  }
  RunConfig cfg_;
};

TEST_F(HeadModel, LogitShapeDeterminismAndBound) {
  Model m(cfg_, 32, 32);
  m.init(1);
  const auto s = toy_sample(32, 5, 1);
  ad::Tape t;
  ParamScope P(t, m.params(), {});
  const auto zt = m.text_embeddings(P, cfg_.vocabulary());
  const auto a = m.forward(P, s.rgb, s.sar, zt);
  const auto b = m.forward(P, s.rgb, s.sar, zt);
  EXPECT_EQ(a.logits.shape(), (Shape{32 * 32, 5}));
  EXPECT_EQ(a.logits.value(), b.logits.value());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.h_fuse[i].shape(), (Shape{5, 8, 8, 1}));
    for (std::size_t k = 0; k < a.h_fuse[i].value().size(); ++k) {
      const double d = a.h_fuse[i].value()[k] - a.h_gt_refined.value()[k];
      EXPECT_GT(d, 0.0);
      EXPECT_LT(d, 1.0);
    }
  }
}

TEST_F(HeadModel, SeenOnlyVocabularyIsAChannelSlice) {
  Model m(cfg_, 16, 16);
  m.init(2);
  const auto s = toy_sample(16, 5, 2);
  ad::Tape t;
  ParamScope P(t, m.params(), {});
  const auto full = m.forward(P, s.rgb, s.sar, m.text_embeddings(P, cfg_.vocabulary()));
  const auto seen = m.forward(P, s.rgb, s.sar, m.text_embeddings(P, cfg_.vocabulary().seen_only()));
  EXPECT_EQ(full.logits.value().cols(), 5u);
  EXPECT_EQ(seen.logits.value().cols(), 3u);
  EXPECT_EQ(seen.logits.value().rows(), full.logits.value().rows());
  for (std::size_t r = 0; r < seen.logits.value().rows(); ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(seen.logits.value().at(r, c), full.logits.value().at(r, c));
      if (r < 16) EXPECT_EQ(seen.h_dt[0].value().at(r, c), full.h_dt[0].value().at(r, c));
    }
}

TEST_F(HeadModel, VocabularyPermutationPermutesSimilarityChannels) {
  Model m(cfg_, 16, 16);
  m.init(3);
  const auto s = toy_sample(16, 5, 3);
  const auto v1 = resolve_vocabulary({"c0", "c1", "c2"}, {"c3", "c4"});
  const auto v2 = resolve_vocabulary({"c2", "c0", "c1"}, {"c4", "c3"});
  const std::vector<std::size_t> perm{2, 0, 1, 4, 3};  // v2 channel k is v1 channel perm[k]
  ad::Tape t;
  ParamScope P(t, m.params(), {});
  const auto a = m.forward(P, s.rgb, s.sar, m.text_embeddings(P, v1));
  const auto b = m.forward(P, s.rgb, s.sar, m.text_embeddings(P, v2));
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(b.h_gt.value()[k], a.h_gt.value()[perm[k]]);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t p = 0; p < 16; ++p) EXPECT_EQ(b.h_dt[i].value().at(p, k), a.h_dt[i].value().at(p, perm[k]));
  }
}

TEST_F(HeadModel, CrossEntropyGradientEndToEnd) {
  Model m(cfg_, 16, 16);
  m.init(4);
  const std::vector<data::PairedSample> batch{toy_sample(16, 3, 4, 0)};
  auto loss = [&](const ParamScope& P) { return batch_segmentation_loss(m, P, batch); };
  const auto r = gradient_check(m.params(), m.params().groups(), loss, 80, 5);
  EXPECT_GE(r.checked, 80u);
  EXPECT_EQ(r.failed, 0u) << r.worst;
}

TEST_F(HeadModel, RgbOnlyFusionBypassesSar) {
  RunConfig c = cfg_;
  c.fusion = Fusion::RgbOnly;
  c.cmu_target = CmuTarget::None;
  Model m(c, 16, 16);
  m.init(5);
  const auto s = toy_sample(16, 5, 5);
  Tensor other_sar = s.sar;
  for (auto& v : other_sar.values()) v = 1.0 - v;
  ad::Tape t;
  ParamScope P(t, m.params(), {});
  const auto zt = m.text_embeddings(P, c.vocabulary());
  const auto a = m.forward(P, s.rgb, s.sar, zt);
  const auto b = m.forward(P, s.rgb, other_sar, zt);
  EXPECT_FALSE(a.sar.taps[0].valid());
  EXPECT_EQ(a.logits.value(), b.logits.value());
  const Tensor want = ad::matmul(a.rgb.taps[1], P("head.proj1.w")).value();
  EXPECT_EQ(a.f_d[1].value(), want);
}

}  // namespace
