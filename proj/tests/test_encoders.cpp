// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

using namespace ovseg;
using namespace ovseg::testing;
using ad::Var;

namespace {

double row_norm(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t k = 0; k < t.cols(); ++k) s += t.at(r, k) * t.at(r, k);
  return std::sqrt(s);
}

nn::VitConfig dense_cfg(std::size_t size, std::size_t patch, std::size_t dim, std::size_t depth) {
  EncoderSpec s;
  s.patch_size = patch;
  s.embed_dim = dim;
  s.depth = depth;
  return nn::VitConfig::from_spec(s, size, size, 3, false);
}

TEST(DenseEncoder, TapShapes) {
  const auto c = dense_cfg(32, 8, 16, 3);
  ParamStore ps;
  Rng rng(1);
  nn::init_vit(ps, "enc", c, rng);
  Rng irng(2);
  const Tensor img = random_tensor({32, 32, 3}, irng, 0, 1);
  ad::Tape t;
  ParamScope P(t, ps, {});
  const auto out = nn::vit_forward(P, "enc", c, t.constant(img));
  for (const auto& tap : out.taps) EXPECT_EQ(tap.shape(), (Shape{16, 16}));  // 4x4 grid, d = 16
  EXPECT_FALSE(out.cls.valid());
}

TEST(DenseEncoder, DeterministicForward) {
  const auto c = dense_cfg(16, 4, 8, 3);
  ParamStore ps;
  Rng rng(3);
  nn::init_vit(ps, "enc", c, rng);
  Rng irng(4);
  const Tensor img = random_tensor({16, 16, 3}, irng, 0, 1);
  ad::Tape t1, t2;
  const auto a = nn::vit_forward(ParamScope(t1, ps, {}), "enc", c, t1.constant(img));
  const auto b = nn::vit_forward(ParamScope(t2, ps, {}), "enc", c, t2.constant(img));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.taps[i].value(), b.taps[i].value());
}

TEST(DenseEncoder, TapBlocksFollowCeilRule) {
  EXPECT_EQ(dense_cfg(32, 8, 16, 6).tap_blocks(), (std::array<std::size_t, 3>{2, 4, 6}));
  EXPECT_EQ(dense_cfg(32, 8, 16, 12).tap_blocks(), (std::array<std::size_t, 3>{4, 8, 12}));
  EXPECT_EQ(dense_cfg(32, 8, 16, 3).tap_blocks(), (std::array<std::size_t, 3>{1, 2, 3}));
  EXPECT_EQ(dense_cfg(32, 8, 16, 4).tap_blocks(), (std::array<std::size_t, 3>{2, 3, 4}));
}

TEST(DenseEncoder, ShapeErrors) {
  EXPECT_THROW(dense_cfg(30, 8, 16, 3).validate(), ValidationError);
  const auto c = dense_cfg(16, 4, 8, 3);
  ParamStore ps;
  Rng rng(3);
  nn::init_vit(ps, "enc", c, rng);
  ad::Tape t;
  EXPECT_THROW(nn::vit_forward(ParamScope(t, ps, {}), "enc", c, t.constant(Tensor({16, 16, 1}, 0.5))),
               ValidationError);
}

TEST(DenseEncoder, GradientsMatchFiniteDifferences) {
  const auto c = dense_cfg(16, 4, 8, 3);
  ParamStore ps;
  Rng rng(5);
  nn::init_vit(ps, "enc", c, rng);
  Rng irng(6);
  const Tensor img = random_tensor({16, 16, 3}, irng, 0, 1);
  std::array<Tensor, 3> probes;
  for (auto& p : probes) p = random_tensor({16, 8}, irng);
  auto loss = [&](const ParamScope& P) {
    const auto out = nn::vit_forward(P, "enc", c, P.tape().constant(img));
    Var acc = ad::sum(ad::mul(out.taps[0], P.tape().constant(probes[0])));
    for (std::size_t i = 1; i < 3; ++i) acc = ad::add(acc, ad::sum(ad::mul(out.taps[i], P.tape().constant(probes[i]))));
    return acc;
  };
  const auto r = gradient_check(ps, {"enc"}, loss, 150, 7);
  EXPECT_GE(r.checked, 150u);
  EXPECT_EQ(r.failed, 0u) << r.worst;
}

TEST(GlobalEncoder, UnitNormAndSensitivity) {
  EncoderSpec s{8, 8, 2, 2, 2, {1.0 / 3.0, 2.0 / 3.0, 1.0}};
  const auto c = nn::VitConfig::from_spec(s, 16, 16, 3, true);
  ParamStore ps;
  Rng rng(8);
  nn::init_global_encoder(ps, "g", c, 8, rng);
  Rng irng(9);
  Tensor img = random_tensor({16, 16, 3}, irng, 0, 1);
  ad::Tape t;
  ParamScope P(t, ps, {});
  const Tensor z = nn::global_forward(P, "g", c, t.constant(img)).embedding.value();
  EXPECT_EQ(z.shape(), (Shape{1, 8}));
  EXPECT_NEAR(row_norm(z, 0), 1.0, 1e-6);
  EXPECT_EQ(nn::global_forward(P, "g", c, t.constant(img)).embedding.value(), z);
  img[5 * 16 * 3 + 7 * 3 + 1] += 0.3;
  EXPECT_NE(nn::global_forward(P, "g", c, t.constant(img)).embedding.value(), z);
}

TEST(TextEncoder, RowsUnitNormOrderedAndDistinct) {
  TextSpec s{8, 1, 2, 2, 32};
  ParamStore ps;
  Rng rng(10);
  nn::init_text_encoder(ps, "text", s, 8, rng);
  const auto vocab = resolve_vocabulary({"Forest", "City", "Farmland"}, {"Road", "Water"});
  ad::Tape t;
  ParamScope P(t, ps, {});
  const Tensor z = nn::encode_text(P, "text", s, vocab).value();
  ASSERT_EQ(z.shape(), (Shape{5, 8}));
  for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(row_norm(z, r), 1.0, 1e-6);
  // Row i is the embedding of prompt i; identical prompts give identical rows.
  const Tensor water = nn::encode_prompt(P, "text", s, "a photo of Water").value();
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(z.at(4, k), water[k]);
  std::size_t distinct = 0;
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) {
      bool same = true;
      for (std::size_t k = 0; k < 8; ++k) same = same && z.at(a, k) == z.at(b, k);
      distinct += !same;
    }
  EXPECT_EQ(distinct, 10u);
  EXPECT_THROW(nn::encode_prompt(P, "text", s, ""), ValidationError);
  EXPECT_THROW(nn::encode_prompt(P, "text", s, std::string(40, 'x')), ValidationError);
}

TEST(TextEncoder, GradientsMatchFiniteDifferences) {
  TextSpec s{8, 1, 2, 2, 32};
  ParamStore ps;
  Rng rng(11);
  nn::init_text_encoder(ps, "text", s, 8, rng);
  const auto vocab = resolve_vocabulary({"ab", "cd"}, {"ef"});
  Rng prng(12);
  const Tensor probe = random_tensor({3, 8}, prng);
  auto loss = [&](const ParamScope& P) {
    return ad::sum(ad::mul(nn::encode_text(P, "text", s, vocab), P.tape().constant(probe)));
  };
  const auto r = gradient_check(ps, {"text"}, loss, 100, 13);
  EXPECT_GE(r.checked, 100u);
  EXPECT_EQ(r.failed, 0u) << r.worst;
}

class ExternalEmbeddings : public ::testing::Test {
 protected:
  void write(const std::string& body) { std::ofstream(dir_ / "emb.csv") << body; }
  std::string path() const { return (dir_ / "emb.csv").string(); }
  TempDir dir_{"emb"};
  ClassVocabulary vocab_ = resolve_vocabulary({"Forest", "City", "Farmland"}, {"Road", "Water"});
};

TEST_F(ExternalEmbeddings, ReorderedToVocabularyAndRenormalised) {
  write("dim=2\nWater,0,2\nRoad,3,4\nCity,1,0\nForest,0,1\nFarmland,1,1\n");
  const Tensor z = nn::load_external_embeddings(path(), vocab_, 2);
  ASSERT_EQ(z.shape(), (Shape{5, 2}));
  EXPECT_EQ(z.at(0, 1), 1.0);  // Forest
  EXPECT_EQ(z.at(1, 0), 1.0);  // City
  EXPECT_NEAR(z.at(3, 0), 0.6, 1e-15);  // Road
  EXPECT_EQ(z.at(4, 1), 1.0);  // Water had norm 2
  for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(row_norm(z, r), 1.0, 1e-12);
}

TEST_F(ExternalEmbeddings, MissingClassNamed) {
  write("dim=2\nRoad,3,4\nCity,1,0\nForest,0,1\nFarmland,1,1\n");
  try {
    nn::load_external_embeddings(path(), vocab_, 2);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("Water"), std::string::npos);
  }
}

TEST_F(ExternalEmbeddings, DimensionMismatch) {
  write("dim=2\nWater,0,2\nRoad,3,4\nCity,1,0\nForest,0,1\nFarmland,1,1\n");
  EXPECT_THROW(nn::load_external_embeddings(path(), vocab_, 3), ValidationError);
  write("dim=2\nWater,0,2,5\n");
  EXPECT_THROW(nn::load_external_embeddings(path(), vocab_, 2), ValidationError);
  write("Water,0,2\n");
  EXPECT_THROW(nn::load_external_embeddings(path(), vocab_, 2), ValidationError);
}

}  // namespace
