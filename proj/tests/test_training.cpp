// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "test_util.hpp"

using namespace ovseg;
using namespace ovseg::testing;
using ad::Var;

namespace {

/// One optimizer step on a single scalar weight with a prescribed gradient.
double one_step(double w0, double g, double lr, double wd) {
  OptimSpec spec;
  spec.weight_decay = wd;
  AdamW opt(spec);
  opt.set_group_lr("g", lr);
  ParamStore ps;
  ps.add("g.w", Tensor({1}, {w0}));
  ad::Tape t;
  ParamScope P(t, ps, {"g"});
  t.backward(ad::mul(P("g.w"), t.constant(Tensor({1}, {g}))));
  opt.step(ps, t);
  return ps.get("g.w")[0];
}

TEST(AdamW, ZeroLearningRateLeavesWeights) { EXPECT_EQ(one_step(1.0, 1.0, 0.0, 1e-4), 1.0); }

TEST(AdamW, FirstStepMovesByLearningRate) {
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(one_step(1.0, 1.0, 0.1, 0.0), 0.9, 1e-8);
  EXPECT_NEAR(one_step(1.0, -3.0, 0.1, 0.0), 1.1, 1e-8);
}

TEST(AdamW, DecoupledDecayShrinksByLrTimesDecay) {
  const double lr = 0.1, wd = 0.5;
  const double plain = one_step(2.0, 1.0, lr, 0.0);
  const double decayed = one_step(2.0, 1.0, lr, wd);
  EXPECT_NEAR(plain - decayed, lr * wd * 2.0, 1e-12);
}

TEST(AdamW, NonFiniteGradientThrowsNamingGroup) {
  AdamW opt;
  opt.set_group_lr("head", 0.1);
  ParamStore ps;
  ps.add("head.w", Tensor({2}, {1.0, 2.0}));
  ad::Tape t;
  ParamScope P(t, ps, {"head"});
  const double inf = std::numeric_limits<double>::infinity();
  t.backward(ad::sum(ad::mul(P("head.w"), t.constant(Tensor({2}, {1.0, inf})))));
  try {
    opt.step(ps, t);
    FAIL() << "expected an error";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("head"), std::string::npos);
  }
  EXPECT_EQ(ps.get("head.w")[0], 1.0);
  EXPECT_EQ(opt.step_count(), 0u);
}

TEST(AdamW, ConvergesOnConvexQuadratic) {
  OptimSpec spec;
  spec.weight_decay = 0.0;
  AdamW opt(spec);
  opt.set_group_lr("q", 0.05);
  ParamStore ps;
  ps.add("q.w", Tensor({3}, {2.0, -1.5, 0.5}));
  const Tensor target({3}, {0.3, 0.7, -0.2});
  for (int i = 0; i < 800; ++i) {
    ad::Tape t;
    ParamScope P(t, ps, {"q"});
    Var d = ad::sub(P("q.w"), t.constant(target));
    t.backward(ad::sum(ad::mul(d, d)));
    opt.step(ps, t);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(ps.get("q.w")[i], target[i], 1e-2);
}

TEST(AdamW, FrozenGroupUntouched) {
  AdamW opt;
  opt.set_group_lr("a", 0.1);
  ParamStore ps;
  ps.add("a.w", Tensor({1}, {1.0}));
  ps.add("b.w", Tensor({1}, {1.0}));
  ad::Tape t;
  ParamScope P(t, ps, {"a", "b"});
  t.backward(ad::add(P("a.w"), P("b.w")));
  opt.step(ps, t);
  EXPECT_NE(ps.get("a.w")[0], 1.0);
  EXPECT_EQ(ps.get("b.w")[0], 1.0);
}

TEST(Labels, SeenMapAndRemap) {
  const auto v = resolve_vocabulary({"a", "b"}, {"c"});
  const auto map = seen_label_map(v);
  EXPECT_EQ(map, (std::vector<int>{0, 1, v.ignore_index()}));
  const auto v2 = resolve_vocabulary({"x", "y", "z"}, {});
  EXPECT_EQ(seen_label_map(v2), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(remap_labels({0, 2, 255, 1}, map, 255), (std::vector<int>{0, 255, 255, 1}));
}

class Training : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = tiny_config(8);
    auto [seen, novel] = class_names(3, 1);
    cfg_.seen_classes = seen;
    cfg_.novel_classes = novel;
    cfg_.stage1_iters = 3;
    cfg_.stage2_iters = 3;
    manifest_ = make_toy_manifest(dir_.path() / "data", 4, 6, 16, 0.0, 2);
  }
  TempDir dir_{"train"};
  RunConfig cfg_;
  DatasetManifest manifest_;
};

TEST_F(Training, StageLearningRatesFollowConfig) {
  cfg_.cmu_target = CmuTarget::Both;
  cfg_.optimizer.stage1_lr = 1e-3;
  cfg_.optimizer.stage2_lr = 2e-3;
  cfg_.optimizer.encoder_lr = 3e-6;
  EXPECT_EQ(stage1_group_lrs(cfg_), (std::map<std::string, double>{{"global_sar", 1e-3}, {"sar_dense", 1e-3}}));
  Model m(cfg_, 16, 16);
  const auto lrs = stage2_group_lrs(m);
  EXPECT_EQ(lrs.at("head"), 2e-3);
  EXPECT_EQ(lrs.at("global_rgb"), 3e-6);
  EXPECT_EQ(lrs.at("global_sar"), 3e-6);
  EXPECT_EQ(lrs.at("text"), 3e-6);
  EXPECT_EQ(lrs.count("rgb_dense"), 0u);
  EXPECT_EQ(lrs.count("sar_dense"), 0u);
}

TEST_F(Training, ZeroIterationsEqualsInitialisation) {
  cfg_.stage1_iters = 0;
  cfg_.stage2_iters = 0;
  Model fresh(cfg_, 16, 16);
  fresh.init(cfg_.seed);
  const auto s1 = run_stage1_cmu(cfg_, manifest_);
  EXPECT_EQ(s1.model.params().hash(), fresh.params().hash());
  EXPECT_TRUE(s1.stage1_losses.empty());
  const auto ck = to_checkpoint(s1);
  const auto s2 = run_stage2_full(cfg_, manifest_, {}, &ck);
  EXPECT_EQ(s2.model.params().hash(), fresh.params().hash());
}

TEST_F(Training, StageTwoFreezesDenseEncoders) {
  const auto s1 = run_stage1_cmu(cfg_, manifest_);
  const auto ck = to_checkpoint(s1);
  const auto s2 = run_stage2_full(cfg_, manifest_, {}, &ck);
  for (const char* g : {"rgb_dense", "sar_dense"}) EXPECT_EQ(s2.model.params().hash(g), s1.model.params().hash(g)) << g;
  EXPECT_NE(s2.model.params().hash("head"), s1.model.params().hash("head"));
  EXPECT_EQ(s2.stage1_losses, s1.stage1_losses);
  EXPECT_EQ(s2.stage2_losses.size(), 3u);
  for (double l : s2.stage2_losses) EXPECT_TRUE(std::isfinite(l));
}

TEST_F(Training, MissingStageOneCheckpointRejected) {
  EXPECT_THROW(run_stage2_full(cfg_, manifest_), ValidationError);
  RunConfig none = cfg_;
  none.cmu_target = CmuTarget::None;
  EXPECT_THROW(run_stage1_cmu(none, manifest_), ValidationError);
  EXPECT_NO_THROW(run_stage2_full(none, manifest_));
}

TEST_F(Training, ResumeMatchesUninterruptedRun) {
  cfg_.stage1_iters = 4;
  const auto full = run_stage1_cmu(cfg_, manifest_);
  RunOptions opt;
  opt.out_dir = dir_.path() / "run";
  opt.stop_after = 2;
  run_stage1_cmu(cfg_, manifest_, opt);
  const auto part = load_checkpoint(opt.out_dir / "stage1.ckpt");
  EXPECT_EQ(part.iteration, 2u);
  const auto resumed = run_stage1_cmu(cfg_, manifest_, {}, &part);
  EXPECT_EQ(resumed.stage1_losses, full.stage1_losses);
  EXPECT_EQ(resumed.model.params().hash(), full.model.params().hash());
  EXPECT_EQ(resumed.optimizer.step_count(), full.optimizer.step_count());
}

TEST_F(Training, WritesLogsAndRunJson) {
  RunOptions opt;
  opt.out_dir = dir_.path() / "logs";
  run_stage1_cmu(cfg_, manifest_, opt);
  EXPECT_TRUE(fs::exists(opt.out_dir / "stage1.ckpt"));
  EXPECT_TRUE(fs::exists(opt.out_dir / "stage1_loss.csv"));
  const auto j = nlohmann::json::parse(std::ifstream(opt.out_dir / "run.json"));
  EXPECT_EQ(j.at("stage"), "cmu");
  EXPECT_EQ(j.at("iteration"), 3);
}

TEST_F(Training, CheckpointRoundTripAndRejections) {
  const auto s1 = run_stage1_cmu(cfg_, manifest_);
  const auto ck = to_checkpoint(s1);
  const fs::path path = dir_.path() / "c.ckpt";
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.stage, "cmu");
  EXPECT_EQ(back.iteration, 3u);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
  EXPECT_EQ(model_from_checkpoint(back).params().hash(), s1.model.params().hash());

  RunConfig other = cfg_;
  other.unified_dim = 16;
  other.decoder_width = 16;
  EXPECT_THROW(check_config_hash(back, config_hash(other), false), ValidationError);
  EXPECT_NO_THROW(check_config_hash(back, config_hash(other), true));

  const std::string buf = serialize_checkpoint(ck);
  EXPECT_THROW(deserialize_checkpoint(buf.substr(0, buf.size() / 2)), RuntimeError);
  std::string flipped = buf;
  flipped[buf.size() / 2] ^= 0x1;
  try {
    deserialize_checkpoint(flipped);
    FAIL() << "expected an error";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
  std::string version = buf;
  version[8] = 7;
  try {
    deserialize_checkpoint(version);
    FAIL() << "expected an error";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
  EXPECT_THROW(deserialize_checkpoint(std::string(64, 'x')), RuntimeError);
  EXPECT_THROW(load_checkpoint(dir_.path() / "missing.ckpt"), ValidationError);
}

TEST_F(Training, WrongStageCheckpointRejected) {
  const auto ck = to_checkpoint(run_stage1_cmu(cfg_, manifest_));
  EXPECT_THROW(run_stage2_full(cfg_, manifest_, {}, nullptr, &ck), ValidationError);
}

}  // namespace
