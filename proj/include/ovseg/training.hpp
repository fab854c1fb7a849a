// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Two-stage training: alignment of the SAR encoder(s), then the full model
// with both dense encoders frozen.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ovseg/checkpoint.hpp"
#include "ovseg/cmu.hpp"
#include "ovseg/data/batches.hpp"
#include "ovseg/model.hpp"
#include "ovseg/optim.hpp"

namespace ovseg {

namespace fs = std::filesystem;

inline const std::string kStageCmu = "cmu";
inline const std::string kStageFull = "full";

struct TrainState {
  Model model;
  AdamW optimizer;
  std::string stage;
  std::uint64_t iteration = 0;  ///< steps completed in the current stage
  std::vector<double> stage1_losses;
  std::vector<double> stage2_losses;

  TrainState(const RunConfig& cfg, std::size_t h, std::size_t w)
      : model(cfg, h, w), optimizer(cfg.optimizer) {}
};

/// Learning rate per trainable group in the alignment stage.
inline std::map<std::string, double> stage1_group_lrs(const RunConfig& cfg) {
  std::map<std::string, double> out;
  for (const auto& g : cmu::trainable_groups(cfg.cmu_target)) out[g] = cfg.optimizer.stage1_lr;
  return out;
}

/// Stage 2: head at the base rate; global visual and text encoders at the
/// small encoder rate; dense encoders frozen.
inline std::map<std::string, double> stage2_group_lrs(const Model& m) {
  const RunConfig& cfg = m.config();
  std::map<std::string, double> out{{group::kHead, cfg.optimizer.stage2_lr},
                                    {group::kGlobalRgb, cfg.optimizer.encoder_lr}};
  if (m.uses_global_sar()) out[group::kGlobalSar] = cfg.optimizer.encoder_lr;
  if (cfg.text_embeddings.empty()) out[group::kText] = cfg.optimizer.encoder_lr;
  return out;
}

inline std::set<std::string> keys_of(const std::map<std::string, double>& m) {
  std::set<std::string> out;
  for (const auto& [k, _] : m) out.insert(k);
  return out;
}

/// Maps full-vocabulary label indices to training indices: seen classes
/// to their position among seen classes, novel classes to ignore.
inline std::vector<int> seen_label_map(const ClassVocabulary& vocab) {
  std::vector<int> map(vocab.size(), vocab.ignore_index());
  int next = 0;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (vocab.seen(i)) map[i] = next++;
  return map;
}

inline std::vector<int> remap_labels(const std::vector<int>& label, const std::vector<int>& map, int ignore) {
  std::vector<int> out(label.size());
  for (std::size_t i = 0; i < label.size(); ++i)
    out[i] = label[i] == ignore ? ignore : map[static_cast<std::size_t>(label[i])];
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

inline Checkpoint to_checkpoint(const TrainState& s) {
  Checkpoint ck;
  const RunConfig& cfg = s.model.config();
  ck.stage = s.stage;
  ck.config_hash = config_hash(cfg);
  ck.iteration = s.iteration;
  ck.seed = cfg.seed;
  ck.meta["config"] = config_to_json(cfg);
  ck.meta["height"] = s.model.height();
  ck.meta["width"] = s.model.width();
  ck.meta["optimizer_step"] = s.optimizer.step_count();
  ck.meta["group_lrs"] = s.optimizer.group_lrs();
  for (const auto& [name, t] : s.model.params().all()) ck.arrays.emplace("param/" + name, t);
  for (const auto& [name, t] : s.optimizer.first_moments()) ck.arrays.emplace("opt.m/" + name, t);
  for (const auto& [name, t] : s.optimizer.second_moments()) ck.arrays.emplace("opt.v/" + name, t);
  auto vec = [](const std::vector<double>& v) { return Tensor({v.size()}, v); };
  ck.arrays.emplace("log/stage1_loss", vec(s.stage1_losses));
  ck.arrays.emplace("log/stage2_loss", vec(s.stage2_losses));
  return ck;
}

/// Copies checkpoint weights into the model. Every checkpoint parameter must
/// exist in the model with the same shape; model parameters missing from the
/// checkpoint keep their current values.
inline void load_params(Model& model, const Checkpoint& ck) {
  for (const auto& [key, t] : ck.arrays) {
    if (key.rfind("param/", 0) != 0) continue;
    const std::string name = key.substr(6);
    if (!model.params().contains(name))
      throw ValidationError("checkpoint parameter '" + name + "' does not exist in the model");
    Tensor& dst = model.params().get(name);
    if (dst.shape() != t.shape())
      throw ValidationError("checkpoint parameter '" + name + "' has shape " + shape_str(t.shape()) +
                            ", model expects " + shape_str(dst.shape()));
    dst = t;
  }
}

/// Restores weights, optimizer moments, step counters and loss history.
inline void restore_state(TrainState& s, const Checkpoint& ck) {
  load_params(s.model, ck);
  s.stage = ck.stage;
  s.iteration = ck.iteration;
  s.optimizer.first_moments().clear();
  s.optimizer.second_moments().clear();
  for (const auto& [key, t] : ck.arrays) {
    if (key.rfind("opt.m/", 0) == 0) s.optimizer.first_moments()[key.substr(6)] = t;
    if (key.rfind("opt.v/", 0) == 0) s.optimizer.second_moments()[key.substr(6)] = t;
  }
  s.optimizer.set_step_count(ck.meta.value("optimizer_step", std::size_t{0}));
  auto read_log = [&ck](const std::string& k) {
    auto it = ck.arrays.find(k);
    return it == ck.arrays.end() ? std::vector<double>{} : it->second.storage();
  };
  s.stage1_losses = read_log("log/stage1_loss");
  s.stage2_losses = read_log("log/stage2_loss");
}

// ---------------------------------------------------------------------------
// Steps

/// One alignment step on global batch `s.iteration`. Returns the loss before
/// the update.
inline double stage1_step(TrainState& s, const data::BatchStream& stream) {
  const auto batch = stream.batch(s.iteration);
  ad::Tape tape;
  ParamScope P(tape, s.model.params(), keys_of(s.optimizer.group_lrs()));
  ad::Var loss = cmu::batch_alignment_loss(s.model, P, batch);
  tape.backward(loss);
  s.optimizer.step(s.model.params(), tape);
  const double v = loss.value()[0];
  s.stage1_losses.push_back(v);
  ++s.iteration;
  return v;
}

/// Segmentation loss of one batch: pixel-mean cross-entropy over all
/// non-ignored pixels, with z_T built from the seen classes only.
inline ad::Var batch_segmentation_loss(const Model& model, const ParamScope& P,
                                       const std::vector<data::PairedSample>& batch) {
  const ClassVocabulary vocab = model.config().vocabulary();
  const ClassVocabulary train_vocab = vocab.seen_only();
  const auto map = seen_label_map(vocab);
  ad::Var z_text = model.text_embeddings(P, train_vocab);
  std::vector<ad::Var> logits;
  std::vector<int> targets;
  for (const auto& smp : batch) {
    logits.push_back(model.forward(P, smp.rgb, smp.sar, z_text).logits);
    const auto t = remap_labels(smp.label, map, vocab.ignore_index());
    targets.insert(targets.end(), t.begin(), t.end());
  }
  return ad::cross_entropy(ad::concat_rows(logits), targets, vocab.ignore_index());
}

inline double stage2_step(TrainState& s, const data::BatchStream& stream) {
  const auto batch = stream.batch(s.iteration);
  ad::Tape tape;
  ParamScope P(tape, s.model.params(), keys_of(s.optimizer.group_lrs()));
  ad::Var loss = batch_segmentation_loss(s.model, P, batch);
  tape.backward(loss);
  s.optimizer.step(s.model.params(), tape);
  const double v = loss.value()[0];
  s.stage2_losses.push_back(v);
  ++s.iteration;
  return v;
}

// ---------------------------------------------------------------------------
// Logs

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw RuntimeError("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw RuntimeError("failed writing '" + path.string() + "'");
}

inline void write_loss_logs(const fs::path& dir, const TrainState& s) {
  auto step_csv = [](const std::vector<double>& v) {
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < v.size(); ++i) out += std::to_string(i) + "," + fmt_double(v[i]) + "\n";
    return out;
  };
  std::string all = "stage,iter,loss\n";
  for (std::size_t i = 0; i < s.stage1_losses.size(); ++i)
    all += kStageCmu + "," + std::to_string(i) + "," + fmt_double(s.stage1_losses[i]) + "\n";
  for (std::size_t i = 0; i < s.stage2_losses.size(); ++i)
    all += kStageFull + "," + std::to_string(i) + "," + fmt_double(s.stage2_losses[i]) + "\n";
  write_text(dir / "losses.csv", all);
  if (!s.stage1_losses.empty() || s.stage == kStageCmu) write_text(dir / "stage1_loss.csv", step_csv(s.stage1_losses));
  if (!s.stage2_losses.empty() || s.stage == kStageFull) write_text(dir / "stage2_loss.csv", step_csv(s.stage2_losses));
}

inline void write_run_json(const fs::path& dir, const TrainState& s) {
  ojson j;
  const RunConfig& cfg = s.model.config();
  j["stage"] = s.stage;
  j["seed"] = cfg.seed;
  j["iteration"] = s.iteration;
  j["config_hash"] = config_hash(cfg);
  j["image_size"] = {s.model.height(), s.model.width()};
  j["group_lrs"] = s.optimizer.group_lrs();
  ojson hashes;
  for (const auto& g : s.model.params().groups()) hashes[g] = s.model.params().hash(g);
  j["param_hashes"] = hashes;
  if (!s.stage1_losses.empty()) j["stage1_final_loss"] = s.stage1_losses.back();
  if (!s.stage2_losses.empty()) j["stage2_final_loss"] = s.stage2_losses.back();
  j["config"] = config_to_json(cfg);
  write_text(dir / "run.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stage drivers

struct RunOptions {
  fs::path out_dir;              ///< empty: write nothing
  std::size_t checkpoint_every = 0;  ///< also save <stage>_iter<k>.ckpt every k steps
  bool allow_config_mismatch = false;
  std::size_t stop_after = 0;    ///< when > 0, stop after this many steps of the stage
  std::function<void(const std::string& stage, std::size_t iter, double loss)> on_step;
};

inline std::pair<std::size_t, std::size_t> manifest_size(const DatasetManifest& m) {
  return {m.height, m.width};
}

inline data::CloudParams train_clouds(const RunConfig& cfg) {
  if (cfg.cloud_apply == CloudApply::Train || cfg.cloud_apply == CloudApply::Both) return cfg.cloud;
  return {};
}

inline data::CloudParams test_clouds(const RunConfig& cfg) {
  if (cfg.cloud_apply == CloudApply::Test || cfg.cloud_apply == CloudApply::Both) return cfg.cloud;
  return {};
}

inline void finish_stage(const TrainState& s, const RunOptions& opt, const std::string& ckpt_name) {
  if (opt.out_dir.empty()) return;
  save_checkpoint(to_checkpoint(s), opt.out_dir / ckpt_name);
  write_loss_logs(opt.out_dir, s);
  write_run_json(opt.out_dir, s);
}

template <typename StepFn>
void run_steps(TrainState& s, std::size_t total, const RunOptions& opt, const std::string& tag,
               StepFn&& step) {
  std::size_t done = 0;
  while (s.iteration < total) {
    if (opt.stop_after > 0 && done >= opt.stop_after) break;
    const std::size_t it = s.iteration;
    const double loss = step();
    ++done;
    if (opt.on_step) opt.on_step(s.stage, it, loss);
    if (opt.checkpoint_every > 0 && !opt.out_dir.empty() && s.iteration % opt.checkpoint_every == 0)
      save_checkpoint(to_checkpoint(s), opt.out_dir / (tag + "_iter" + std::to_string(s.iteration) + ".ckpt"));
  }
}

/// Alignment stage. With `resume`, continues a stage-1 checkpoint from its
/// iteration; otherwise starts from a fresh initialisation.
inline TrainState run_stage1_cmu(const RunConfig& cfg, const DatasetManifest& manifest,
                                 const RunOptions& opt = {}, const Checkpoint* resume = nullptr) {
  cfg.validate();
  if (cfg.cmu_target == CmuTarget::None)
    throw ValidationError("cmu_target is none: the alignment stage has nothing to train");
  TrainState s(cfg, manifest.height, manifest.width);
  s.model.init(cfg.seed);
  s.stage = kStageCmu;
  for (const auto& [g, lr] : stage1_group_lrs(cfg)) s.optimizer.set_group_lr(g, lr);
  if (resume) {
    if (resume->stage != kStageCmu)
      throw ValidationError("cannot resume the alignment stage from a '" + resume->stage + "' checkpoint");
    check_config_hash(*resume, config_hash(cfg), opt.allow_config_mismatch);
    restore_state(s, *resume);
  }
  data::BatchStream stream(manifest, Split::Train, cfg.batch_size, derive_seed(cfg.seed, {1}),
                           cfg.vocabulary(), cfg.augment, {});
  run_steps(s, cfg.stage1_iters, opt, "stage1", [&] { return stage1_step(s, stream); });
  finish_stage(s, opt, "stage1.ckpt");
  return s;
}

/// Full-model stage. `stage1` supplies aligned encoder weights (required
/// unless cmu_target is none); `resume` continues a full-stage checkpoint.
inline TrainState run_stage2_full(const RunConfig& cfg, const DatasetManifest& manifest,
                                  const RunOptions& opt = {}, const Checkpoint* stage1 = nullptr,
                                  const Checkpoint* resume = nullptr) {
  cfg.validate();
  TrainState s(cfg, manifest.height, manifest.width);
  s.model.init(cfg.seed);
  s.stage = kStageFull;
  if (resume) {
    if (resume->stage != kStageFull)
      throw ValidationError("cannot resume the full stage from a '" + resume->stage + "' checkpoint");
    check_config_hash(*resume, config_hash(cfg), opt.allow_config_mismatch);
    restore_state(s, *resume);
    s.stage = kStageFull;
  } else if (stage1) {
    if (stage1->stage != kStageCmu)
      throw ValidationError("expected a stage-1 ('cmu') checkpoint, got '" + stage1->stage + "'");
    check_config_hash(*stage1, config_hash(cfg), opt.allow_config_mismatch);
    load_params(s.model, *stage1);
    auto it = stage1->arrays.find("log/stage1_loss");
    if (it != stage1->arrays.end()) s.stage1_losses = it->second.storage();
  } else if (cfg.cmu_target != CmuTarget::None) {
    throw ValidationError("cmu_target '" + to_string(cfg.cmu_target) +
                          "' needs a stage-1 checkpoint (or set cmu_target=none)");
  }
  for (const auto& [g, lr] : stage2_group_lrs(s.model)) s.optimizer.set_group_lr(g, lr);
  data::BatchStream stream(manifest, Split::Train, cfg.batch_size, derive_seed(cfg.seed, {2}),
                           cfg.vocabulary(), cfg.augment, train_clouds(cfg));
  run_steps(s, cfg.stage2_iters, opt, "stage2", [&] { return stage2_step(s, stream); });
  finish_stage(s, opt, "final.ckpt");
  return s;
}

/// Rebuilds a model from a checkpoint's embedded configuration.
inline Model model_from_checkpoint(const Checkpoint& ck) {
  RunConfig cfg = config_from_json(ck.meta.at("config"));
  Model m(cfg, ck.meta.at("height").get<std::size_t>(), ck.meta.at("width").get<std::size_t>());
  m.init(cfg.seed);
  load_params(m, ck);
  return m;
}

}  // namespace ovseg
