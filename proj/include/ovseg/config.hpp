// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovseg/data/augment.hpp"
#include "ovseg/data/clouds.hpp"
#include "ovseg/rng.hpp"
#include "ovseg/vocab.hpp"

namespace ovseg {

using ojson = nlohmann::ordered_json;

enum class AlignLoss { InfoNCE, MSE, L1 };
enum class CmuTarget { None, Dense, Global, Both };
enum class Fusion { Dual, RgbOnly };
enum class CloudApply { None, Train, Test, Both };

inline std::string to_string(AlignLoss v) {
  switch (v) {
    case AlignLoss::InfoNCE: return "infonce";
    case AlignLoss::MSE: return "mse";
    case AlignLoss::L1: return "l1";
  }
  return "infonce";
}
inline std::string to_string(CmuTarget v) {
  switch (v) {
    case CmuTarget::None: return "none";
    case CmuTarget::Dense: return "dense";
    case CmuTarget::Global: return "global";
    case CmuTarget::Both: return "both";
  }
  return "none";
}
inline std::string to_string(Fusion v) { return v == Fusion::Dual ? "dual" : "rgb_only"; }
inline std::string to_string(CloudApply v) {
  switch (v) {
    case CloudApply::None: return "none";
    case CloudApply::Train: return "train";
    case CloudApply::Test: return "test";
    case CloudApply::Both: return "both";
  }
  return "none";
}

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> options, const char* what) {
  for (E e : options)
    if (to_string(e) == s) return e;
  std::string msg = std::string("unknown ") + what + " '" + s + "' (expected ";
  bool first = true;
  for (E e : options) {
    msg += (first ? "" : "|") + to_string(e);
    first = false;
  }
  throw ValidationError(msg + ")");
}

struct EncoderSpec {
  std::size_t patch_size = 4;
  std::size_t embed_dim = 16;
  std::size_t depth = 3;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::array<double, 3> tap_fractions{1.0 / 3.0, 2.0 / 3.0, 1.0};
};

struct TextSpec {
  std::size_t embed_dim = 16;
  std::size_t depth = 1;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t max_len = 64;
};

struct OptimSpec {
  double stage1_lr = 3e-4;
  double stage2_lr = 2.5e-4;
  double encoder_lr = 2e-6;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Everything a run needs besides the data. Parsed strictly: unknown keys
/// are errors.
struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> seen_classes{"Background", "City", "Forest", "Farmland"};
  std::vector<std::string> novel_classes{"Road", "Water"};
  std::string prompt_template = ClassVocabulary::kDefaultTemplate;
  int ignore_index = ClassVocabulary::kDefaultIgnore;

  EncoderSpec dense_encoder{};
  EncoderSpec global_encoder{8, 16, 2, 2, 2, {1.0 / 3.0, 2.0 / 3.0, 1.0}};
  TextSpec text_encoder{};
  std::size_t unified_dim = 16;
  std::size_t decoder_width = 16;

  double temperature = 0.07;
  AlignLoss cmu_loss = AlignLoss::InfoNCE;
  CmuTarget cmu_target = CmuTarget::Dense;
  Fusion fusion = Fusion::Dual;

  OptimSpec optimizer{};
  std::size_t batch_size = 8;
  std::size_t stage1_iters = 400;
  std::size_t stage2_iters = 600;

  data::CloudParams cloud{};
  CloudApply cloud_apply = CloudApply::None;
  data::AugmentParams augment{};

  std::string manifest;
  std::string cmu_manifest;
  std::string text_embeddings;
  std::string test_domain;
  std::string setting = "toy";

  ClassVocabulary vocabulary() const {
    return resolve_vocabulary(seen_classes, novel_classes, prompt_template, ignore_index);
  }

  void validate() const {
    vocabulary();
    if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
    for (double lr : {optimizer.stage1_lr, optimizer.stage2_lr, optimizer.encoder_lr})
      if (!(lr > 0.0)) throw ValidationError("learning rates must be > 0");
    if (!(optimizer.weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
      throw ValidationError("betas must lie in [0,1)");
    if (!(optimizer.eps > 0.0)) throw ValidationError("eps must be > 0");
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (cmu_loss == AlignLoss::InfoNCE && batch_size < 2)
      throw ValidationError("infonce needs batch_size >= 2 (in-batch negatives)");
    if (unified_dim == 0 || decoder_width == 0)
      throw ValidationError("unified_dim and decoder_width must be positive");
    cloud.validate();
    augment.validate();
  }
};

namespace detail {

inline ojson encoder_json(const EncoderSpec& e) {
  ojson j;
  j["patch_size"] = e.patch_size;
  j["embed_dim"] = e.embed_dim;
  j["depth"] = e.depth;
  j["heads"] = e.heads;
  j["mlp_ratio"] = e.mlp_ratio;
  j["tap_fractions"] = e.tap_fractions;
  return j;
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("config key '" + where + key + "': " + ex.what());
  }
}

inline void read_encoder(const nlohmann::json& j, EncoderSpec& e, const std::string& where) {
  check_keys(j, {"patch_size", "embed_dim", "depth", "heads", "mlp_ratio", "tap_fractions"}, where);
  read(j, "patch_size", e.patch_size, where);
  read(j, "embed_dim", e.embed_dim, where);
  read(j, "depth", e.depth, where);
  read(j, "heads", e.heads, where);
  read(j, "mlp_ratio", e.mlp_ratio, where);
  read(j, "tap_fractions", e.tap_fractions, where);
}

}  // namespace detail

inline ojson config_to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["seen_classes"] = c.seen_classes;
  j["novel_classes"] = c.novel_classes;
  j["prompt_template"] = c.prompt_template;
  j["ignore_index"] = c.ignore_index;
  j["dense_encoder"] = detail::encoder_json(c.dense_encoder);
  j["global_encoder"] = detail::encoder_json(c.global_encoder);
  ojson t;
  t["embed_dim"] = c.text_encoder.embed_dim;
  t["depth"] = c.text_encoder.depth;
  t["heads"] = c.text_encoder.heads;
  t["mlp_ratio"] = c.text_encoder.mlp_ratio;
  t["max_len"] = c.text_encoder.max_len;
  j["text_encoder"] = t;
  j["unified_dim"] = c.unified_dim;
  j["decoder_width"] = c.decoder_width;
  j["temperature"] = c.temperature;
  j["cmu_loss"] = to_string(c.cmu_loss);
  j["cmu_target"] = to_string(c.cmu_target);
  j["fusion"] = to_string(c.fusion);
  ojson o;
  o["stage1_lr"] = c.optimizer.stage1_lr;
  o["stage2_lr"] = c.optimizer.stage2_lr;
  o["encoder_lr"] = c.optimizer.encoder_lr;
  o["weight_decay"] = c.optimizer.weight_decay;
  o["beta1"] = c.optimizer.beta1;
  o["beta2"] = c.optimizer.beta2;
  o["eps"] = c.optimizer.eps;
  j["optimizer"] = o;
  j["batch_size"] = c.batch_size;
  j["stage1_iters"] = c.stage1_iters;
  j["stage2_iters"] = c.stage2_iters;
  ojson cl;
  cl["profile"] = data::to_string(c.cloud.profile);
  cl["alpha_max"] = c.cloud.alpha_max;
  cl["noise_octaves"] = c.cloud.noise_octaves;
  cl["noise_base_period"] = c.cloud.noise_base_period;
  cl["cloud_color"] = c.cloud.cloud_color;
  cl["seed"] = c.cloud.seed;
  cl["apply_to"] = to_string(c.cloud_apply);
  j["cloud"] = cl;
  ojson a;
  a["translate_px"] = c.augment.translate_px;
  a["hflip"] = c.augment.hflip;
  a["vflip"] = c.augment.vflip;
  a["scale_min"] = c.augment.scale_min;
  a["scale_max"] = c.augment.scale_max;
  a["rotate_deg"] = c.augment.rotate_deg;
  j["augment"] = a;
  j["manifest"] = c.manifest;
  j["cmu_manifest"] = c.cmu_manifest;
  j["text_embeddings"] = c.text_embeddings;
  j["test_domain"] = c.test_domain;
  j["setting"] = c.setting;
  return j;
}

/// Strict parse on top of the defaults; missing keys keep their defaults.
inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  RunConfig c;
  detail::check_keys(j,
                     {"seed", "seen_classes", "novel_classes", "prompt_template", "ignore_index",
                      "dense_encoder", "global_encoder", "text_encoder", "unified_dim",
                      "decoder_width", "temperature", "cmu_loss", "cmu_target", "fusion",
                      "optimizer", "batch_size", "stage1_iters", "stage2_iters", "cloud",
                      "augment", "manifest", "cmu_manifest", "text_embeddings", "test_domain",
                      "setting"},
                     "");
  read(j, "seed", c.seed, "");
  read(j, "seen_classes", c.seen_classes, "");
  read(j, "novel_classes", c.novel_classes, "");
  read(j, "prompt_template", c.prompt_template, "");
  read(j, "ignore_index", c.ignore_index, "");
  if (j.contains("dense_encoder")) detail::read_encoder(j["dense_encoder"], c.dense_encoder, "dense_encoder.");
  if (j.contains("global_encoder")) detail::read_encoder(j["global_encoder"], c.global_encoder, "global_encoder.");
  if (j.contains("text_encoder")) {
    const auto& t = j["text_encoder"];
    detail::check_keys(t, {"embed_dim", "depth", "heads", "mlp_ratio", "max_len"}, "text_encoder.");
    read(t, "embed_dim", c.text_encoder.embed_dim, "text_encoder.");
    read(t, "depth", c.text_encoder.depth, "text_encoder.");
    read(t, "heads", c.text_encoder.heads, "text_encoder.");
    read(t, "mlp_ratio", c.text_encoder.mlp_ratio, "text_encoder.");
    read(t, "max_len", c.text_encoder.max_len, "text_encoder.");
  }
  read(j, "unified_dim", c.unified_dim, "");
  read(j, "decoder_width", c.decoder_width, "");
  read(j, "temperature", c.temperature, "");
  std::string s;
  if (j.contains("cmu_loss")) {
    read(j, "cmu_loss", s, "");
    c.cmu_loss = parse_enum(s, {AlignLoss::InfoNCE, AlignLoss::MSE, AlignLoss::L1}, "cmu_loss");
  }
  if (j.contains("cmu_target")) {
    read(j, "cmu_target", s, "");
    c.cmu_target = parse_enum(
        s, {CmuTarget::None, CmuTarget::Dense, CmuTarget::Global, CmuTarget::Both}, "cmu_target");
  }
  if (j.contains("fusion")) {
    read(j, "fusion", s, "");
    c.fusion = parse_enum(s, {Fusion::Dual, Fusion::RgbOnly}, "fusion");
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    detail::check_keys(o, {"stage1_lr", "stage2_lr", "encoder_lr", "weight_decay", "beta1", "beta2", "eps"},
                       "optimizer.");
    read(o, "stage1_lr", c.optimizer.stage1_lr, "optimizer.");
    read(o, "stage2_lr", c.optimizer.stage2_lr, "optimizer.");
    read(o, "encoder_lr", c.optimizer.encoder_lr, "optimizer.");
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer.");
    read(o, "beta1", c.optimizer.beta1, "optimizer.");
    read(o, "beta2", c.optimizer.beta2, "optimizer.");
    read(o, "eps", c.optimizer.eps, "optimizer.");
  }
  read(j, "batch_size", c.batch_size, "");
  read(j, "stage1_iters", c.stage1_iters, "");
  read(j, "stage2_iters", c.stage2_iters, "");
  if (j.contains("cloud")) {
    const auto& cl = j["cloud"];
    detail::check_keys(cl, {"profile", "alpha_max", "noise_octaves", "noise_base_period",
                            "cloud_color", "seed", "apply_to"},
                       "cloud.");
    if (cl.contains("profile")) {
      read(cl, "profile", s, "cloud.");
      auto preset = data::CloudParams::preset(data::parse_cloud_profile(s), c.cloud.seed);
      c.cloud.profile = preset.profile;
      c.cloud.alpha_max = preset.alpha_max;
    }
    read(cl, "alpha_max", c.cloud.alpha_max, "cloud.");
    read(cl, "noise_octaves", c.cloud.noise_octaves, "cloud.");
    read(cl, "noise_base_period", c.cloud.noise_base_period, "cloud.");
    read(cl, "cloud_color", c.cloud.cloud_color, "cloud.");
    read(cl, "seed", c.cloud.seed, "cloud.");
    if (cl.contains("apply_to")) {
      read(cl, "apply_to", s, "cloud.");
      c.cloud_apply = parse_enum(
          s, {CloudApply::None, CloudApply::Train, CloudApply::Test, CloudApply::Both}, "cloud.apply_to");
    }
  }
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    detail::check_keys(a, {"translate_px", "hflip", "vflip", "scale_min", "scale_max", "rotate_deg"},
                       "augment.");
    read(a, "translate_px", c.augment.translate_px, "augment.");
    read(a, "hflip", c.augment.hflip, "augment.");
    read(a, "vflip", c.augment.vflip, "augment.");
    read(a, "scale_min", c.augment.scale_min, "augment.");
    read(a, "scale_max", c.augment.scale_max, "augment.");
    read(a, "rotate_deg", c.augment.rotate_deg, "augment.");
  }
  read(j, "manifest", c.manifest, "");
  read(j, "cmu_manifest", c.cmu_manifest, "");
  read(j, "text_embeddings", c.text_embeddings, "");
  read(j, "test_domain", c.test_domain, "");
  read(j, "setting", c.setting, "");
  c.augment.seed = derive_seed(c.seed, {0x61756775ULL});
  c.validate();
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("malformed JSON in '" + path.string() + "': " + ex.what());
  }
}

/// Applies a `dotted.key=value` override to a config document. The value is
/// parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = path.empty() ? nlohmann::json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

/// Hash of the model-defining part of a config. Run-control keys (iteration
/// counts, data paths, cloud and augmentation settings, batch size) are
/// excluded so that a checkpoint stays loadable when only those change.
inline std::uint64_t config_hash(const RunConfig& c) {
  ojson j = config_to_json(c);
  for (const char* k : {"stage1_iters", "stage2_iters", "manifest", "cmu_manifest", "test_domain",
                        "setting", "cloud", "augment", "batch_size"})
    j.erase(k);
  return hash_name(j.dump());
}

}  // namespace ovseg
