// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// The full two-branch model: dense RGB and SAR encoders, global visual
// encoder(s), text encoder and the fusion head, with named parameter groups
//
//   rgb_dense   sar_dense   global_rgb   global_sar   text   head

#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "ovseg/config.hpp"
#include "ovseg/def_head.hpp"
#include "ovseg/encoders.hpp"

namespace ovseg {

namespace group {
inline const std::string kRgbDense = "rgb_dense";
inline const std::string kSarDense = "sar_dense";
inline const std::string kGlobalRgb = "global_rgb";
inline const std::string kGlobalSar = "global_sar";
inline const std::string kText = "text";
inline const std::string kHead = "head";
}  // namespace group

/// Intermediate and final outputs of one forward pass on one sample.
struct ForwardResult {
  nn::VitOutput rgb;
  nn::VitOutput sar;  ///< taps invalid under rgb_only fusion
  ad::Var z_global;   ///< [1, d_g]
  std::array<ad::Var, 3> f_d;         ///< [hw, d_u]
  std::array<ad::Var, 3> h_dt;        ///< [hw, N_c], raw cosines
  ad::Var h_gt;                       ///< [1, N_c], raw cosines
  std::array<ad::Var, 3> h_dt_refined;  ///< [N_c, h, w, 1]
  ad::Var h_gt_refined;                 ///< [N_c, h, w, 1]
  std::array<ad::Var, 3> h_fuse;        ///< [N_c, h, w, 1]
  ad::Var logits;                       ///< [H*W, N_c]
};

class Model {
 public:
  Model(const RunConfig& cfg, std::size_t height, std::size_t width)
      : cfg_(cfg), height_(height), width_(width) {
    dense_rgb_ = nn::VitConfig::from_spec(cfg.dense_encoder, height, width, 3, false);
    dense_sar_ = nn::VitConfig::from_spec(cfg.dense_encoder, height, width, 1, false);
    global_rgb_ = nn::VitConfig::from_spec(cfg.global_encoder, height, width, 3, true);
    global_sar_ = nn::VitConfig::from_spec(cfg.global_encoder, height, width, 1, true);
    dense_rgb_.validate();
    dense_sar_.validate();
    global_rgb_.validate();
  }

  /// Fresh weights. Each group draws from its own stream derived from the
  /// seed, so variants that add or drop a group share all other weights.
  void init(std::uint64_t seed) {
    params_ = ParamStore{};
    auto rng_for = [seed](const std::string& g) { return Rng(derive_seed(seed, {hash_name(g)})); };
    Rng r1 = rng_for(group::kRgbDense), r2 = rng_for(group::kSarDense),
        r3 = rng_for(group::kGlobalRgb), r4 = rng_for(group::kGlobalSar), r5 = rng_for(group::kText),
        r6 = rng_for(group::kHead);
    nn::init_vit(params_, group::kRgbDense, dense_rgb_, r1);
    nn::init_vit(params_, group::kSarDense, dense_sar_, r2);
    nn::init_global_encoder(params_, group::kGlobalRgb, global_rgb_, cfg_.unified_dim, r3);
    if (uses_global_sar()) nn::init_global_encoder(params_, group::kGlobalSar, global_sar_, cfg_.unified_dim, r4);
    if (cfg_.text_embeddings.empty()) nn::init_text_encoder(params_, group::kText, cfg_.text_encoder, cfg_.unified_dim, r5);
    head::init_head(params_, group::kHead,
                    {cfg_.dense_encoder.embed_dim, cfg_.unified_dim, cfg_.decoder_width}, r6);
  }

  bool uses_global_sar() const {
    return cfg_.cmu_target == CmuTarget::Global || cfg_.cmu_target == CmuTarget::Both;
  }
  bool uses_sar_dense() const { return cfg_.fusion == Fusion::Dual; }

  const RunConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t grid_h() const { return dense_rgb_.grid_h(); }
  std::size_t grid_w() const { return dense_rgb_.grid_w(); }
  const nn::VitConfig& dense_rgb_config() const { return dense_rgb_; }
  const nn::VitConfig& dense_sar_config() const { return dense_sar_; }
  const nn::VitConfig& global_rgb_config() const { return global_rgb_; }
  const nn::VitConfig& global_sar_config() const { return global_sar_; }

  /// Text embedding matrix for `vocab`: from the text encoder, or a constant
  /// loaded from the configured embedding file.
  ad::Var text_embeddings(const ParamScope& P, const ClassVocabulary& vocab) const {
    if (!cfg_.text_embeddings.empty())
      return P.tape().constant(nn::load_external_embeddings(cfg_.text_embeddings, vocab, cfg_.unified_dim));
    return nn::encode_text(P, group::kText, cfg_.text_encoder, vocab);
  }

  nn::VitOutput encode_dense_rgb(const ParamScope& P, const Tensor& rgb) const {
    return nn::vit_forward(P, group::kRgbDense, dense_rgb_, P.tape().constant(rgb));
  }
  nn::VitOutput encode_dense_sar(const ParamScope& P, const Tensor& sar) const {
    return nn::vit_forward(P, group::kSarDense, dense_sar_, P.tape().constant(sar));
  }
  nn::GlobalOutput encode_global_rgb(const ParamScope& P, const Tensor& rgb) const {
    return nn::global_forward(P, group::kGlobalRgb, global_rgb_, P.tape().constant(rgb));
  }
  nn::GlobalOutput encode_global_sar(const ParamScope& P, const Tensor& sar) const {
    return nn::global_forward(P, group::kGlobalSar, global_sar_, P.tape().constant(sar));
  }

  /// Global visual embedding: the RGB encoder alone, or, when a SAR global
  /// encoder exists, the re-normalised sum of both.
  ad::Var global_embedding(const ParamScope& P, const Tensor& rgb, const Tensor& sar) const {
    ad::Var z = encode_global_rgb(P, rgb).embedding;
    if (!uses_global_sar()) return z;
    return ad::l2_normalize_rows(ad::add(z, encode_global_sar(P, sar).embedding));
  }

  ForwardResult forward(const ParamScope& P, const Tensor& rgb, const Tensor& sar,
                        const ad::Var& z_text) const {
    ForwardResult r;
    const std::size_t h = grid_h(), w = grid_w();
    r.rgb = encode_dense_rgb(P, rgb);
    if (uses_sar_dense()) r.sar = encode_dense_sar(P, sar);
    r.z_global = global_embedding(P, rgb, sar);
    r.h_gt = head::global_text_similarity(r.z_global, z_text);
    r.h_gt_refined = head::refine_similarity(head::broadcast_global(r.h_gt, h, w),
                                             P(group::kHead + ".refine_gt.w"),
                                             P(group::kHead + ".refine_gt.b"));
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string t = group::kHead + "." + std::string("refine_dt") + std::to_string(i);
      r.f_d[i] = head::project_and_fuse(r.rgb.taps[i], uses_sar_dense() ? r.sar.taps[i] : ad::Var{},
                                        P(group::kHead + ".proj" + std::to_string(i) + ".w"));
      r.h_dt[i] = head::dense_text_similarity(r.f_d[i], z_text);
      r.h_dt_refined[i] = head::refine_similarity(head::class_major(r.h_dt[i], h, w), P(t + ".w"), P(t + ".b"));
      const std::string f = group::kHead + ".fuse" + std::to_string(i);
      r.h_fuse[i] = head::fuse_residual(r.h_dt_refined[i], r.h_gt_refined, P(f + ".w"), P(f + ".b"));
    }
    r.logits = head::decode_fpn(P, group::kHead, r.h_fuse, r.f_d, r.z_global, h, w, height_, width_);
    return r;
  }

 private:
  RunConfig cfg_;
  std::size_t height_, width_;
  nn::VitConfig dense_rgb_, dense_sar_, global_rgb_, global_sar_;
  ParamStore params_;
};

/// Per-pixel argmax over logits [P, N_c]; ties go to the lowest index.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t m = logits.rows(), n = logits.cols();
  std::vector<int> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace ovseg
