// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Fusion head: projects and fuses the dense RGB/SAR taps, builds dense-text
// and global-text cosine maps, refines and residually fuses them, and decodes
// per-class logits.
//
// Similarity volumes are kept class-major, shape [N_c, h, w, 1]. Every
// convolution after the similarity stage acts on one class plane at a time
// with weights shared across classes, so no operation mixes class channels
// before the classifier. A class's logits therefore do not depend on which
// other classes are in the vocabulary.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "ovseg/autograd.hpp"
#include "ovseg/params.hpp"

namespace ovseg::head {

using ad::Var;

constexpr std::size_t kRefineKernel = 7;
constexpr std::size_t kDecoderKernel = 3;

/// f_d = rgb * W + sar * W, a shared 1x1 projection per tap. `sar` may be
/// invalid (single-modality bypass), then f_d = rgb * W.
inline Var project_and_fuse(const Var& rgb, const Var& sar, const Var& weight) {
  Var p = ad::matmul(rgb, weight);
  if (!sar.valid()) return p;
  if (rgb.shape() != sar.shape())
    throw ValidationError("project_and_fuse: tap shapes " + shape_str(rgb.shape()) + " and " +
                          shape_str(sar.shape()) + " differ");
  return ad::add(p, ad::matmul(sar, weight));
}

/// Cosine similarity of every pixel feature [hw, d] with every class row of
/// z_T [N_c, d]. Zero-norm pixels give 0. Output [hw, N_c].
inline Var dense_text_similarity(const Var& f_d, const Var& z_text) {
  if (f_d.value().cols() != z_text.value().cols())
    throw ValidationError("dense_text_similarity: feature dim " + std::to_string(f_d.value().cols()) +
                          " vs text dim " + std::to_string(z_text.value().cols()));
  return ad::matmul_nt(ad::l2_normalize_rows(f_d), z_text);
}

/// z [1, d] against z_T [N_c, d] -> [1, N_c].
inline Var global_text_similarity(const Var& z, const Var& z_text) {
  if (z.value().cols() != z_text.value().cols())
    throw ValidationError("global_text_similarity: dimension mismatch");
  return ad::matmul_nt(z, z_text);
}

/// Pixel-major [h*w, N_c] -> class-major [N_c, h, w, 1].
inline Var class_major(const Var& map, std::size_t h, std::size_t w) {
  const std::size_t n = map.value().cols();
  return ad::reshape(ad::transpose(map), {n, h, w, 1});
}

/// Class-major [N_c, h, w, 1] -> pixel-major [h*w, N_c].
inline Var pixel_major(const Var& map) {
  const Tensor& v = map.value();
  return ad::transpose(ad::reshape(map, {v.dim(0), v.dim(1) * v.dim(2)}));
}

/// Replicates a [1, N_c] global similarity across an h x w grid:
/// -> [N_c, h, w, 1].
inline Var broadcast_global(const Var& h_gt, std::size_t h, std::size_t w) {
  const std::size_t n = h_gt.value().cols();
  Var ones = h_gt.tape()->constant(Tensor({1, h * w}, 1.0));
  return ad::reshape(ad::matmul(ad::transpose(h_gt), ones), {n, h, w, 1});
}

/// sigmoid(conv7x7(map)) on each class plane. weight [49, 1], bias [1].
inline Var refine_similarity(const Var& map, const Var& weight, const Var& bias) {
  if (map.value().rank() != 4 || map.value().dim(3) != 1)
    throw ValidationError("refine_similarity expects [N_c,h,w,1], got " + shape_str(map.shape()));
  return ad::sigmoid(ad::conv2d_same(map, weight, bias, kRefineKernel));
}

/// sigmoid(conv7x7([h_dt; h_gt])) + h_gt on each class plane. Inputs are the
/// refined maps [N_c, h, w, 1]; weight [98, 1] over the two stacked planes.
inline Var fuse_residual(const Var& h_dt_refined, const Var& h_gt_refined, const Var& weight,
                         const Var& bias) {
  const Shape& s = h_dt_refined.shape();
  if (s != h_gt_refined.shape())
    throw ValidationError("fuse_residual: shapes " + shape_str(s) + " and " +
                          shape_str(h_gt_refined.shape()) + " differ");
  const std::size_t rows = s[0] * s[1] * s[2];
  Var stacked = ad::reshape(ad::concat_cols({ad::reshape(h_dt_refined, {rows, 1}),
                                             ad::reshape(h_gt_refined, {rows, 1})}),
                            {s[0], s[1], s[2], 2});
  Var gate = ad::sigmoid(ad::conv2d_same(stacked, weight, bias, kRefineKernel));
  return ad::add(gate, h_gt_refined);
}

/// 3x3 "same" convolution without bias: [B,H,W,C] -> [B*H*W, Cout].
inline Var conv3x3_nobias(const Var& x, const Var& weight) {
  return ad::matmul(ad::im2col(x, kDecoderKernel, kDecoderKernel / 2), weight);
}

struct HeadDims {
  std::size_t dense_dim = 16;    ///< d of the dense encoder taps
  std::size_t unified_dim = 16;  ///< d_u, equal to the joint text/global dim
  std::size_t decoder_width = 16;
};

inline void init_head(ParamStore& ps, const std::string& p, const HeadDims& d, Rng& rng) {
  const std::size_t k2 = kRefineKernel * kRefineKernel, c2 = kDecoderKernel * kDecoderKernel;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string t = std::to_string(i);
    ps.add(p + ".proj" + t + ".w", init_fan_in({d.dense_dim, d.unified_dim}, d.dense_dim, rng));
    ps.add(p + ".refine_dt" + t + ".w", init_fan_in({k2, 1}, k2, rng));
    ps.add(p + ".refine_dt" + t + ".b", Tensor({1}, 0.0));
    ps.add(p + ".fuse" + t + ".w", init_fan_in({2 * k2, 1}, 2 * k2, rng));
    ps.add(p + ".fuse" + t + ".b", Tensor({1}, 0.0));
    const std::size_t shared_in = c2 * 2 * d.unified_dim;
    ps.add(p + ".dec" + t + ".shared.w", init_fan_in({shared_in, d.decoder_width}, shared_in, rng));
    ps.add(p + ".dec" + t + ".shared.b", Tensor({d.decoder_width}, 0.0));
    // The coarsest level has no running state yet, only the fused map.
    const std::size_t cls_in = c2 * ((i == 2 ? 0 : d.decoder_width) + 1);
    ps.add(p + ".dec" + t + ".cls.w", init_fan_in({cls_in, d.decoder_width}, cls_in, rng));
  }
  ps.add(p + ".refine_gt.w", init_fan_in({k2, 1}, k2, rng));
  ps.add(p + ".refine_gt.b", Tensor({1}, 0.0));
  ps.add(p + ".classifier.w", init_fan_in({d.decoder_width, 1}, d.decoder_width, rng));
  ps.add(p + ".classifier.b", Tensor({1}, 0.0));
}

/// Coarse-to-fine decoder over taps 2, 1, 0. At each level the class-shared
/// context conv3x3([f_d; z]) is added to a per-class conv3x3 of
/// [state; h_fuse_n], followed by GELU. The final state is mapped to one
/// logit per class by a 1x1 classifier and bilinearly resized to out_h x
/// out_w. Returns logits [out_h*out_w, N_c].
inline Var decode_fpn(const ParamScope& P, const std::string& p,
                      const std::array<Var, 3>& h_fuse, const std::array<Var, 3>& f_d,
                      const Var& z_global, std::size_t h, std::size_t w, std::size_t out_h,
                      std::size_t out_w) {
  const std::size_t n_cls = h_fuse[0].value().dim(0), hw = h * w;
  Var state;
  std::size_t sh = h, sw = w;
  for (int lvl = 2; lvl >= 0; --lvl) {
    const std::string t = std::to_string(lvl);
    const Tensor& hv = h_fuse[static_cast<std::size_t>(lvl)].value();
    if (hv.dim(0) != n_cls || hv.dim(1) != h || hv.dim(2) != w)
      throw ValidationError("decode_fpn: fused map shape " + shape_str(hv.shape()) + " at tap " + t);
    if (f_d[static_cast<std::size_t>(lvl)].value().rows() != hw)
      throw ValidationError("decode_fpn: feature map at tap " + t + " has wrong size");
    Var ctx = ad::concat_cols({f_d[static_cast<std::size_t>(lvl)], ad::tile_rows(z_global, hw)});
    Var shared = ad::linear(ad::im2col(ad::reshape(ctx, {1, h, w, ctx.value().cols()}),
                                       kDecoderKernel, kDecoderKernel / 2),
                            P(p + ".dec" + t + ".shared.w"), P(p + ".dec" + t + ".shared.b"));
    Var input;
    if (!state.valid()) {
      input = h_fuse[static_cast<std::size_t>(lvl)];
    } else {
      if (sh != h || sw != w) state = ad::resize_bilinear(state, h, w);
      const std::size_t rows = n_cls * hw;
      const std::size_t width = state.value().dim(3);
      input = ad::reshape(
          ad::concat_cols({ad::reshape(state, {rows, width}),
                           ad::reshape(h_fuse[static_cast<std::size_t>(lvl)], {rows, 1})}),
          {n_cls, h, w, width + 1});
    }
    Var per_class = conv3x3_nobias(input, P(p + ".dec" + t + ".cls.w"));
    Var sum = ad::add(per_class, ad::tile_rows(shared, n_cls));
    state = ad::reshape(ad::gelu(sum), {n_cls, h, w, sum.value().cols()});
    sh = h;
    sw = w;
  }
  const std::size_t width = state.value().dim(3);
  Var logit = ad::linear(ad::reshape(state, {n_cls * hw, width}), P(p + ".classifier.w"),
                         P(p + ".classifier.b"));
  Var up = ad::resize_bilinear(ad::reshape(logit, {n_cls, h, w, 1}), out_h, out_w);
  return ad::transpose(ad::reshape(up, {n_cls, out_h * out_w}));
}

}  // namespace ovseg::head
