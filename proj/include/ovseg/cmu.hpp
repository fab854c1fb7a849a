// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Cross-modal alignment of the SAR encoders to the frozen RGB encoders.
//
// Each tap is mean-pooled over its token grid and L2-normalised. The
// contrastive form is one-directional: SAR anchor b against the RGB pooled
// vectors of the whole batch, with the matching RGB vector as positive,
//   L = mean_b -log softmax_j(s_bj / tau)[b],  s_bj = a_b . p_j

#pragma once

#include <array>
#include <vector>

#include "ovseg/autograd.hpp"
#include "ovseg/data/sample.hpp"
#include "ovseg/model.hpp"

namespace ovseg::cmu {

using ad::Var;

/// Mean over tokens then L2 normalisation, per tap: three [1, d] rows.
inline std::array<Var, 3> pool_taps(const std::array<Var, 3>& taps) {
  std::array<Var, 3> out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = ad::l2_normalize_rows(ad::mean_rows(taps[i]));
  return out;
}

inline Var infonce_loss(const Var& anchors, const Var& positives, double tau) {
  if (!(tau > 0.0)) throw ValidationError("infonce temperature must be > 0");
  if (anchors.shape() != positives.shape())
    throw ValidationError("infonce: anchors " + shape_str(anchors.shape()) + " vs positives " +
                          shape_str(positives.shape()));
  const std::size_t b = anchors.value().rows();
  std::vector<int> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = static_cast<int>(i);
  return ad::cross_entropy(ad::scale(ad::matmul_nt(anchors, positives), 1.0 / tau), diag, -1);
}

inline Var mse_align_loss(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ValidationError("mse_align_loss: shape mismatch");
  Var d = ad::sub(a, b);
  return ad::mean(ad::mul(d, d));
}

inline Var l1_align_loss(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ValidationError("l1_align_loss: shape mismatch");
  return ad::mean(ad::abs(ad::sub(a, b)));
}

inline Var alignment_loss(AlignLoss kind, const Var& sar, const Var& rgb, double tau) {
  switch (kind) {
    case AlignLoss::InfoNCE: return infonce_loss(sar, rgb, tau);
    case AlignLoss::MSE: return mse_align_loss(sar, rgb);
    case AlignLoss::L1: return l1_align_loss(sar, rgb);
  }
  throw ValidationError("unknown alignment loss");
}

/// Mean of the per-tap losses. Inputs are per-tap [B, d] pooled matrices.
inline Var multiscale_alignment_loss(const std::array<Var, 3>& sar, const std::array<Var, 3>& rgb,
                                     AlignLoss kind, double tau) {
  Var total = alignment_loss(kind, sar[0], rgb[0], tau);
  for (std::size_t i = 1; i < 3; ++i) total = ad::add(total, alignment_loss(kind, sar[i], rgb[i], tau));
  return ad::scale(total, 1.0 / 3.0);
}

/// Stacks per-sample pooled taps into per-tap [B, d] matrices.
inline std::array<Var, 3> stack_pooled(const std::vector<std::array<Var, 3>>& per_sample) {
  std::array<Var, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<Var> rows;
    for (const auto& s : per_sample) rows.push_back(s[i]);
    out[i] = ad::concat_rows(rows);
  }
  return out;
}

/// Groups trained by the alignment stage for a given target.
inline std::set<std::string> trainable_groups(CmuTarget target) {
  switch (target) {
    case CmuTarget::None: return {};
    case CmuTarget::Dense: return {group::kSarDense};
    case CmuTarget::Global: return {group::kGlobalSar};
    case CmuTarget::Both: return {group::kSarDense, group::kGlobalSar};
  }
  return {};
}

/// Alignment loss of one batch. Dense target: multiscale loss over the
/// pooled taps. Global target: the same loss kind on the global embeddings.
/// Both: the sum of the two.
inline Var batch_alignment_loss(const Model& model, const ParamScope& P,
                                const std::vector<data::PairedSample>& batch) {
  const RunConfig& cfg = model.config();
  if (cfg.cmu_target == CmuTarget::None)
    throw ValidationError("cmu_target is none: nothing to align");
  if (batch.empty()) throw ValidationError("empty alignment batch");
  Var total;
  if (cfg.cmu_target == CmuTarget::Dense || cfg.cmu_target == CmuTarget::Both) {
    std::vector<std::array<Var, 3>> sar, rgb;
    for (const auto& s : batch) {
      sar.push_back(pool_taps(model.encode_dense_sar(P, s.sar).taps));
      rgb.push_back(pool_taps(model.encode_dense_rgb(P, s.rgb).taps));
    }
    total = multiscale_alignment_loss(stack_pooled(sar), stack_pooled(rgb), cfg.cmu_loss, cfg.temperature);
  }
  if (model.uses_global_sar()) {
    std::vector<Var> sar, rgb;
    for (const auto& s : batch) {
      sar.push_back(model.encode_global_sar(P, s.sar).embedding);
      rgb.push_back(model.encode_global_rgb(P, s.rgb).embedding);
    }
    Var g = alignment_loss(cfg.cmu_loss, ad::concat_rows(sar), ad::concat_rows(rgb), cfg.temperature);
    total = total.valid() ? ad::add(total, g) : g;
  }
  return total;
}

/// Mean cosine of matched (same sample) and mismatched (different samples)
/// pooled SAR/RGB pairs, averaged over taps.
struct AlignmentGap {
  double matched = 0.0;
  double mismatched = 0.0;
  double gap() const { return matched - mismatched; }
};

inline AlignmentGap measure_alignment(const Model& model, const std::vector<data::PairedSample>& samples) {
  if (samples.size() < 2) throw ValidationError("alignment gap needs at least two samples");
  ad::Tape tape;
  ParamScope P(tape, model.params(), {});
  std::vector<std::array<Tensor, 3>> sar, rgb;
  for (const auto& s : samples) {
    auto ps = pool_taps(model.encode_dense_sar(P, s.sar).taps);
    auto pr = pool_taps(model.encode_dense_rgb(P, s.rgb).taps);
    sar.push_back({ps[0].value(), ps[1].value(), ps[2].value()});
    rgb.push_back({pr[0].value(), pr[1].value(), pr[2].value()});
  }
  double m = 0.0, mm = 0.0;
  std::size_t nm = 0, nmm = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = 0; j < samples.size(); ++j)
      for (std::size_t t = 0; t < 3; ++t) {
        double dot = 0.0;
        for (std::size_t k = 0; k < sar[i][t].size(); ++k) dot += sar[i][t][k] * rgb[j][t][k];
        if (i == j) {
          m += dot;
          ++nm;
        } else {
          mm += dot;
          ++nmm;
        }
      }
  return {m / static_cast<double>(nm), mm / static_cast<double>(nmm)};
}

}  // namespace ovseg::cmu
