// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "ovseg/data/sample.hpp"
#include "ovseg/rng.hpp"

namespace ovseg::data {

struct AugmentParams {
  double translate_px = 0.0;  ///< max |shift| per axis
  bool hflip = false;         ///< flip with probability 1/2 when enabled
  bool vflip = false;
  double scale_min = 1.0;
  double scale_max = 1.0;
  double rotate_deg = 0.0;    ///< max |angle|
  std::uint64_t seed = 0;

  void validate() const {
    if (!(translate_px >= 0.0)) throw ValidationError("augment translate_px must be >= 0");
    if (!(rotate_deg >= 0.0)) throw ValidationError("augment rotate_deg must be >= 0");
    if (!(scale_min > 0.0) || !(scale_max > 0.0))
      throw ValidationError("augment scale range must be positive");
    if (scale_min > scale_max) throw ValidationError("augment scale_min exceeds scale_max");
  }

  bool is_identity() const {
    return translate_px == 0.0 && !hflip && !vflip && scale_min == 1.0 && scale_max == 1.0 &&
           rotate_deg == 0.0;
  }
};

/// One concrete transform. Forward map about the tile centre: flip, then
/// scale, then rotate (positive angles turn clockwise on screen, y down),
/// then translate.
struct GeometricTransform {
  bool hflip = false;
  bool vflip = false;
  double scale = 1.0;
  double angle_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
};

inline GeometricTransform sample_transform(const AugmentParams& p, Rng& rng) {
  GeometricTransform t;
  t.hflip = p.hflip && rng.coin();
  t.vflip = p.vflip && rng.coin();
  t.scale = p.scale_min == p.scale_max ? p.scale_min : rng.uniform(p.scale_min, p.scale_max);
  t.angle_deg = p.rotate_deg > 0 ? rng.uniform(-p.rotate_deg, p.rotate_deg) : 0.0;
  t.tx = p.translate_px > 0 ? rng.uniform(-p.translate_px, p.translate_px) : 0.0;
  t.ty = p.translate_px > 0 ? rng.uniform(-p.translate_px, p.translate_px) : 0.0;
  return t;
}

namespace detail {

/// Source pixel coordinate (continuous index) for output pixel (x, y).
inline std::pair<double, double> source_coord(const GeometricTransform& t, std::size_t x,
                                              std::size_t y, std::size_t w, std::size_t h) {
  const double cx = static_cast<double>(w) / 2.0, cy = static_cast<double>(h) / 2.0;
  double px = static_cast<double>(x) + 0.5 - cx - t.tx;
  double py = static_cast<double>(y) + 0.5 - cy - t.ty;
  const double a = t.angle_deg * M_PI / 180.0;
  double c = std::cos(a), s = std::sin(a);
  // Snap exact quarter turns so that right-angle rotations are exact permutations.
  if (std::fabs(c) < 1e-12) c = 0.0;
  if (std::fabs(s) < 1e-12) s = 0.0;
  double sx = (c * px + s * py) / t.scale;
  double sy = (-s * px + c * py) / t.scale;
  if (t.hflip) sx = -sx;
  if (t.vflip) sy = -sy;
  return {sx + cx - 0.5, sy + cy - 0.5};
}

inline bool in_frame(double v, std::size_t n) {
  return v >= -0.5 && v <= static_cast<double>(n) - 0.5;
}

inline void bilinear_into(const Tensor& src, double sx, double sy, double* out) {
  const std::size_t h = src.dim(0), w = src.dim(1), ch = src.dim(2);
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
  for (std::size_t c = 0; c < ch; ++c) {
    double v00 = src[(y0 * w + x0) * ch + c], v01 = src[(y0 * w + x1) * ch + c];
    double v10 = src[(y1 * w + x0) * ch + c], v11 = src[(y1 * w + x1) * ch + c];
    double top = fx == 0.0 ? v00 : (1 - fx) * v00 + fx * v01;
    double bot = fx == 0.0 ? v10 : (1 - fx) * v10 + fx * v11;
    out[c] = fy == 0.0 ? top : (1 - fy) * top + fy * bot;
  }
}

}  // namespace detail

/// Applies one transform to all three rasters: bilinear for rgb and sar,
/// nearest-neighbour for labels. Pixels mapped from outside the frame become
/// 0 (intensities) or the ignore index (labels).
inline PairedSample apply_transform(const PairedSample& s, const GeometricTransform& t,
                                    int ignore_index) {
  const std::size_t h = s.height(), w = s.width();
  PairedSample out = s;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto [sx, sy] = detail::source_coord(t, x, y, w, h);
      const std::size_t i = y * w + x;
      if (!detail::in_frame(sx, w) || !detail::in_frame(sy, h)) {
        for (std::size_t c = 0; c < 3; ++c) out.rgb[i * 3 + c] = 0.0;
        out.sar[i] = 0.0;
        out.label[i] = ignore_index;
        continue;
      }
      detail::bilinear_into(s.rgb, sx, sy, out.rgb.data() + i * 3);
      detail::bilinear_into(s.sar, sx, sy, out.sar.data() + i);
      const auto nx = std::min<long>(std::max<long>(std::lround(sx), 0), static_cast<long>(w) - 1);
      const auto ny = std::min<long>(std::max<long>(std::lround(sy), 0), static_cast<long>(h) - 1);
      out.label[i] = s.label[static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx)];
    }
  return out;
}

inline PairedSample apply_paired_augmentation(const PairedSample& s, const AugmentParams& p,
                                              int ignore_index) {
  p.validate();
  if (p.is_identity()) return s;
  Rng rng(p.seed);
  return apply_transform(s, sample_transform(p, rng), ignore_index);
}

}  // namespace ovseg::data
