// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Synthetic cloud contamination of the optical channel.
//
// The opacity field is multi-octave bilinear value noise: octave o uses a
// lattice of period base_period / 2^o with amplitude 2^-o. The sum is
// stretched to [0, 1] per tile and scaled by alpha_max, then composited as
//   rgb' = alpha * cloud_color + (1 - alpha) * rgb.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "ovseg/data/sample.hpp"
#include "ovseg/rng.hpp"

namespace ovseg::data {

enum class CloudProfile { None, Thin, Thick, Varied };

inline std::string to_string(CloudProfile p) {
  switch (p) {
    case CloudProfile::None: return "none";
    case CloudProfile::Thin: return "thin";
    case CloudProfile::Thick: return "thick";
    case CloudProfile::Varied: return "varied";
  }
  return "none";
}

inline CloudProfile parse_cloud_profile(const std::string& s) {
  if (s == "none") return CloudProfile::None;
  if (s == "thin") return CloudProfile::Thin;
  if (s == "thick") return CloudProfile::Thick;
  if (s == "varied") return CloudProfile::Varied;
  throw ValidationError("unknown cloud profile '" + s + "' (expected none|thin|thick|varied)");
}

struct CloudParams {
  static constexpr double kThinMax = 0.4;
  static constexpr double kThickMin = 0.7;
  static constexpr double kVariedLo = 0.2;
  static constexpr double kVariedHi = 0.95;

  CloudProfile profile = CloudProfile::None;
  /// Ignored for the varied profile, which draws it per sample.
  double alpha_max = 0.0;
  int noise_octaves = 4;
  double noise_base_period = 16.0;
  std::array<double, 3> cloud_color{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;

  static CloudParams preset(CloudProfile p, std::uint64_t seed = 0) {
    CloudParams c;
    c.profile = p;
    c.seed = seed;
    switch (p) {
      case CloudProfile::None: c.alpha_max = 0.0; break;
      case CloudProfile::Thin: c.alpha_max = 0.35; break;
      case CloudProfile::Thick: c.alpha_max = 0.9; break;
      case CloudProfile::Varied: c.alpha_max = kVariedHi; break;
    }
    return c;
  }

  void validate() const {
    if (noise_octaves < 1) throw ValidationError("cloud noise_octaves must be >= 1");
    if (!(noise_base_period >= 1.0)) throw ValidationError("cloud noise_base_period must be >= 1");
    for (double c : cloud_color)
      if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("cloud_color components must lie in [0,1]");
    if (profile == CloudProfile::Varied) return;
    if (!(alpha_max >= 0.0 && alpha_max <= 1.0))
      throw ValidationError("cloud alpha_max must lie in [0,1]");
    if (profile == CloudProfile::Thin && alpha_max > kThinMax)
      throw ValidationError("thin clouds require alpha_max <= 0.4");
    if (profile == CloudProfile::Thick && alpha_max < kThickMin)
      throw ValidationError("thick clouds require alpha_max >= 0.7");
  }

  /// Opacity ceiling actually used for this parameter set.
  double effective_alpha_max() const {
    if (profile == CloudProfile::None) return 0.0;
    if (profile == CloudProfile::Varied) {
      Rng rng(derive_seed(seed, {0x7661726965ULL}));
      return rng.uniform(kVariedLo, kVariedHi);
    }
    return alpha_max;
  }

  /// Same parameters re-seeded for one sample of a dataset.
  CloudParams for_sample(std::uint64_t sample_key) const {
    CloudParams c = *this;
    c.seed = derive_seed(seed, {sample_key});
    return c;
  }
};

/// Normalised multi-octave value noise in [0, 1], shape [H, W].
inline Tensor value_noise(std::size_t h, std::size_t w, int octaves, double base_period,
                          std::uint64_t seed) {
  Tensor acc({h, w});
  for (int o = 0; o < octaves; ++o) {
    const double period = std::max(1.0, base_period / std::pow(2.0, o));
    const double amp = std::pow(0.5, o);
    const auto gh = static_cast<std::size_t>(std::ceil(static_cast<double>(h) / period)) + 2;
    const auto gw = static_cast<std::size_t>(std::ceil(static_cast<double>(w) / period)) + 2;
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(o)}));
    std::vector<double> lattice(gh * gw);
    for (auto& v : lattice) v = rng.uniform();
    for (std::size_t y = 0; y < h; ++y) {
      const double fy = (static_cast<double>(y) + 0.5) / period;
      const auto y0 = static_cast<std::size_t>(fy);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) / period;
        const auto x0 = static_cast<std::size_t>(fx);
        const double tx = fx - static_cast<double>(x0);
        const double v00 = lattice[y0 * gw + x0], v01 = lattice[y0 * gw + x0 + 1];
        const double v10 = lattice[(y0 + 1) * gw + x0], v11 = lattice[(y0 + 1) * gw + x0 + 1];
        acc[y * w + x] += amp * ((1 - ty) * ((1 - tx) * v00 + tx * v01) +
                                 ty * ((1 - tx) * v10 + tx * v11));
      }
    }
  }
  const auto [lo, hi] = std::minmax_element(acc.storage().begin(), acc.storage().end());
  const double mn = *lo, span = *hi - *lo;
  for (auto& v : acc.values()) v = span > 0 ? (v - mn) / span : 0.0;
  return acc;
}

/// Opacity field [H, W], every value in [0, effective_alpha_max()].
inline Tensor cloud_alpha(std::size_t h, std::size_t w, const CloudParams& params) {
  params.validate();
  const double amax = params.effective_alpha_max();
  if (amax <= 0.0) return Tensor({h, w}, 0.0);
  Tensor a = value_noise(h, w, params.noise_octaves, params.noise_base_period, params.seed);
  for (auto& v : a.values()) v = std::clamp(v * amax, 0.0, amax);
  return a;
}

/// rgb' = alpha * color + (1 - alpha) * rgb; sar and label are copied as-is.
inline PairedSample composite_clouds(const PairedSample& sample, const Tensor& alpha,
                                     const std::array<double, 3>& color) {
  PairedSample out = sample;
  const std::size_t n = sample.height() * sample.width();
  if (alpha.size() != n) throw ValidationError("cloud alpha field does not match the tile size");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = alpha[i] * color[c] + (1.0 - alpha[i]) * sample.rgb[i * 3 + c];
      out.rgb[i * 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  return out;
}

inline PairedSample synthesize_clouds(const PairedSample& sample, const CloudParams& params) {
  params.validate();
  if (params.profile == CloudProfile::None) return sample;
  return composite_clouds(sample, cloud_alpha(sample.height(), sample.width(), params),
                          params.cloud_color);
}

}  // namespace ovseg::data
