// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Procedural paired scenes for desk-scale experiments.
//
// Each tile is a blocky Voronoi partition of a cell grid into class regions;
// seed classes are drawn at random, so tiles differ in which classes appear
// and in what proportion.
// RGB renders each class with its own colour and oriented stripe texture plus
// pixel noise. SAR is computed from the label geometry alone: a per-class
// backscatter level plus a bright response on region boundaries, so it
// carries class signal that does not depend on the optical channel.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ovseg/data/sample.hpp"
#include "ovseg/image_io.hpp"
#include "ovseg/manifest.hpp"
#include "ovseg/rng.hpp"

namespace ovseg::data {

struct ToySceneSpec {
  std::size_t num_classes = 3;
  std::size_t tile_size = 32;
  std::size_t samples = 16;
  /// Fraction of samples (taken from the end) assigned to the test split.
  double test_fraction = 0.25;
  std::size_t cell_size = 8;
  std::size_t patch_size = 4;
  std::string domain = "toy";
  /// Amplitude of per-pixel RGB noise.
  double rgb_noise = 0.06;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1 || num_classes > 254) throw ValidationError("toy num_classes must be in [1, 254]");
    if (samples == 0) throw ValidationError("toy dataset needs at least one sample");
    if (patch_size == 0 || tile_size < 2 * patch_size)
      throw ValidationError("tile size " + std::to_string(tile_size) +
                            " is smaller than twice the patch size " + std::to_string(patch_size));
    if (tile_size % patch_size != 0)
      throw ValidationError("tile size must be a multiple of the patch size");
    if (cell_size == 0 || tile_size % cell_size != 0)
      throw ValidationError("tile size must be a multiple of the cell size");
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0))
      throw ValidationError("test_fraction must lie in [0,1]");
  }

  std::size_t test_count() const {
    return static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(samples)));
  }
};

/// SAR backscatter level of class k among K, evenly spaced in [0.1, 0.9].
inline double toy_sar_level(std::size_t k, std::size_t num_classes) {
  if (num_classes == 1) return 0.5;
  return 0.1 + 0.8 * static_cast<double>(k) / static_cast<double>(num_classes - 1);
}

/// Base RGB colour of class k: hues spaced around the colour wheel at
/// moderate saturation and value.
inline std::array<double, 3> toy_class_color(std::size_t k, std::size_t num_classes) {
  const double hue = 6.0 * static_cast<double>(k) / static_cast<double>(num_classes);
  const double v = 0.65, s = 0.55;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0));
  const double m = v - c;
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& ch : rgb) ch += m;
  return rgb;
}

inline std::vector<int> toy_label_map(const ToySceneSpec& spec, Rng& rng) {
  const std::size_t g = spec.tile_size / spec.cell_size;
  const std::size_t cells = g * g;
  const std::size_t K = spec.num_classes;
  std::size_t seeds = std::min(cells, 2 + static_cast<std::size_t>(rng.below(K + 1)));
  // Distinct seed cells via a partial Fisher-Yates shuffle.
  std::vector<std::size_t> order(cells);
  for (std::size_t i = 0; i < cells; ++i) order[i] = i;
  for (std::size_t i = 0; i < seeds; ++i)
    std::swap(order[i], order[i + static_cast<std::size_t>(rng.below(cells - i))]);
  std::vector<int> seed_class(seeds);
  for (std::size_t i = 0; i < seeds; ++i)
    seed_class[i] = static_cast<int>(rng.below(K));
  std::vector<int> cell_class(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const double cy = static_cast<double>(c / g), cx = static_cast<double>(c % g);
    double best = 1e300;
    for (std::size_t s = 0; s < seeds; ++s) {
      const double sy = static_cast<double>(order[s] / g), sx = static_cast<double>(order[s] % g);
      const double d = (cy - sy) * (cy - sy) + (cx - sx) * (cx - sx);
      if (d < best) {
        best = d;
        cell_class[c] = seed_class[s];
      }
    }
  }
  const std::size_t n = spec.tile_size;
  std::vector<int> label(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      label[y * n + x] = cell_class[(y / spec.cell_size) * g + x / spec.cell_size];
  return label;
}

/// Deterministic tile number `index` of the toy dataset.
inline PairedSample make_toy_tile(const ToySceneSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {0x746f79ULL, index}));
  const std::size_t n = spec.tile_size, K = spec.num_classes;
  PairedSample s;
  s.domain = spec.domain;
  s.label = toy_label_map(spec, rng);
  s.rgb = Tensor({n, n, 3});
  s.sar = Tensor({n, n, 1});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t i = y * n + x;
      const auto k = static_cast<std::size_t>(s.label[i]);
      const auto base = toy_class_color(k, K);
      const double theta = M_PI * static_cast<double>(k) / static_cast<double>(K);
      const double freq = 2.0 * M_PI / (3.0 + static_cast<double>(k % 3));
      const double stripe =
          0.08 * std::sin(freq * (std::cos(theta) * static_cast<double>(x) +
                                  std::sin(theta) * static_cast<double>(y)));
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = base[c] + stripe + spec.rgb_noise * (2.0 * rng.uniform() - 1.0);
        s.rgb[i * 3 + c] = std::clamp(v, 0.0, 1.0);
      }
      bool edge = false;
      if (x > 0 && s.label[i - 1] != s.label[i]) edge = true;
      if (x + 1 < n && s.label[i + 1] != s.label[i]) edge = true;
      if (y > 0 && s.label[i - n] != s.label[i]) edge = true;
      if (y + 1 < n && s.label[i + n] != s.label[i]) edge = true;
      s.sar[i] = std::clamp(toy_sar_level(k, K) + (edge ? 0.1 : 0.0), 0.0, 1.0);
    }
  return s;
}

/// Writes `samples` tile triples under out_dir/tiles and returns the manifest
/// (also written to out_dir/manifest.json). Tiles are quantised to 8 bits.
inline DatasetManifest generate_toy_dataset(const ToySceneSpec& spec,
                                            const std::filesystem::path& out_dir) {
  spec.validate();
  DatasetManifest m;
  m.height = m.width = spec.tile_size;
  m.base_dir = out_dir;
  const std::size_t n_test = spec.test_count();
  for (std::size_t i = 0; i < spec.samples; ++i) {
    PairedSample s = make_toy_tile(spec, i);
    char stem[32];
    std::snprintf(stem, sizeof stem, "tiles/%04zu", i);
    ManifestEntry e;
    e.rgb = std::string(stem) + "_rgb.png";
    e.sar = std::string(stem) + "_sar.png";
    e.label = std::string(stem) + "_label.png";
    e.split = i + n_test >= spec.samples && n_test > 0 ? Split::Test : Split::Train;
    e.domain = spec.domain;
    io::write_png(out_dir / e.rgb, io::tensor_to_image(s.rgb));
    io::write_png(out_dir / e.sar, io::tensor_to_image(s.sar));
    io::write_png(out_dir / e.label, label_to_image(s.label, spec.tile_size, spec.tile_size, 255));
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace ovseg::data
