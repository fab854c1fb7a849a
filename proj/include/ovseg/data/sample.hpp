// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "ovseg/image_io.hpp"
#include "ovseg/manifest.hpp"
#include "ovseg/tensor.hpp"
#include "ovseg/vocab.hpp"

namespace ovseg::data {

/// Co-registered optical/SAR/label triple. rgb is [H,W,3], sar is [H,W,1],
/// both in [0,1]; label holds H*W class indices or the ignore index.
struct PairedSample {
  Tensor rgb;
  Tensor sar;
  std::vector<int> label;
  std::string domain;

  std::size_t height() const { return rgb.dim(0); }
  std::size_t width() const { return rgb.dim(1); }

  void validate(const ClassVocabulary& vocab) const {
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ValidationError("rgb must be HxWx3");
    if (sar.rank() != 3 || sar.dim(2) != 1) throw ValidationError("sar must be HxWx1");
    if (sar.dim(0) != height() || sar.dim(1) != width() || label.size() != height() * width())
      throw ValidationError("rgb, sar and label must share spatial dimensions");
    for (int v : label)
      if (!vocab.is_valid_label(v))
        throw ValidationError("label value " + std::to_string(v) + " is outside the " +
                              std::to_string(vocab.size()) + "-class vocabulary");
  }
};

inline PairedSample load_paired_sample(const DatasetManifest& manifest, std::size_t index,
                                       const ClassVocabulary& vocab) {
  const ManifestEntry& e = manifest.entries.at(index);
  const std::string where = "manifest entry " + std::to_string(index) + ": ";
  auto rgb = io::read_png(manifest.resolve(e.rgb));
  auto sar = io::read_png(manifest.resolve(e.sar));
  auto lab = io::read_png(manifest.resolve(e.label));
  if (rgb.channels != 3)
    throw ValidationError(where + "rgb tile has " + std::to_string(rgb.channels) +
                          " channels, expected 3");
  if (sar.channels != 1)
    throw ValidationError(where + "sar tile has " + std::to_string(sar.channels) +
                          " channels, expected 1");
  if (lab.channels != 1)
    throw ValidationError(where + "label tile has " + std::to_string(lab.channels) +
                          " channels, expected 1");
  PairedSample s;
  s.rgb = io::image_to_tensor(rgb);
  s.sar = io::image_to_tensor(sar);
  s.domain = e.domain;
  s.label.resize(lab.pixels.size());
  for (std::size_t i = 0; i < lab.pixels.size(); ++i) {
    int v = lab.pixels[i];
    s.label[i] = v == 255 ? vocab.ignore_index() : v;
  }
  try {
    s.validate(vocab);
  } catch (const ValidationError& ex) {
    throw ValidationError(where + ex.what());
  }
  return s;
}

inline io::Image8 label_to_image(const std::vector<int>& label, std::size_t h, std::size_t w,
                                 int ignore_index) {
  io::Image8 img{h, w, 1, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < label.size(); ++i)
    img.pixels[i] = label[i] == ignore_index ? 255 : static_cast<std::uint8_t>(label[i]);
  return img;
}

}  // namespace ovseg::data
