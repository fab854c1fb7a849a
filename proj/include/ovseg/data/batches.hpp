// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ovseg/data/augment.hpp"
#include "ovseg/data/clouds.hpp"
#include "ovseg/data/sample.hpp"
#include "ovseg/manifest.hpp"
#include "ovseg/rng.hpp"

namespace ovseg::data {

/// Writes a cloud-contaminated copy of a dataset: rgb tiles are composited,
/// sar and label tiles are copied byte-for-byte. With profile none the rgb
/// files are copied unchanged as well.
inline DatasetManifest bake_clouds(const DatasetManifest& in, const CloudParams& params,
                                   const std::filesystem::path& out_dir) {
  params.validate();
  namespace fs = std::filesystem;
  DatasetManifest out;
  out.height = in.height;
  out.width = in.width;
  out.base_dir = out_dir;
  fs::create_directories(out_dir / "tiles");
  auto copy = [](const fs::path& from, const fs::path& to) {
    fs::copy_file(from, to, fs::copy_options::overwrite_existing);
  };
  for (std::size_t i = 0; i < in.entries.size(); ++i) {
    const ManifestEntry& e = in.entries[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "tiles/%04zu", i);
    ManifestEntry o = e;
    o.rgb = std::string(stem) + "_rgb.png";
    o.sar = std::string(stem) + "_sar.png";
    o.label = std::string(stem) + "_label.png";
    if (params.profile == CloudProfile::None) {
      copy(in.resolve(e.rgb), out_dir / o.rgb);
    } else {
      auto img = io::read_png(in.resolve(e.rgb));
      if (img.channels != 3)
        throw ValidationError("manifest entry " + std::to_string(i) + ": rgb tile is not 3-channel");
      PairedSample s;
      s.rgb = io::image_to_tensor(img);
      Tensor alpha = cloud_alpha(img.height, img.width, params.for_sample(i));
      s.sar = Tensor({img.height, img.width, 1});
      s.label.assign(img.height * img.width, 0);
      io::write_png(out_dir / o.rgb,
                    io::tensor_to_image(composite_clouds(s, alpha, params.cloud_color).rgb));
    }
    copy(in.resolve(e.sar), out_dir / o.sar);
    copy(in.resolve(e.label), out_dir / o.label);
    out.entries.push_back(std::move(o));
  }
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

/// Seeded mini-batch stream over one split. Batch contents are a pure
/// function of (seed, global batch number), so a run resumed at any step
/// sees the same batches as an uninterrupted one.
class BatchStream {
 public:
  BatchStream(const DatasetManifest& manifest, Split split, std::size_t batch_size,
              std::uint64_t seed, const ClassVocabulary& vocab, AugmentParams augment = {},
              CloudParams cloud = {}, const std::string& domain = {})
      : split_(split),
        batch_size_(batch_size),
        seed_(seed),
        augment_(augment),
        cloud_(cloud),
        ignore_(vocab.ignore_index()) {
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    augment_.validate();
    cloud_.validate();
    indices_ = manifest.indices(split, domain);
    if (indices_.empty())
      throw ValidationError("split '" + to_string(split) + "' is empty" +
                            (domain.empty() ? std::string{} : " for domain '" + domain + "'"));
    for (std::size_t idx : indices_) samples_.push_back(load_paired_sample(manifest, idx, vocab));
  }

  std::size_t size() const { return indices_.size(); }
  std::size_t batches_per_epoch() const { return (size() + batch_size_ - 1) / batch_size_; }

  /// Positions (into this split) of the samples in global batch `b`.
  std::vector<std::size_t> batch_positions(std::size_t b) const {
    const std::size_t per_epoch = batches_per_epoch();
    const std::size_t epoch = b / per_epoch, within = b % per_epoch;
    std::vector<std::size_t> perm(size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed_, {0x7368756666ULL, epoch}));
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.below(i))]);
    const std::size_t lo = within * batch_size_;
    const std::size_t hi = std::min(lo + batch_size_, size());
    return {perm.begin() + static_cast<std::ptrdiff_t>(lo),
            perm.begin() + static_cast<std::ptrdiff_t>(hi)};
  }

  /// Manifest indices of the samples in global batch `b`.
  std::vector<std::size_t> batch_indices(std::size_t b) const {
    std::vector<std::size_t> out;
    for (std::size_t p : batch_positions(b)) out.push_back(indices_[p]);
    return out;
  }

  std::vector<PairedSample> batch(std::size_t b) const {
    const std::size_t epoch = b / batches_per_epoch();
    std::vector<PairedSample> out;
    for (std::size_t p : batch_positions(b)) {
      const std::size_t idx = indices_[p];
      PairedSample s = samples_[p];
      if (cloud_.profile != CloudProfile::None)
        s = synthesize_clouds(s, cloud_.for_sample(derive_seed(idx, {epoch})));
      if (split_ == Split::Train && !augment_.is_identity()) {
        AugmentParams a = augment_;
        a.seed = derive_seed(augment_.seed, {idx, epoch});
        s = apply_paired_augmentation(s, a, ignore_);
      }
      out.push_back(std::move(s));
    }
    return out;
  }

  /// The loaded samples of this split without clouds or augmentation.
  const std::vector<PairedSample>& samples() const { return samples_; }
  const std::vector<std::size_t>& indices() const { return indices_; }

 private:
  Split split_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  AugmentParams augment_;
  CloudParams cloud_;
  int ignore_;
  std::vector<std::size_t> indices_;
  std::vector<PairedSample> samples_;
};

}  // namespace ovseg::data
