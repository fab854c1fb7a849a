// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ovseg/tensor.hpp"
#include "ovseg/vocab.hpp"

namespace ovseg::metrics {

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : n_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw ValidationError("confusion matrix needs at least one class");
  }

  std::size_t num_classes() const { return n_; }
  std::uint64_t operator()(std::size_t gt, std::size_t pred) const { return counts_[gt * n_ + pred]; }
  std::uint64_t& operator()(std::size_t gt, std::size_t pred) { return counts_[gt * n_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::uint64_t row_sum(std::size_t k) const {
    std::uint64_t t = 0;
    for (std::size_t j = 0; j < n_; ++j) t += (*this)(k, j);
    return t;
  }
  std::uint64_t col_sum(std::size_t k) const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += (*this)(i, k);
    return t;
  }

  /// Adds one prediction/label map pair. Pixels whose label is `ignore` are
  /// skipped.
  void update(const std::vector<int>& pred, const std::vector<int>& gt, int ignore) {
    if (pred.size() != gt.size())
      throw ValidationError("confusion update: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(gt.size()) + " labels");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      if (gt[i] < 0 || static_cast<std::size_t>(gt[i]) >= n_)
        throw ValidationError("confusion update: label " + std::to_string(gt[i]) + " at pixel " +
                              std::to_string(i) + " is not a class index");
      if (pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= n_)
        throw ValidationError("confusion update: prediction " + std::to_string(pred[i]) +
                              " at pixel " + std::to_string(i) + " is not a class index");
      ++counts_[static_cast<std::size_t>(gt[i]) * n_ + static_cast<std::size_t>(pred[i])];
    }
  }

  void merge(const ConfusionMatrix& o) {
    if (o.n_ != n_) throw ValidationError("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct IoUResult {
  std::vector<std::optional<double>> iou;  ///< empty where the union is zero
  double miou = 0.0;
};

/// IoU_k = cm[k][k] / (row_k + col_k - cm[k][k]); zero-union classes are
/// undefined and left out of the mean.
inline IoUResult compute_iou(const ConfusionMatrix& cm) {
  IoUResult r;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    const std::uint64_t tp = cm(k, k);
    const std::uint64_t uni = cm.row_sum(k) + cm.col_sum(k) - tp;
    if (uni == 0) {
      r.iou.emplace_back();
      continue;
    }
    const double v = static_cast<double>(tp) / static_cast<double>(uni);
    r.iou.emplace_back(v);
    sum += v;
    ++defined;
  }
  if (defined == 0) throw ValidationError("compute_iou: no class has any pixel in ground truth or prediction");
  r.miou = sum / static_cast<double>(defined);
  return r;
}

struct IoUReport {
  std::string setting;
  std::vector<std::string> classes;
  std::vector<bool> seen;
  std::vector<std::optional<double>> iou;
  double miou = 0.0;
  std::optional<double> seen_mean;
  std::optional<double> unseen_mean;
};

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& iou,
                                     const std::vector<bool>& seen, bool want_seen) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < iou.size(); ++k)
    if (seen[k] == want_seen && iou[k]) {
      s += *iou[k];
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

/// Attaches class names and seen/unseen means to per-class IoUs.
inline IoUReport split_report(const IoUResult& r, const ClassVocabulary& vocab, std::string setting) {
  if (r.iou.size() != vocab.size())
    throw ValidationError("split_report: " + std::to_string(r.iou.size()) + " IoUs for " +
                          std::to_string(vocab.size()) + " classes");
  IoUReport rep;
  rep.setting = std::move(setting);
  for (std::size_t k = 0; k < vocab.size(); ++k) {
    rep.classes.push_back(vocab.name(k));
    rep.seen.push_back(vocab.seen(k));
  }
  rep.iou = r.iou;
  rep.miou = r.miou;
  rep.seen_mean = mean_of(rep.iou, rep.seen, true);
  rep.unseen_mean = mean_of(rep.iou, rep.seen, false);
  return rep;
}

/// Published per-setting mIoU (percent) of the reference method over the six
/// evaluation settings, kept for side-by-side report layout.
struct ReferenceRow {
  std::string method;
  std::array<double, 6> settings;
  double mean;
};

inline const std::array<std::string, 6>& reference_setting_names() {
  static const std::array<std::string, 6> names{
      "PIE-cloud->PIE-cloud", "DDHR-SK->DDHR-SK", "OEM-thick->OEM-thick",
      "OEM-thin->OEM-thin",   "PIE-clean->PIE-clean", "DDHR-SK->DDHR-CH"};
  return names;
}

inline ReferenceRow reference_row() {
  return {"reference", {57.7, 73.1, 36.6, 40.2, 59.7, 42.6}, 51.7};
}

}  // namespace ovseg::metrics
