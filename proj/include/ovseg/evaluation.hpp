// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ovseg/image_io.hpp"
#include "ovseg/metrics.hpp"
#include "ovseg/training.hpp"

namespace ovseg::eval {

namespace fs = std::filesystem;
using metrics::IoUReport;

struct EvalOptions {
  Split split = Split::Test;
  std::string domain;            ///< empty: all domains of the split
  data::CloudParams clouds{};    ///< applied to every evaluated sample
  std::size_t heatmaps = 0;      ///< dump similarity maps of the first N samples
  fs::path heatmap_dir;
};

struct EvalResult {
  IoUReport report;
  metrics::ConfusionMatrix confusion{1};
  std::size_t samples = 0;
};

inline void write_heatmaps(const ForwardResult& r, const ClassVocabulary& vocab, std::size_t sample,
                           std::size_t out_h, std::size_t out_w, const fs::path& dir) {
  const Tensor& m = r.h_dt_refined[2].value();  // [N_c, h, w, 1]
  const std::size_t h = m.dim(1), w = m.dim(2);
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    io::Image8 img;
    img.height = out_h;
    img.width = out_w;
    img.channels = 1;
    img.pixels.resize(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        img.pixels[y * out_w + x] = io::to_u8(m[(c * h + y * h / out_h) * w + x * w / out_w]);
    char name[64];
    std::snprintf(name, sizeof name, "%04zu_%02zu.png", sample, c);
    io::write_png(dir / name, img);
  }
}

/// Forwards every sample of the split with z_T over the full vocabulary,
/// takes the per-pixel argmax and accumulates one dataset-wide confusion
/// matrix.
inline EvalResult run_evaluation(const Model& model, const DatasetManifest& manifest,
                                 const ClassVocabulary& vocab, const std::string& setting,
                                 const EvalOptions& opt = {}) {
  if (manifest.height != model.height() || manifest.width != model.width())
    throw ValidationError("manifest tile size does not match the model input size");
  const auto idx = manifest.indices(opt.split, opt.domain);
  if (idx.empty())
    throw ValidationError("evaluation split '" + to_string(opt.split) + "' is empty" +
                          (opt.domain.empty() ? std::string{} : " for domain '" + opt.domain + "'"));
  data::BatchStream stream(manifest, opt.split, idx.size(), 0, vocab, {}, opt.clouds, opt.domain);
  // BatchStream shuffles; order does not affect the confusion matrix.
  const auto batch = stream.batch(0);
  EvalResult res;
  res.confusion = metrics::ConfusionMatrix(vocab.size());
  ad::Tape text_tape;
  ParamScope Pt(text_tape, model.params(), {});
  const Tensor z_text = model.text_embeddings(Pt, vocab).value();
  if (opt.heatmaps > 0) fs::create_directories(opt.heatmap_dir);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ad::Tape tape;
    ParamScope P(tape, model.params(), {});
    ForwardResult r = model.forward(P, batch[i].rgb, batch[i].sar, tape.constant(z_text));
    res.confusion.update(argmax_rows(r.logits.value()), batch[i].label, vocab.ignore_index());
    if (i < opt.heatmaps) write_heatmaps(r, vocab, i, model.height(), model.width(), opt.heatmap_dir);
  }
  res.samples = batch.size();
  res.report = metrics::split_report(metrics::compute_iou(res.confusion), vocab, setting);
  return res;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : "n/a"; }

inline std::string per_class_csv(const std::vector<IoUReport>& reports) {
  std::string out = "setting,class,seen,iou\n";
  for (const auto& r : reports)
    for (std::size_t k = 0; k < r.classes.size(); ++k)
      out += r.setting + "," + r.classes[k] + "," + (r.seen[k] ? "1" : "0") + "," + fmt_opt(r.iou[k]) + "\n";
  return out;
}

inline std::string summary_csv(const std::vector<IoUReport>& reports) {
  std::string out = "setting,miou,seen_mean,unseen_mean\n";
  for (const auto& r : reports)
    out += r.setting + "," + fmt_double(r.miou) + "," + fmt_opt(r.seen_mean) + "," + fmt_opt(r.unseen_mean) + "\n";
  return out;
}

inline std::string fmt_fixed(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

/// Per-class IoU bar chart; seen classes blue, unseen orange, undefined
/// classes drawn as an empty outline.
inline std::string bar_chart_svg(const IoUReport& r) {
  const int bar = 36, gap = 12, left = 48, top = 40, plot_h = 200;
  const int width = left + static_cast<int>(r.classes.size()) * (bar + gap) + gap;
  const int height = top + plot_h + 70;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << xml_escape(r.setting)
    << " mIoU " << fmt_fixed(r.miou) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const int y = top + plot_h - t * plot_h / 4;
    s << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << width - gap << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt_fixed(t * 0.25)
      << "</text>\n";
  }
  for (std::size_t k = 0; k < r.classes.size(); ++k) {
    const int x = left + gap + static_cast<int>(k) * (bar + gap);
    const char* color = r.seen[k] ? "#4c72b0" : "#dd8452";
    if (r.iou[k]) {
      const int h = static_cast<int>(std::lround(*r.iou[k] * plot_h));
      s << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar << "\" height=\"" << h
        << "\" fill=\"" << color << "\"/>\n";
    } else {
      s << "<rect x=\"" << x << "\" y=\"" << top << "\" width=\"" << bar << "\" height=\"" << plot_h
        << "\" fill=\"none\" stroke=\"" << color << "\" stroke-dasharray=\"3,3\"/>\n";
    }
    s << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">"
      << xml_escape(r.classes[k]) << "</text>\n";
    s << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h + 30 << "\" text-anchor=\"middle\">"
      << (r.iou[k] ? fmt_fixed(*r.iou[k]) : std::string("n/a")) << "</text>\n";
  }
  const int ly = top + plot_h + 52;
  s << "<rect x=\"" << left << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"#4c72b0\"/>"
    << "<text x=\"" << left + 14 << "\" y=\"" << ly << "\">seen</text>\n";
  s << "<rect x=\"" << left + 60 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"#dd8452\"/>"
    << "<text x=\"" << left + 74 << "\" y=\"" << ly << "\">unseen</text>\n";
  s << "</svg>\n";
  return s.str();
}

inline std::string sanitize_filename(const std::string& s) {
  std::string o;
  for (char c : s) o += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return o.empty() ? "report" : o;
}

/// Writes per_class.csv and summary.csv covering all reports, and one
/// <setting>_iou.svg bar chart per report.
inline void emit_report(const std::vector<IoUReport>& reports, const fs::path& dir) {
  if (reports.empty()) throw ValidationError("emit_report needs at least one report");
  write_text(dir / "per_class.csv", per_class_csv(reports));
  write_text(dir / "summary.csv", summary_csv(reports));
  for (const auto& r : reports) write_text(dir / (sanitize_filename(r.setting) + "_iou.svg"), bar_chart_svg(r));
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::optional<double> parse_opt(const std::string& s) {
  if (s == "n/a") return std::nullopt;
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw ValidationError("bad number '" + s + "' in report");
  }
}

/// Reads back the reports written by emit_report.
inline std::vector<IoUReport> load_report(const fs::path& dir) {
  const auto pc = read_csv(dir / "per_class.csv");
  const auto sm = read_csv(dir / "summary.csv");
  if (pc.empty() || pc[0] != std::vector<std::string>{"setting", "class", "seen", "iou"})
    throw ValidationError("per_class.csv has an unexpected header");
  if (sm.empty() || sm[0] != std::vector<std::string>{"setting", "miou", "seen_mean", "unseen_mean"})
    throw ValidationError("summary.csv has an unexpected header");
  std::vector<IoUReport> out;
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 1; i < sm.size(); ++i) {
    if (sm[i].size() != 4) throw ValidationError("summary.csv row " + std::to_string(i) + " has wrong arity");
    IoUReport r;
    r.setting = sm[i][0];
    r.miou = *parse_opt(sm[i][1]);
    r.seen_mean = parse_opt(sm[i][2]);
    r.unseen_mean = parse_opt(sm[i][3]);
    pos[r.setting] = out.size();
    out.push_back(std::move(r));
  }
  for (std::size_t i = 1; i < pc.size(); ++i) {
    if (pc[i].size() != 4) throw ValidationError("per_class.csv row " + std::to_string(i) + " has wrong arity");
    auto it = pos.find(pc[i][0]);
    if (it == pos.end()) throw ValidationError("per_class.csv names unknown setting '" + pc[i][0] + "'");
    IoUReport& r = out[it->second];
    r.classes.push_back(pc[i][1]);
    r.seen.push_back(pc[i][2] == "1");
    r.iou.push_back(parse_opt(pc[i][3]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationVariant {
  std::string grid;  ///< components | loss | target
  std::string name;
  RunConfig config;
};

/// Component grid: full (alignment + dual fusion), w/o CMU (no alignment,
/// SAR encoder left at its random initialisation), w/o CMU&DEF (no SAR
/// branch, f_d from RGB only).
inline std::vector<AblationVariant> component_variants(const RunConfig& base) {
  RunConfig full = base, no_cmu = base, no_both = base;
  full.fusion = Fusion::Dual;
  if (full.cmu_target == CmuTarget::None) full.cmu_target = CmuTarget::Dense;
  no_cmu.cmu_target = CmuTarget::None;
  no_cmu.fusion = Fusion::Dual;
  no_both.cmu_target = CmuTarget::None;
  no_both.fusion = Fusion::RgbOnly;
  return {{"components", "full", full}, {"components", "w/o CMU", no_cmu}, {"components", "w/o CMU&DEF", no_both}};
}

inline std::vector<AblationVariant> loss_variants(const RunConfig& base) {
  std::vector<AblationVariant> out;
  for (AlignLoss l : {AlignLoss::InfoNCE, AlignLoss::MSE, AlignLoss::L1}) {
    RunConfig c = base;
    c.cmu_loss = l;
    c.fusion = Fusion::Dual;
    if (c.cmu_target == CmuTarget::None) c.cmu_target = CmuTarget::Dense;
    out.push_back({"loss", to_string(l), c});
  }
  return out;
}

inline std::vector<AblationVariant> target_variants(const RunConfig& base) {
  std::vector<AblationVariant> out;
  for (CmuTarget t : {CmuTarget::None, CmuTarget::Dense, CmuTarget::Global, CmuTarget::Both}) {
    RunConfig c = base;
    c.cmu_target = t;
    c.fusion = Fusion::Dual;
    out.push_back({"target", to_string(t), c});
  }
  return out;
}

inline std::vector<AblationVariant> ablation_grid(const RunConfig& base, const std::string& grid) {
  if (grid == "components") return component_variants(base);
  if (grid == "loss") return loss_variants(base);
  if (grid == "target") return target_variants(base);
  throw ValidationError("unknown ablation grid '" + grid + "' (expected components|loss|target)");
}

struct AblationRow {
  std::string grid;
  std::string variant;
  std::uint64_t seed;
  IoUReport report;
};

/// Trains and evaluates one variant: alignment on `cmu_manifest` when the
/// variant aligns, then the full stage and evaluation on `manifest`.
inline IoUReport train_and_evaluate(const RunConfig& cfg, const DatasetManifest& manifest,
                                    const DatasetManifest& cmu_manifest, const std::string& setting) {
  TrainState s = cfg.cmu_target == CmuTarget::None
                     ? run_stage2_full(cfg, manifest)
                     : [&] {
                         TrainState s1 = run_stage1_cmu(cfg, cmu_manifest);
                         const Checkpoint ck = to_checkpoint(s1);
                         return run_stage2_full(cfg, manifest, {}, &ck);
                       }();
  EvalOptions eo;
  eo.domain = cfg.test_domain;
  eo.clouds = test_clouds(cfg);
  return run_evaluation(s.model, manifest, cfg.vocabulary(), setting, eo).report;
}

inline std::vector<AblationRow> run_ablation_matrix(
    const std::vector<AblationVariant>& variants, const DatasetManifest& manifest,
    const DatasetManifest& cmu_manifest, const std::vector<std::uint64_t>& seeds,
    const std::function<void(const AblationRow&)>& on_row = {}) {
  if (variants.empty() || seeds.empty()) throw ValidationError("ablation needs variants and seeds");
  std::vector<AblationRow> rows;
  for (const auto& v : variants)
    for (std::uint64_t seed : seeds) {
      RunConfig c = v.config;
      c.seed = seed;
      c.augment.seed = derive_seed(seed, {0x61756775ULL});
      c.validate();
      AblationRow row{v.grid, v.name, seed,
                      train_and_evaluate(c, manifest, cmu_manifest, v.grid + ":" + v.name + ":s" + std::to_string(seed))};
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  return rows;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median mIoU per (grid, variant), in first-seen order.
inline std::vector<std::pair<std::string, double>> median_by_variant(const std::vector<AblationRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> vals;
  for (const auto& r : rows) {
    const std::string key = r.grid + ":" + r.variant;
    if (!vals.count(key)) order.push_back(key);
    vals[key].push_back(r.report.miou);
  }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& k : order) out.emplace_back(k, median(vals[k]));
  return out;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "grid,variant,seed,miou,seen_mean,unseen_mean\n";
  for (const auto& r : rows)
    out += r.grid + "," + r.variant + "," + std::to_string(r.seed) + "," + fmt_double(r.report.miou) + "," +
           fmt_opt(r.report.seen_mean) + "," + fmt_opt(r.report.unseen_mean) + "\n";
  return out;
}

inline std::string ablation_median_csv(const std::vector<AblationRow>& rows) {
  std::string out = "grid,variant,median_miou\n";
  for (const auto& [key, m] : median_by_variant(rows)) {
    const auto c = key.find(':');
    out += key.substr(0, c) + "," + key.substr(c + 1) + "," + fmt_double(m) + "\n";
  }
  return out;
}

}  // namespace ovseg::eval
