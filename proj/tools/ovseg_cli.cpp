// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// ovseg command-line entry point.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ovseg/ovseg.hpp"

namespace fs = std::filesystem;
using namespace ovseg;

namespace {

fs::path default_out(const std::string& sub) {
  const char* root = std::getenv("OVSEG_OUT");
  return fs::path(root && *root ? root : "runs") / sub;
}

struct ConfigArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string seed;

  void add_to(CLI::App* app) {
    app->add_option("-c,--config", config, "Run configuration JSON");
    app->add_option("--set", sets, "Override a config key, e.g. --set optimizer.stage2_lr=1e-3 (repeatable)");
    app->add_option("--seed", seed, "Shorthand for --set seed=<n>");
  }

  RunConfig resolve() const {
    std::vector<std::string> all = sets;
    if (!seed.empty()) all.push_back("seed=" + seed);
    return load_config(config, all);
  }
};

void write_config_snapshot(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
}

DatasetManifest manifest_for(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("no ") + what + " given (set it in the config or with --set)");
  return load_manifest(path);
}

RunOptions run_options(const fs::path& out, std::size_t every, bool allow_mismatch, bool quiet) {
  RunOptions o;
  o.out_dir = out;
  o.checkpoint_every = every;
  o.allow_config_mismatch = allow_mismatch;
  if (!quiet)
    o.on_step = [](const std::string& stage, std::size_t it, double loss) {
      if (it % 50 == 0) std::cout << stage << " iter " << it << " loss " << fmt_double(loss) << "\n";
    };
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paired optical/SAR open-vocabulary segmentation at desk scale"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // toygen
  auto* toygen = app.add_subcommand("toygen", "Generate a procedural paired toy dataset");
  data::ToySceneSpec toy;
  std::string toy_out;
  toygen->add_option("-o,--out", toy_out, "Output directory");
  toygen->add_option("-k,--classes", toy.num_classes, "Number of classes")->capture_default_str();
  toygen->add_option("-n,--samples", toy.samples, "Number of tiles")->capture_default_str();
  toygen->add_option("--tile", toy.tile_size, "Tile size in pixels")->capture_default_str();
  toygen->add_option("--cell", toy.cell_size, "Region cell size in pixels")->capture_default_str();
  toygen->add_option("--patch", toy.patch_size, "Encoder patch size the tiles must support")->capture_default_str();
  toygen->add_option("--test-fraction", toy.test_fraction, "Fraction of tiles in the test split")->capture_default_str();
  toygen->add_option("--domain", toy.domain, "Domain tag")->capture_default_str();
  toygen->add_option("--noise", toy.rgb_noise, "RGB noise amplitude")->capture_default_str();
  toygen->add_option("--seed", toy.seed, "Seed")->capture_default_str();

  // cloudgen
  auto* cloudgen = app.add_subcommand("cloudgen", "Bake synthetic clouds into a copy of a dataset");
  std::string cg_manifest, cg_out, cg_profile = "thick";
  double cg_alpha = -1.0;
  data::CloudParams cg;
  cloudgen->add_option("-m,--manifest", cg_manifest, "Input manifest")->required();
  cloudgen->add_option("-o,--out", cg_out, "Output directory");
  cloudgen->add_option("--profile", cg_profile, "none|thin|thick|varied")->capture_default_str();
  cloudgen->add_option("--alpha-max", cg_alpha, "Opacity ceiling (default: profile preset)");
  cloudgen->add_option("--octaves", cg.noise_octaves, "Noise octaves")->capture_default_str();
  cloudgen->add_option("--period", cg.noise_base_period, "Base noise period in pixels")->capture_default_str();
  cloudgen->add_option("--seed", cg.seed, "Seed")->capture_default_str();

  // cmu-train
  auto* cmu_cmd = app.add_subcommand("cmu-train", "Stage 1: align the SAR encoder(s) to the frozen RGB encoder");
  ConfigArgs cmu_cfg;
  cmu_cfg.add_to(cmu_cmd);
  std::string cmu_out, cmu_resume;
  std::size_t cmu_every = 0;
  bool cmu_allow = false, cmu_quiet = false;
  cmu_cmd->add_option("-o,--out", cmu_out, "Run directory");
  cmu_cmd->add_option("--resume", cmu_resume, "Continue from a stage-1 checkpoint");
  cmu_cmd->add_option("--checkpoint-every", cmu_every, "Also checkpoint every N steps");
  cmu_cmd->add_flag("--allow-config-mismatch", cmu_allow, "Load checkpoints written under another config");
  cmu_cmd->add_flag("-q,--quiet", cmu_quiet, "No per-step output");

  // train
  auto* train_cmd = app.add_subcommand("train", "Stage 2: train the fusion head with frozen dense encoders");
  ConfigArgs train_cfg;
  train_cfg.add_to(train_cmd);
  std::string train_out, train_stage1, train_resume;
  std::size_t train_every = 0;
  bool train_allow = false, train_quiet = false;
  train_cmd->add_option("-o,--out", train_out, "Run directory");
  train_cmd->add_option("--stage1", train_stage1, "Stage-1 checkpoint (required unless cmu_target=none)");
  train_cmd->add_option("--resume", train_resume, "Continue from a full-stage checkpoint");
  train_cmd->add_option("--checkpoint-every", train_every, "Also checkpoint every N steps");
  train_cmd->add_flag("--allow-config-mismatch", train_allow, "Load checkpoints written under another config");
  train_cmd->add_flag("-q,--quiet", train_quiet, "No per-step output");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  std::string ev_ckpt, ev_out, ev_manifest, ev_split = "test", ev_domain, ev_setting;
  std::size_t ev_heat = 0;
  bool ev_clouds = false;
  eval_cmd->add_option("--checkpoint", ev_ckpt, "Full-stage checkpoint")->required();
  eval_cmd->add_option("-o,--out", ev_out, "Report directory");
  eval_cmd->add_option("-m,--manifest", ev_manifest, "Manifest (default: the one in the checkpoint config)");
  eval_cmd->add_option("--split", ev_split, "test|train")->capture_default_str();
  eval_cmd->add_option("--domain", ev_domain, "Only evaluate entries with this domain tag (default: config test_domain)");
  eval_cmd->add_option("--setting", ev_setting, "Setting tag for the report (default: config setting)");
  eval_cmd->add_option("--heatmaps", ev_heat, "Write per-class similarity maps for the first N samples");
  eval_cmd->add_flag("--clouds", ev_clouds, "Apply the configured clouds to evaluated samples");

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "Run an ablation grid and tabulate mIoU");
  ConfigArgs abl_cfg;
  abl_cfg.add_to(abl_cmd);
  std::string abl_out;
  std::vector<std::string> abl_grids{"components"};
  std::vector<std::uint64_t> abl_seeds{0};
  abl_cmd->add_option("-o,--out", abl_out, "Output directory");
  abl_cmd->add_option("--grid", abl_grids, "components|loss|target (repeatable)")->capture_default_str();
  abl_cmd->add_option("--seeds", abl_seeds, "Seeds, each variant runs once per seed")->delimiter(',')->capture_default_str();

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "Redraw bar charts from report CSVs");
  std::string plot_in, plot_out;
  plot_cmd->add_option("-r,--report", plot_in, "Directory with per_class.csv and summary.csv")->required();
  plot_cmd->add_option("-o,--out", plot_out, "Output directory (default: the report directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*toygen) {
      const fs::path out = toy_out.empty() ? default_out("toygen") : fs::path(toy_out);
      data::generate_toy_dataset(toy, out);
      std::cout << (out / "manifest.json").string() << "\n";
    } else if (*cloudgen) {
      const fs::path out = cg_out.empty() ? default_out("cloudgen") : fs::path(cg_out);
      data::CloudParams p = data::CloudParams::preset(data::parse_cloud_profile(cg_profile), cg.seed);
      p.noise_octaves = cg.noise_octaves;
      p.noise_base_period = cg.noise_base_period;
      if (cg_alpha >= 0.0) p.alpha_max = cg_alpha;
      p.validate();
      data::bake_clouds(load_manifest(cg_manifest), p, out);
      std::cout << (out / "manifest.json").string() << "\n";
    } else if (*cmu_cmd) {
      RunConfig cfg = cmu_cfg.resolve();
      const fs::path out = cmu_out.empty() ? default_out("cmu-train") : fs::path(cmu_out);
      const auto manifest = manifest_for(cfg.cmu_manifest.empty() ? cfg.manifest : cfg.cmu_manifest, "manifest");
      write_config_snapshot(out, cfg);
      Checkpoint resume;
      if (!cmu_resume.empty()) resume = load_checkpoint(cmu_resume);
      TrainState s = run_stage1_cmu(cfg, manifest, run_options(out, cmu_every, cmu_allow, cmu_quiet),
                                    cmu_resume.empty() ? nullptr : &resume);
      std::cout << (out / "stage1.ckpt").string() << "\n";
    } else if (*train_cmd) {
      RunConfig cfg = train_cfg.resolve();
      const fs::path out = train_out.empty() ? default_out("train") : fs::path(train_out);
      const auto manifest = manifest_for(cfg.manifest, "manifest");
      write_config_snapshot(out, cfg);
      Checkpoint stage1, resume;
      if (!train_stage1.empty()) stage1 = load_checkpoint(train_stage1);
      if (!train_resume.empty()) resume = load_checkpoint(train_resume);
      run_stage2_full(cfg, manifest, run_options(out, train_every, train_allow, train_quiet),
                      train_stage1.empty() ? nullptr : &stage1, train_resume.empty() ? nullptr : &resume);
      std::cout << (out / "final.ckpt").string() << "\n";
    } else if (*eval_cmd) {
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      if (ck.stage != kStageFull)
        throw ValidationError("eval needs a full-stage checkpoint, got stage '" + ck.stage + "'");
      const Model model = model_from_checkpoint(ck);
      const RunConfig& cfg = model.config();
      const fs::path out = ev_out.empty() ? default_out("eval") : fs::path(ev_out);
      const auto manifest = manifest_for(ev_manifest.empty() ? cfg.manifest : ev_manifest, "manifest");
      eval::EvalOptions eo;
      eo.split = parse_split(ev_split);
      eo.domain = ev_domain.empty() ? cfg.test_domain : ev_domain;
      if (ev_clouds) eo.clouds = cfg.cloud;
      else if (eo.split == Split::Test) eo.clouds = test_clouds(cfg);
      eo.heatmaps = ev_heat;
      eo.heatmap_dir = out / "heatmaps";
      const std::string setting = ev_setting.empty() ? cfg.setting : ev_setting;
      auto res = eval::run_evaluation(model, manifest, cfg.vocabulary(), setting, eo);
      eval::emit_report({res.report}, out);
      std::cout << "setting " << setting << " samples " << res.samples << " mIoU " << fmt_double(res.report.miou)
                << "\n"
                << (out / "summary.csv").string() << "\n";
    } else if (*abl_cmd) {
      RunConfig cfg = abl_cfg.resolve();
      const fs::path out = abl_out.empty() ? default_out("ablate") : fs::path(abl_out);
      const auto manifest = manifest_for(cfg.manifest, "manifest");
      const auto cmu_manifest = cfg.cmu_manifest.empty() ? manifest : load_manifest(cfg.cmu_manifest);
      write_config_snapshot(out, cfg);
      std::vector<eval::AblationVariant> variants;
      for (const auto& g : abl_grids)
        for (auto& v : eval::ablation_grid(cfg, g)) variants.push_back(std::move(v));
      auto rows = eval::run_ablation_matrix(variants, manifest, cmu_manifest, abl_seeds,
                                            [](const eval::AblationRow& r) {
                                              std::cout << r.grid << " " << r.variant << " seed " << r.seed
                                                        << " mIoU " << fmt_double(r.report.miou) << "\n";
                                            });
      std::vector<metrics::IoUReport> reports;
      for (const auto& r : rows) reports.push_back(r.report);
      eval::emit_report(reports, out / "reports");
      write_text(out / "ablation.csv", eval::ablation_csv(rows));
      write_text(out / "ablation_median.csv", eval::ablation_median_csv(rows));
      std::cout << (out / "ablation.csv").string() << "\n";
    } else if (*plot_cmd) {
      const auto reports = eval::load_report(plot_in);
      if (reports.empty()) throw ValidationError("no reports found in '" + plot_in + "'");
      const fs::path out = plot_out.empty() ? fs::path(plot_in) : fs::path(plot_out);
      for (const auto& r : reports)
        write_text(out / (eval::sanitize_filename(r.setting) + "_iou.svg"), eval::bar_chart_svg(r));
      std::cout << reports.size() << " chart(s) written to " << out.string() << "\n";
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
