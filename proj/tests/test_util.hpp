// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Helpers shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <unistd.h>
#include <utility>
#include <vector>

#include "ovseg/ovseg.hpp"

namespace ovseg::testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("ovseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Small model: d = dim everywhere, patch 4 dense / 8 global.
inline RunConfig tiny_config(std::size_t dim = 8) {
  RunConfig c;
  c.dense_encoder = {4, dim, 3, 2, 2, {1.0 / 3.0, 2.0 / 3.0, 1.0}};
  c.global_encoder = {8, dim, 2, 2, 2, {1.0 / 3.0, 2.0 / 3.0, 1.0}};
  c.text_encoder = {dim, 1, 2, 2, 32};
  c.unified_dim = dim;
  c.decoder_width = dim;
  c.batch_size = 2;
  return c;
}

/// Procedural sample held in memory.
inline data::PairedSample toy_sample(std::size_t size, std::size_t classes, std::uint64_t seed,
                                     std::size_t index = 0) {
  data::ToySceneSpec spec;
  spec.tile_size = size;
  spec.num_classes = classes;
  spec.cell_size = size / 4;
  spec.seed = seed;
  return data::make_toy_tile(spec, index);
}

struct GradCheckResult {
  std::size_t checked = 0;   ///< samples with a gradient above the floor
  std::size_t failed = 0;    ///< of those, relative error >= tolerance
  std::size_t below_floor = 0;
  double max_rel = 0.0;
  double max_abs_below_floor = 0.0;
  std::string worst;
};

/// |a - n| / max(|a|, |n|), with exact agreement (including 0 = 0) giving 0.
inline double relative_error(double a, double n) {
  const double d = std::fabs(a - n);
  if (d == 0.0) return 0.0;
  return d / std::max(std::fabs(a), std::fabs(n));
}

/// Compares reverse-mode gradients of `loss_fn` with five-point central
/// differences (truncation error O(step^4)) on scalars drawn from the
/// parameters of `groups`, until `samples` scalars whose gradient magnitude
/// is at least `grad_floor` have been compared. Tensors are visited
/// round-robin in shuffled order so every tensor is covered. Scalars below
/// the floor, where the difference quotient is dominated by rounding, are
/// counted separately with their absolute error.
template <typename LossFn>
GradCheckResult gradient_check(ParamStore& store, const std::set<std::string>& groups, LossFn&& loss_fn,
                               std::size_t samples, std::uint64_t seed, double rel_tol = 1e-4,
                               double step = 1e-3, double grad_floor = 1e-8) {
  std::map<std::string, Tensor> analytic;
  {
    ad::Tape tape;
    ParamScope P(tape, store, groups);
    ad::Var loss = loss_fn(P);
    tape.backward(loss);
    for (const auto& [name, w] : store.all()) {
      if (!groups.count(ParamStore::group_of(name))) continue;
      const Tensor* g = tape.param_grad(w);
      analytic[name] = g ? *g : Tensor(w.shape(), 0.0);
    }
  }
  auto eval = [&] {
    ad::Tape tape;
    ParamScope P(tape, store, {});
    return loss_fn(P).value()[0];
  };
  std::vector<std::string> names;
  for (const auto& [n, _] : analytic) names.push_back(n);
  if (names.empty()) throw ValidationError("gradient_check: no parameters in the requested groups");
  Rng rng(seed);
  for (std::size_t i = names.size(); i > 1; --i) std::swap(names[i - 1], names[rng.below(i)]);
  GradCheckResult res;
  for (std::size_t k = 0; res.checked < samples && k < 20 * samples; ++k) {
    const std::string& name = names[k % names.size()];
    Tensor& w = store.get(name);
    const std::size_t idx = static_cast<std::size_t>(rng.below(w.size()));
    const double orig = w[idx];
    auto at = [&](double off) {
      w[idx] = orig + off;
      return eval();
    };
    const double num = (-at(2 * step) + 8 * at(step) - 8 * at(-step) + at(-2 * step)) / (12.0 * step);
    w[idx] = orig;
    const double ana = analytic[name][idx];
    if (std::max(std::fabs(ana), std::fabs(num)) < grad_floor) {
      ++res.below_floor;
      res.max_abs_below_floor = std::max(res.max_abs_below_floor, std::fabs(ana - num));
      continue;
    }
    const double rel = relative_error(ana, num);
    ++res.checked;
    if (rel >= rel_tol) {
      ++res.failed;
      if (std::getenv("OVSEG_GC_VERBOSE"))
        std::fprintf(stderr, "gc fail %s[%zu] a=%.6e n=%.6e rel=%.3e\n", name.c_str(), idx, ana, num, rel);
    }
    if (rel > res.max_rel) {
      res.max_rel = rel;
      res.worst = name + "[" + std::to_string(idx) + "] analytic " + fmt_double(ana) + " numeric " +
                  fmt_double(num);
    }
  }
  return res;
}

/// Largest relative error between reverse-mode and five-point numerical
/// gradients of `fn` w.r.t. every element of every input. `fn` builds a
/// scalar from leaves on a fresh tape.
template <typename Fn>
double max_op_grad_error(std::vector<Tensor> inputs, Fn&& fn, double step = 1e-4, double grad_floor = 1e-8) {
  std::vector<Tensor> analytic;
  {
    ad::Tape t;
    std::vector<ad::Var> leaves;
    for (const auto& x : inputs) leaves.push_back(t.leaf(x));
    ad::Var out = fn(leaves);
    t.backward(out);
    for (const auto& v : leaves) analytic.push_back(t.grad(v));
  }
  auto eval = [&] {
    ad::Tape t;
    std::vector<ad::Var> leaves;
    for (const auto& x : inputs) leaves.push_back(t.leaf(x));
    return fn(leaves).value()[0];
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      auto at = [&](double off) {
        inputs[i][j] = orig + off;
        return eval();
      };
      const double num = (-at(2 * step) + 8 * at(step) - 8 * at(-step) + at(-2 * step)) / (12.0 * step);
      inputs[i][j] = orig;
      const double ana = analytic[i][j];
      if (std::max(std::fabs(ana), std::fabs(num)) < grad_floor) continue;
      worst = std::max(worst, relative_error(ana, num));
    }
  return worst;
}

/// Writes a toy dataset and returns its loaded manifest.
inline DatasetManifest make_toy_manifest(const fs::path& dir, std::size_t classes, std::size_t samples,
                                         std::size_t tile, double test_fraction, std::uint64_t seed,
                                         const std::string& domain = "toy") {
  data::ToySceneSpec spec;
  spec.num_classes = classes;
  spec.samples = samples;
  spec.tile_size = tile;
  spec.cell_size = tile / 4;
  spec.test_fraction = test_fraction;
  spec.seed = seed;
  spec.domain = domain;
  data::generate_toy_dataset(spec, dir);
  return load_manifest(dir / "manifest.json");
}

/// Six-class vocabulary names c0..c5 split into seen and novel.
inline std::pair<std::vector<std::string>, std::vector<std::string>> class_names(std::size_t seen,
                                                                                 std::size_t novel) {
  std::vector<std::string> s, n;
  for (std::size_t i = 0; i < seen; ++i) s.push_back("c" + std::to_string(i));
  for (std::size_t i = 0; i < novel; ++i) n.push_back("c" + std::to_string(seen + i));
  return {s, n};
}

}  // namespace ovseg::testing
