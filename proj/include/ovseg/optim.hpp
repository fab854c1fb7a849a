// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>

#include "ovseg/autograd.hpp"
#include "ovseg/config.hpp"
#include "ovseg/params.hpp"

namespace ovseg {

/// AdamW with decoupled weight decay and per-group learning rates. Groups
/// absent from the learning-rate map are frozen and never touched.
class AdamW {
 public:
  explicit AdamW(const OptimSpec& spec = {}) : spec_(spec) {}

  void set_group_lr(const std::string& group, double lr) { lrs_[group] = lr; }
  const std::map<std::string, double>& group_lrs() const { return lrs_; }
  bool is_trainable(const std::string& group) const { return lrs_.count(group) != 0; }

  std::size_t step_count() const { return step_; }
  std::map<std::string, Tensor>& first_moments() { return m_; }
  std::map<std::string, Tensor>& second_moments() { return v_; }
  const std::map<std::string, Tensor>& first_moments() const { return m_; }
  const std::map<std::string, Tensor>& second_moments() const { return v_; }
  void set_step_count(std::size_t s) { step_ = s; }
  const OptimSpec& spec() const { return spec_; }

  /// One update from the gradients recorded on `tape`. Parameters of a
  /// trainable group that received no gradient are left alone. A non-finite
  /// gradient aborts the step before any weight changes.
  void step(ParamStore& params, const ad::Tape& tape) {
    for (const auto& [name, w] : params.all()) {
      if (!is_trainable(ParamStore::group_of(name))) continue;
      const Tensor* g = tape.param_grad(w);
      if (!g) continue;
      for (double v : g->values())
        if (!std::isfinite(v))
          throw RuntimeError("non-finite gradient in group '" + ParamStore::group_of(name) +
                             "' (parameter '" + name + "')");
    }
    ++step_;
    const double b1 = spec_.beta1, b2 = spec_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (auto& [name, w] : params.all()) {
      auto lr_it = lrs_.find(ParamStore::group_of(name));
      if (lr_it == lrs_.end()) continue;
      const Tensor* g = tape.param_grad(w);
      if (!g) continue;
      const double lr = lr_it->second;
      Tensor& m = moment(m_, name, w);
      Tensor& v = moment(v_, name, w);
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= lr * spec_.weight_decay * w[i];
        const double gi = (*g)[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + spec_.eps);
      }
    }
  }

 private:
  static Tensor& moment(std::map<std::string, Tensor>& store, const std::string& name, const Tensor& w) {
    auto it = store.find(name);
    if (it == store.end()) it = store.emplace(name, Tensor(w.shape(), 0.0)).first;
    return it->second;
  }

  OptimSpec spec_;
  std::map<std::string, double> lrs_;
  std::map<std::string, Tensor> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace ovseg
