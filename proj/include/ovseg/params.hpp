// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ovseg/autograd.hpp"
#include "ovseg/rng.hpp"
#include "ovseg/tensor.hpp"

namespace ovseg {

/// Named weights. A name's group is the prefix before the first '.', e.g.
/// "sar_dense.block0.qkv.w" belongs to group "sar_dense". Iteration order is
/// lexicographic, which keeps checkpoints and hashes deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init) {
    auto [it, inserted] = params_.emplace(name, std::move(init));
    if (!inserted) throw ValidationError("duplicate parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  static std::string group_of(const std::string& name) {
    return name.substr(0, name.find('.'));
  }

  std::set<std::string> groups() const {
    std::set<std::string> out;
    for (const auto& [name, _] : params_) out.insert(group_of(name));
    return out;
  }

  /// FNV-1a over names, shapes and raw bytes of one group (or all groups when
  /// `group` is empty). Bit-level: any change to any weight changes the hash.
  std::uint64_t hash(const std::string& group = {}) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto eat = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [name, t] : params_) {
      if (!group.empty() && group_of(name) != group) continue;
      eat(name.data(), name.size());
      for (std::size_t d : t.shape()) eat(&d, sizeof d);
      eat(t.data(), t.size() * sizeof(double));
    }
    return h;
  }

 private:
  std::map<std::string, Tensor> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor init_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = stddev * rng.normal();
  return t;
}

/// Binds named weights to a tape. Weights whose group is not in the
/// trainable set enter the graph as constants.
class ParamScope {
 public:
  ParamScope(ad::Tape& tape, const ParamStore& store, std::set<std::string> trainable)
      : tape_(tape), store_(store), trainable_(std::move(trainable)) {}

  ad::Var operator()(const std::string& name) const {
    const Tensor& t = store_.get(name);
    return tape_.parameter(t, trainable_.count(ParamStore::group_of(name)) != 0);
  }

  ad::Tape& tape() const { return tape_; }
  const ParamStore& store() const { return store_; }
  const std::set<std::string>& trainable() const { return trainable_; }

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  std::set<std::string> trainable_;
};

}  // namespace ovseg
