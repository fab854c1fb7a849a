// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ovseg/tensor.hpp"

namespace ovseg {

struct ClassEntry {
  std::string name;
  bool seen = true;
};

/// Ordered class list. The order is the channel order of every downstream
/// quantity: prompts, text embeddings, similarity maps, logits, confusion
/// matrices.
class ClassVocabulary {
 public:
  static constexpr int kDefaultIgnore = 255;
  static constexpr const char* kDefaultTemplate = "a photo of {}";

  ClassVocabulary() = default;
  ClassVocabulary(std::vector<ClassEntry> classes,
                  std::string prompt_template = kDefaultTemplate,
                  int ignore_index = kDefaultIgnore)
      : classes_(std::move(classes)),
        template_(std::move(prompt_template)),
        ignore_index_(ignore_index) {
    validate();
  }

  std::size_t size() const { return classes_.size(); }
  const std::vector<ClassEntry>& classes() const { return classes_; }
  const std::string& name(std::size_t i) const { return classes_.at(i).name; }
  bool seen(std::size_t i) const { return classes_.at(i).seen; }
  int ignore_index() const { return ignore_index_; }
  const std::string& prompt_template() const { return template_; }

  bool is_valid_label(int v) const {
    return v == ignore_index_ || (v >= 0 && static_cast<std::size_t>(v) < size());
  }

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < classes_.size(); ++i)
      if (classes_[i].name == name) return i;
    return std::nullopt;
  }

  std::string prompt(std::size_t i) const {
    std::string p = template_;
    p.replace(p.find("{}"), 2, name(i));
    return p;
  }

  std::vector<std::size_t> seen_indices() const { return indices(true); }
  std::vector<std::size_t> unseen_indices() const { return indices(false); }

  /// The training-time vocabulary: seen classes only, order preserved.
  ClassVocabulary seen_only() const {
    std::vector<ClassEntry> out;
    for (const auto& c : classes_)
      if (c.seen) out.push_back(c);
    return ClassVocabulary(std::move(out), template_, ignore_index_);
  }

 private:
  std::vector<std::size_t> indices(bool seen) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < classes_.size(); ++i)
      if (classes_[i].seen == seen) out.push_back(i);
    return out;
  }

  void validate() const {
    if (classes_.empty()) throw ValidationError("vocabulary has no classes");
    std::set<std::string> names;
    bool any_seen = false;
    for (const auto& c : classes_) {
      if (c.name.empty()) throw ValidationError("vocabulary contains an empty class name");
      if (!names.insert(c.name).second)
        throw ValidationError("duplicate class name '" + c.name + "'");
      any_seen = any_seen || c.seen;
    }
    if (!any_seen) throw ValidationError("vocabulary needs at least one seen class");
    if (ignore_index_ >= 0 && static_cast<std::size_t>(ignore_index_) < classes_.size())
      throw ValidationError("ignore_index " + std::to_string(ignore_index_) +
                            " collides with a class index");
    const auto first = template_.find("{}");
    if (first == std::string::npos || template_.find("{}", first + 2) != std::string::npos)
      throw ValidationError("prompt template must contain exactly one '{}' placeholder: '" +
                            template_ + "'");
  }

  std::vector<ClassEntry> classes_;
  std::string template_ = kDefaultTemplate;
  int ignore_index_ = kDefaultIgnore;
};

/// Seen classes first, then novel classes, each in the given order. The two
/// lists must be disjoint.
inline ClassVocabulary resolve_vocabulary(const std::vector<std::string>& seen,
                                          const std::vector<std::string>& novel,
                                          std::string prompt_template = ClassVocabulary::kDefaultTemplate,
                                          int ignore_index = ClassVocabulary::kDefaultIgnore) {
  std::set<std::string> seen_set(seen.begin(), seen.end());
  std::vector<ClassEntry> classes;
  for (const auto& s : seen) classes.push_back({s, true});
  for (const auto& n : novel) {
    if (seen_set.count(n))
      throw ValidationError("class '" + n + "' is listed as both seen and novel");
    classes.push_back({n, false});
  }
  return ClassVocabulary(std::move(classes), std::move(prompt_template), ignore_index);
}

}  // namespace ovseg
