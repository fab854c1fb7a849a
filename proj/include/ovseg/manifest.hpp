// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovseg/image_io.hpp"
#include "ovseg/tensor.hpp"

namespace ovseg {

enum class Split { Train, Test };

inline std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "' (expected train|test)");
}

struct ManifestEntry {
  std::string rgb;
  std::string sar;
  std::string label;
  Split split = Split::Train;
  std::string domain;
};

/// Paths in entries are kept exactly as written; relative paths resolve
/// against the directory of the manifest file.
struct DatasetManifest {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::size_t count(Split s) const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.split == s;
    return n;
  }

  /// Indices of entries in a split, optionally restricted to one domain tag.
  std::vector<std::size_t> indices(Split s, const std::string& domain = {}) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == s && (domain.empty() || entries[i].domain == domain))
        out.push_back(i);
    return out;
  }
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["image_size"] = {m.height, m.width};
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json je;
    je["rgb"] = e.rgb;
    je["sar"] = e.sar;
    je["label"] = e.label;
    je["split"] = to_string(e.split);
    je["domain"] = e.domain;
    j["entries"].push_back(std::move(je));
  }
  return j;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw RuntimeError("cannot write manifest '" + path.string() + "'");
  os << manifest_to_json(m).dump(2) << '\n';
}

/// Parses a manifest document without touching the referenced files.
inline DatasetManifest parse_manifest(const nlohmann::json& j, std::filesystem::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    if (!j.is_object()) throw ValidationError("manifest must be a JSON object");
    for (const auto& [key, _] : j.items())
      if (key != "image_size" && key != "entries")
        throw ValidationError("unknown manifest key '" + key + "'");
    const auto& size = j.at("image_size");
    if (!size.is_array() || size.size() != 2)
      throw ValidationError("image_size must be [H, W]");
    m.height = size[0].get<std::size_t>();
    m.width = size[1].get<std::size_t>();
    if (m.height == 0 || m.width == 0) throw ValidationError("image_size must be positive");
    const auto& entries = j.at("entries");
    if (!entries.is_array()) throw ValidationError("entries must be an array");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& je = entries[i];
      try {
        for (const auto& [key, _] : je.items())
          if (key != "rgb" && key != "sar" && key != "label" && key != "split" && key != "domain")
            throw ValidationError("unknown key '" + key + "'");
        ManifestEntry e;
        e.rgb = je.at("rgb").get<std::string>();
        e.sar = je.at("sar").get<std::string>();
        e.label = je.at("label").get<std::string>();
        e.split = parse_split(je.at("split").get<std::string>());
        e.domain = je.value("domain", std::string{});
        m.entries.push_back(std::move(e));
      } catch (const ValidationError& ex) {
        throw ValidationError("manifest entry " + std::to_string(i) + ": " + ex.what());
      } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("manifest entry " + std::to_string(i) + ": " + ex.what());
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

/// Loads and validates a manifest: every referenced tile must exist and match
/// the declared image size.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("manifest '" + path.string() + "' not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("malformed manifest '" + path.string() + "': " + ex.what());
  }
  DatasetManifest m = parse_manifest(j, path.parent_path());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    for (const auto* field : {&e.rgb, &e.sar, &e.label}) {
      auto p = m.resolve(*field);
      if (!std::filesystem::exists(p))
        throw ValidationError("manifest entry " + std::to_string(i) + ": missing tile '" +
                              p.string() + "'");
      auto info = io::png_info(p);
      if (info.height != m.height || info.width != m.width)
        throw ValidationError("manifest entry " + std::to_string(i) + ": inconsistent image size " +
                              std::to_string(info.height) + "x" + std::to_string(info.width) +
                              " in '" + p.string() + "', expected " + std::to_string(m.height) +
                              "x" + std::to_string(m.width));
    }
  }
  return m;
}

}  // namespace ovseg
