// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Toy-scale encoders: a ViT used for the dense RGB/SAR roles and (with a
// class token) the global visual role, and a byte-level transformer text
// encoder. All weights live in a ParamStore under a name prefix.

#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ovseg/autograd.hpp"
#include "ovseg/config.hpp"
#include "ovseg/params.hpp"
#include "ovseg/vocab.hpp"

namespace ovseg::nn {

using ad::Var;

constexpr double kInputMean = 0.5;
constexpr double kInputStd = 0.25;

struct VitConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t in_channels = 3;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 16;
  std::size_t depth = 3;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::array<double, 3> tap_fractions{1.0 / 3.0, 2.0 / 3.0, 1.0};
  bool class_token = false;

  static VitConfig from_spec(const EncoderSpec& s, std::size_t h, std::size_t w,
                             std::size_t channels, bool class_token) {
    VitConfig c;
    c.image_h = h;
    c.image_w = w;
    c.in_channels = channels;
    c.patch_size = s.patch_size;
    c.embed_dim = s.embed_dim;
    c.depth = s.depth;
    c.heads = s.heads;
    c.mlp_ratio = s.mlp_ratio;
    c.tap_fractions = s.tap_fractions;
    c.class_token = class_token;
    return c;
  }

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t num_tokens() const { return num_patches() + (class_token ? 1 : 0); }

  /// 1-based block indices ceil(f * depth) of the three feature taps.
  std::array<std::size_t, 3> tap_blocks() const {
    std::array<std::size_t, 3> out{};
    for (std::size_t i = 0; i < 3; ++i)
      out[i] = static_cast<std::size_t>(
          std::ceil(tap_fractions[i] * static_cast<double>(depth) - 1e-9));
    return out;
  }

  void validate() const {
    if (patch_size == 0 || image_h % patch_size || image_w % patch_size)
      throw ValidationError("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                            " is not divisible by patch size " + std::to_string(patch_size));
    if (embed_dim == 0 || heads == 0 || embed_dim % heads)
      throw ValidationError("embed_dim must be a positive multiple of heads");
    if (depth == 0) throw ValidationError("encoder depth must be positive");
    if (in_channels != 1 && in_channels != 3) throw ValidationError("encoder input must have 1 or 3 channels");
    // Global encoders export only the class token.
    if (class_token) return;
    auto taps = tap_blocks();
    for (std::size_t i = 0; i < 3; ++i) {
      if (taps[i] < 1 || taps[i] > depth)
        throw ValidationError("tap fraction " + std::to_string(tap_fractions[i]) + " is out of range");
      if (i > 0 && taps[i] <= taps[i - 1])
        throw ValidationError("tap blocks must be distinct and increasing");
    }
    if (taps[2] != depth) throw ValidationError("the last tap must be the final block");
  }
};

struct TransformerDims {
  std::size_t dim, heads, mlp_ratio;
};

inline void init_block(ParamStore& ps, const std::string& p, const TransformerDims& d, Rng& rng) {
  const std::size_t hid = d.dim * d.mlp_ratio;
  ps.add(p + ".ln1.g", Tensor({d.dim}, 1.0));
  ps.add(p + ".ln1.b", Tensor({d.dim}, 0.0));
  ps.add(p + ".qkv.w", init_fan_in({d.dim, 3 * d.dim}, d.dim, rng));
  ps.add(p + ".qkv.b", Tensor({3 * d.dim}, 0.0));
  ps.add(p + ".proj.w", init_fan_in({d.dim, d.dim}, d.dim, rng));
  ps.add(p + ".proj.b", Tensor({d.dim}, 0.0));
  ps.add(p + ".ln2.g", Tensor({d.dim}, 1.0));
  ps.add(p + ".ln2.b", Tensor({d.dim}, 0.0));
  ps.add(p + ".fc1.w", init_fan_in({d.dim, hid}, d.dim, rng));
  ps.add(p + ".fc1.b", Tensor({hid}, 0.0));
  ps.add(p + ".fc2.w", init_fan_in({hid, d.dim}, hid, rng));
  ps.add(p + ".fc2.b", Tensor({d.dim}, 0.0));
}

/// Pre-norm transformer block over a token matrix [n, dim].
inline Var transformer_block(const ParamScope& P, const std::string& p, const Var& x,
                             const TransformerDims& d) {
  const std::size_t dh = d.dim / d.heads;
  Var h = ad::layer_norm(x, P(p + ".ln1.g"), P(p + ".ln1.b"));
  Var qkv = ad::linear(h, P(p + ".qkv.w"), P(p + ".qkv.b"));
  std::vector<Var> heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t k = 0; k < d.heads; ++k) {
    Var q = ad::slice_cols(qkv, k * dh, (k + 1) * dh);
    Var kk = ad::slice_cols(qkv, d.dim + k * dh, d.dim + (k + 1) * dh);
    Var v = ad::slice_cols(qkv, 2 * d.dim + k * dh, 2 * d.dim + (k + 1) * dh);
    Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(q, kk), inv));
    heads.push_back(ad::matmul(att, v));
  }
  Var attn = heads.size() == 1 ? heads[0] : ad::concat_cols(heads);
  Var x1 = ad::add(x, ad::linear(attn, P(p + ".proj.w"), P(p + ".proj.b")));
  Var h2 = ad::layer_norm(x1, P(p + ".ln2.g"), P(p + ".ln2.b"));
  Var m = ad::linear(ad::gelu(ad::linear(h2, P(p + ".fc1.w"), P(p + ".fc1.b"))), P(p + ".fc2.w"),
                     P(p + ".fc2.b"));
  return ad::add(x1, m);
}

inline void init_vit(ParamStore& ps, const std::string& prefix, const VitConfig& c, Rng& rng) {
  c.validate();
  const std::size_t pin = c.patch_size * c.patch_size * c.in_channels;
  ps.add(prefix + ".patch.w", init_fan_in({pin, c.embed_dim}, pin, rng));
  ps.add(prefix + ".patch.b", Tensor({c.embed_dim}, 0.0));
  ps.add(prefix + ".pos", init_normal({c.num_tokens(), c.embed_dim}, 0.02, rng));
  if (c.class_token) ps.add(prefix + ".cls", init_normal({1, c.embed_dim}, 0.02, rng));
  for (std::size_t b = 0; b < c.depth; ++b)
    init_block(ps, prefix + ".block" + std::to_string(b), {c.embed_dim, c.heads, c.mlp_ratio}, rng);
  ps.add(prefix + ".norm.g", Tensor({c.embed_dim}, 1.0));
  ps.add(prefix + ".norm.b", Tensor({c.embed_dim}, 0.0));
}

/// Non-overlapping patches of an [H, W, C] image -> [num_patches, p*p*C],
/// patches in raster order, features ordered (py, px, c).
inline Var patchify(const Var& image, std::size_t p) {
  const Tensor& v = image.value();
  const std::size_t H = v.dim(0), W = v.dim(1), C = v.dim(2);
  const std::size_t gh = H / p, gw = W / p, f = p * p * C;
  std::vector<std::int64_t> idx(gh * gw * f);
  std::size_t o = 0;
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t c = 0; c < C; ++c)
            idx[o++] = static_cast<std::int64_t>(((gy * p + py) * W + gx * p + px) * C + c);
  return ad::gather(image, {gh * gw, f}, std::move(idx));
}

/// Outputs of one ViT forward: without a class token, three tap token maps
/// [h*w, d] passed through the encoder's final norm; with one, the final
/// normalised class-token row [1, d].
struct VitOutput {
  std::array<Var, 3> taps;
  Var cls;
};

inline VitOutput vit_forward(const ParamScope& P, const std::string& prefix, const VitConfig& c,
                             const Var& image) {
  const Tensor& iv = image.value();
  if (iv.rank() != 3 || iv.dim(0) != c.image_h || iv.dim(1) != c.image_w || iv.dim(2) != c.in_channels)
    throw ValidationError(prefix + ": expected input " + std::to_string(c.image_h) + "x" +
                          std::to_string(c.image_w) + "x" + std::to_string(c.in_channels) +
                          ", got " + shape_str(iv.shape()));
  // Inputs in [0,1] are standardised to zero mean and unit scale.
  Var pixels = ad::scale(ad::add_scalar(image, -kInputMean), 1.0 / kInputStd);
  Var x = ad::linear(patchify(pixels, c.patch_size), P(prefix + ".patch.w"), P(prefix + ".patch.b"));
  if (c.class_token) {
    Var parts[] = {P(prefix + ".cls"), x};
    x = ad::concat_rows(parts);
  }
  x = ad::add(x, P(prefix + ".pos"));
  const auto taps = c.tap_blocks();
  const TransformerDims d{c.embed_dim, c.heads, c.mlp_ratio};
  VitOutput out;
  std::size_t next_tap = 0;
  Var g = P(prefix + ".norm.g"), b = P(prefix + ".norm.b");
  for (std::size_t blk = 1; blk <= c.depth; ++blk) {
    x = transformer_block(P, prefix + ".block" + std::to_string(blk - 1), x, d);
    if (!c.class_token && next_tap < 3 && taps[next_tap] == blk) {
      Var tokens = c.class_token ? ad::slice_rows(x, 1, c.num_tokens()) : x;
      out.taps[next_tap++] = ad::layer_norm(tokens, g, b);
    }
  }
  if (c.class_token) out.cls = ad::layer_norm(ad::slice_rows(x, 0, 1), g, b);
  return out;
}

// ---------------------------------------------------------------------------
// Global visual encoder: ViT with class token + projection to the joint space.

inline void init_global_encoder(ParamStore& ps, const std::string& prefix, const VitConfig& c,
                                std::size_t joint_dim, Rng& rng) {
  init_vit(ps, prefix + ".vit", c, rng);
  ps.add(prefix + ".proj.w", init_fan_in({c.embed_dim, joint_dim}, c.embed_dim, rng));
}

struct GlobalOutput {
  Var embedding;  ///< [1, joint_dim], unit norm
  VitOutput vit;
};

inline GlobalOutput global_forward(const ParamScope& P, const std::string& prefix,
                                   const VitConfig& c, const Var& image) {
  GlobalOutput out;
  out.vit = vit_forward(P, prefix + ".vit", c, image);
  out.embedding = ad::l2_normalize_rows(ad::matmul(out.vit.cls, P(prefix + ".proj.w")));
  return out;
}

// ---------------------------------------------------------------------------
// Byte-level text encoder.

inline void init_text_encoder(ParamStore& ps, const std::string& prefix, const TextSpec& s,
                              std::size_t joint_dim, Rng& rng) {
  if (s.embed_dim == 0 || s.heads == 0 || s.embed_dim % s.heads)
    throw ValidationError("text embed_dim must be a positive multiple of heads");
  ps.add(prefix + ".tok", init_normal({256, s.embed_dim}, 1.0, rng));
  ps.add(prefix + ".pos", init_normal({s.max_len, s.embed_dim}, 0.02, rng));
  for (std::size_t b = 0; b < s.depth; ++b)
    init_block(ps, prefix + ".block" + std::to_string(b), {s.embed_dim, s.heads, s.mlp_ratio}, rng);
  ps.add(prefix + ".norm.g", Tensor({s.embed_dim}, 1.0));
  ps.add(prefix + ".norm.b", Tensor({s.embed_dim}, 0.0));
  ps.add(prefix + ".proj.w", init_fan_in({s.embed_dim, joint_dim}, s.embed_dim, rng));
}

/// Embeds one prompt: bytes -> token + position embeddings -> transformer ->
/// mean over tokens -> projection -> L2 normalisation. Returns [1, joint_dim].
inline Var encode_prompt(const ParamScope& P, const std::string& prefix, const TextSpec& s,
                         const std::string& prompt) {
  if (prompt.empty()) throw ValidationError("empty prompt");
  if (prompt.size() > s.max_len)
    throw ValidationError("prompt '" + prompt + "' exceeds text max_len " + std::to_string(s.max_len));
  const std::size_t n = prompt.size(), d = s.embed_dim;
  std::vector<std::int64_t> idx(n * d), pidx(n * d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < d; ++k) {
      idx[t * d + k] = static_cast<std::int64_t>(static_cast<unsigned char>(prompt[t]) * d + k);
      pidx[t * d + k] = static_cast<std::int64_t>(t * d + k);
    }
  Var x = ad::add(ad::gather(P(prefix + ".tok"), {n, d}, std::move(idx)),
                  ad::gather(P(prefix + ".pos"), {n, d}, std::move(pidx)));
  for (std::size_t b = 0; b < s.depth; ++b)
    x = transformer_block(P, prefix + ".block" + std::to_string(b), x, {d, s.heads, s.mlp_ratio});
  x = ad::layer_norm(x, P(prefix + ".norm.g"), P(prefix + ".norm.b"));
  return ad::l2_normalize_rows(ad::matmul(ad::mean_rows(x), P(prefix + ".proj.w")));
}

/// Text embedding matrix [N_c, joint_dim], one prompt per class, rows in
/// vocabulary order.
inline Var encode_text(const ParamScope& P, const std::string& prefix, const TextSpec& s,
                       const ClassVocabulary& vocab) {
  std::vector<Var> rows;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    rows.push_back(encode_prompt(P, prefix, s, vocab.prompt(i)));
  return ad::concat_rows(rows);
}

// ---------------------------------------------------------------------------
// External embeddings

/// Reads `dim=<d>` followed by `name,v1,...,vd` lines.
inline std::map<std::string, std::vector<double>> read_embedding_file(const std::string& path,
                                                                      std::size_t* dim_out = nullptr) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open embedding file '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line.rfind("dim=", 0) != 0)
    throw ValidationError("embedding file '" + path + "' must start with 'dim=<d>'");
  std::size_t dim = 0;
  try {
    dim = std::stoul(line.substr(4));
  } catch (const std::exception&) {
    throw ValidationError("embedding file '" + path + "': bad header '" + line + "'");
  }
  if (dim == 0) throw ValidationError("embedding file '" + path + "': dim must be positive");
  std::map<std::string, std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string name, cell;
    std::getline(ss, name, ',');
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ValidationError("embedding file '" + path + "' line " + std::to_string(lineno) +
                              ": bad number '" + cell + "'");
      }
    }
    if (v.size() != dim)
      throw ValidationError("embedding file '" + path + "' line " + std::to_string(lineno) +
                            ": expected " + std::to_string(dim) + " values, got " +
                            std::to_string(v.size()));
    rows[name] = std::move(v);
  }
  if (dim_out) *dim_out = dim;
  return rows;
}

/// Loads per-class embeddings, re-normalises each row and orders rows by the
/// vocabulary (not by file order).
inline Tensor load_external_embeddings(const std::string& path, const ClassVocabulary& vocab,
                                       std::size_t expected_dim) {
  std::size_t dim = 0;
  auto rows = read_embedding_file(path, &dim);
  if (dim != expected_dim)
    throw ValidationError("embedding file '" + path + "' has dim " + std::to_string(dim) +
                          ", expected " + std::to_string(expected_dim));
  Tensor out({vocab.size(), dim});
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto it = rows.find(vocab.name(i));
    if (it == rows.end())
      throw ValidationError("embedding file '" + path + "' has no row for class '" + vocab.name(i) + "'");
    double n = 0.0;
    for (double v : it->second) n += v * v;
    n = std::sqrt(n);
    if (n == 0.0) throw ValidationError("embedding for class '" + vocab.name(i) + "' is all zeros");
    for (std::size_t k = 0; k < dim; ++k) out[i * dim + k] = it->second[k] / n;
  }
  return out;
}

}  // namespace ovseg::nn
