// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ovseg/tensor.hpp"

namespace ovseg::io {

/// 8-bit interleaved image.
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

struct PngInfo {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  bool sixteen_bit = false;
};

namespace detail {

inline std::size_t channels_of(png_uint_32 format) {
  std::size_t c = (format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  if (format & PNG_FORMAT_FLAG_ALPHA) ++c;
  return c;
}

inline png_uint_32 format_for(std::size_t channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 2: return PNG_FORMAT_GA;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: throw ValidationError("unsupported channel count " + std::to_string(channels));
  }
}

}  // namespace detail

inline PngInfo png_info(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw ValidationError("cannot read PNG '" + path.string() + "': " + img.message);
  PngInfo info{img.height, img.width, detail::channels_of(img.format),
               (img.format & PNG_FORMAT_FLAG_LINEAR) != 0};
  png_image_free(&img);
  return info;
}

/// Reads an 8-bit PNG in its native channel layout (palette images are
/// expanded to RGB). 16-bit files are rejected.
inline Image8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw ValidationError("cannot read PNG '" + path.string() + "': " + img.message);
  if (img.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw ValidationError("'" + path.string() + "' is not an 8-bit PNG");
  }
  Image8 out;
  out.height = img.height;
  out.width = img.width;
  out.channels = detail::channels_of(img.format);
  img.format = detail::format_for(out.channels);
  out.pixels.resize(out.height * out.width * out.channels);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ValidationError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.pixels.size() != image.height * image.width * image.channels)
    throw ValidationError("write_png: pixel buffer size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = detail::format_for(image.channels);
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr))
    throw RuntimeError("cannot write PNG '" + path.string() + "': " + img.message);
}

inline std::uint8_t to_u8(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

/// [H, W, C] tensor with values in [0, 1] -> 8-bit image (rounded, clamped).
inline Image8 tensor_to_image(const Tensor& t) {
  Image8 img{t.dim(0), t.dim(1), t.dim(2), std::vector<std::uint8_t>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) img.pixels[i] = to_u8(t[i]);
  return img;
}

inline Tensor image_to_tensor(const Image8& img) {
  Tensor t({img.height, img.width, img.channels});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

}  // namespace ovseg::io
