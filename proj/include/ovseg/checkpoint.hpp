// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container.
//
//   bytes 0..7    magic "OVSCKPT\0"
//   u32           format version
//   u64           header length N
//   N bytes       JSON header: stage, config_hash, iteration, seed, meta,
//                 arrays [{name, shape, offset}] (offset in doubles)
//   payload       little-endian float64 values of all arrays, in header order
//   u32           CRC-32 of every preceding byte

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "ovseg/tensor.hpp"

namespace ovseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kCheckpointMagic[8] = {'O', 'V', 'S', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string stage;  ///< "cmu" or "full"
  std::uint64_t config_hash = 0;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> arrays;
};

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > buf.size()) throw RuntimeError("checkpoint truncated while reading " + what);
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::ordered_json header;
  header["stage"] = ck.stage;
  header["config_hash"] = ck.config_hash;
  header["iteration"] = ck.iteration;
  header["seed"] = ck.seed;
  header["meta"] = ck.meta;
  nlohmann::ordered_json arrays = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ck.arrays) {
    arrays.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  header["arrays"] = arrays;
  const std::string hs = header.dump();
  std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  detail::put<std::uint64_t>(buf, hs.size());
  buf += hs;
  for (const auto& [_, t] : ck.arrays)
    buf.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  detail::put<std::uint32_t>(buf, detail::crc32_of(buf.data(), buf.size()));
  return buf;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf, const std::string& source = "checkpoint") {
  if (buf.size() < sizeof kCheckpointMagic + 4 + 8 + 4)
    throw RuntimeError(source + ": file too short to be a checkpoint (truncated?)");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw RuntimeError(source + ": not a checkpoint (bad magic)");
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + body, 4);
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = detail::take<std::uint32_t>(buf, pos, "version");
  if (version != kCheckpointVersion)
    throw RuntimeError(source + ": unsupported checkpoint version " + std::to_string(version) +
                       " (expected " + std::to_string(kCheckpointVersion) + ")");
  if (detail::crc32_of(buf.data(), body) != stored)
    throw RuntimeError(source + ": checksum mismatch (corrupted or truncated payload)");
  const auto hlen = detail::take<std::uint64_t>(buf, pos, "header length");
  if (pos + hlen > body) throw RuntimeError(source + ": header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(source + ": malformed header: " + e.what());
  }
  pos += hlen;
  Checkpoint ck;
  try {
    ck.stage = header.at("stage").get<std::string>();
    ck.config_hash = header.at("config_hash").get<std::uint64_t>();
    ck.iteration = header.at("iteration").get<std::uint64_t>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.meta = header.at("meta");
    const std::size_t payload = (body - pos) / sizeof(double);
    if ((body - pos) % sizeof(double) != 0) throw RuntimeError(source + ": payload length is not a multiple of 8");
    std::size_t expected = 0;
    for (const auto& a : header.at("arrays")) {
      Shape shape = a.at("shape").get<Shape>();
      const auto off = a.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (off != expected || off + n > payload)
        throw RuntimeError(source + ": array '" + a.at("name").get<std::string>() + "' lies outside the payload");
      Tensor t(shape);
      if (n > 0) std::memcpy(t.data(), buf.data() + pos + off * sizeof(double), n * sizeof(double));
      ck.arrays.emplace(a.at("name").get<std::string>(), std::move(t));
      expected += n;
    }
    if (expected != payload) throw RuntimeError(source + ": payload length does not match the header");
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(source + ": malformed header: " + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string buf = serialize_checkpoint(ck);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeError("cannot write checkpoint '" + path.string() + "'");
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw RuntimeError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint '" + path.string() + "'");
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf, path.string());
}

/// Rejects a checkpoint written under a different model configuration
/// unless `allow_mismatch` is set.
inline void check_config_hash(const Checkpoint& ck, std::uint64_t expected, bool allow_mismatch) {
  if (ck.config_hash == expected || allow_mismatch) return;
  throw ValidationError("checkpoint config hash " + std::to_string(ck.config_hash) +
                        " does not match the run config hash " + std::to_string(expected) +
                        " (pass the override flag to load anyway)");
}

}  // namespace ovseg
