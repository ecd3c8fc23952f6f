// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>

#include "understory/error.hpp"
#include "understory/field.hpp"
#include "understory/image.hpp"
#include "understory/io/files.hpp"

namespace understory::io {

inline constexpr std::uint32_t kFormatVersion = 1;

// Float raster sidecar: "CNPF", version, width, height, channels, then f32
// values row-major and channel-interleaved.

inline void write_float_image(const fs::path& path, const Image& img) {
  ByteWriter w;
  w.raw("CNPF", 4);
  w.le<std::uint32_t>(kFormatVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(img.width));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(img.height));
  w.le<std::uint32_t>(3);
  for (double v : img.data) w.le<float>(static_cast<float>(v));
  write_bytes(path, w.bytes().data(), w.bytes().size());
}

inline Image read_float_image(const fs::path& path) {
  const auto bytes = read_bytes(path);
  ByteReader r(bytes, path.string());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "CNPF", 4) != 0) throw IoError(path.string() + ": not a float raster");
  if (r.le<std::uint32_t>() != kFormatVersion) throw IoError(path.string() + ": unsupported version");
  const auto w = r.le<std::uint32_t>(), h = r.le<std::uint32_t>(), c = r.le<std::uint32_t>();
  if (c != 3) throw IoError(path.string() + ": expected 3 channels");
  if (r.remaining() != static_cast<std::size_t>(w) * h * c * sizeof(float))
    throw IoError(path.string() + ": payload size mismatch");
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (double& v : img.data) v = r.le<float>();
  return img;
}

// Field checkpoint: "CNPL", version, bounds lo/hi (6 f64), resolution
// (3 u32), raw parameters as f32.

inline void write_checkpoint(const fs::path& path, const VoxelField& field) {
  ByteWriter w;
  w.raw("CNPL", 4);
  w.le<std::uint32_t>(kFormatVersion);
  for (int a = 0; a < 3; ++a) w.le<double>(field.bounds().lo[a]);
  for (int a = 0; a < 3; ++a) w.le<double>(field.bounds().hi[a]);
  for (int n : field.resolution()) w.le<std::uint32_t>(static_cast<std::uint32_t>(n));
  for (double v : field.params()) w.le<float>(static_cast<float>(v));
  write_bytes(path, w.bytes().data(), w.bytes().size());
}

inline VoxelField read_checkpoint(const fs::path& path) {
  const auto bytes = read_bytes(path);
  ByteReader r(bytes, path.string());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "CNPL", 4) != 0) throw IoError(path.string() + ": not a field checkpoint");
  if (r.le<std::uint32_t>() != kFormatVersion) throw IoError(path.string() + ": unsupported version");
  Aabb b;
  for (int a = 0; a < 3; ++a) b.lo[a] = r.le<double>();
  for (int a = 0; a < 3; ++a) b.hi[a] = r.le<double>();
  std::array<int, 3> res{};
  for (int& n : res) n = static_cast<int>(r.le<std::uint32_t>());
  VoxelField field;
  try {
    field = VoxelField(b, res);
  } catch (const InputError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (r.remaining() != field.param_count() * sizeof(float)) throw IoError(path.string() + ": payload size mismatch");
  for (double& v : field.params()) v = r.le<float>();
  return field;
}

}  // namespace understory::io
