// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "understory/error.hpp"
#include "understory/math.hpp"

namespace understory {

/// Interleaved RGB raster, row-major. Values are linear radiometry unless a
/// function says otherwise.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, const Rgb& fill = Rgb::Zero()) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < pixel_count(); ++i) set(i, fill);
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }

  Rgb at(std::size_t i) const { return Rgb(data[3 * i], data[3 * i + 1], data[3 * i + 2]); }
  Rgb at(int x, int y) const { return at(index(x, y)); }
  void set(std::size_t i, const Rgb& c) {
    data[3 * i] = c.x();
    data[3 * i + 1] = c.y();
    data[3 * i + 2] = c.z();
  }
  void set(int x, int y, const Rgb& c) { set(index(x, y), c); }
};

/// Single-channel raster (segmentation maps, luminance).
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t pixel_count() const { return data.size(); }
  double& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline void require_same_size(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw InputError("image dimensions differ");
}

inline Plane luminance_plane(const Image& img) {
  Plane out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) out.data[i] = luminance(img.at(i));
  return out;
}

/// Round-trips an image through 8-bit sRGB, as happens when it is stored as PNG.
inline Image quantize_srgb8(const Image& img) {
  Image out = img;
  for (double& v : out.data) {
    const double code = std::round(srgb_encode(v) * 255.0);
    v = srgb_decode(code / 255.0);
  }
  return out;
}

}  // namespace understory
