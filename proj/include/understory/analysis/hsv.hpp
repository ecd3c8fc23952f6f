// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>

#include "understory/error.hpp"
#include "understory/image.hpp"
#include "understory/math.hpp"
#include "understory/point_cloud.hpp"

namespace understory {

struct Hsv {
  double h = 0.0;  ///< [0, 1), circular
  double s = 0.0;
  double v = 0.0;
};

/// Hexcone conversion of a display-encoded color in [0,1]^3.
inline Hsv rgb_to_hsv(const Rgb& c) {
  const double r = c.x(), g = c.y(), b = c.z();
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) return out;
  double h;
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0 + (b - r) / d;
  else
    h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
  out.h = h >= 1.0 ? h - 1.0 : h;
  return out;
}

inline double hue_distance(double a, double b) {
  const double d = std::abs(a - b);
  const double m = std::fmod(d, 1.0);
  return std::min(m, 1.0 - m);
}

/// Canopy selector: a box around a seed color in HSV space.
struct HsvBox {
  Hsv seed;
  double dh = 0.08;
  double ds = 0.35;
  double dv = 0.45;

  static HsvBox around(const Rgb& encoded_seed, double dh = 0.08, double ds = 0.35, double dv = 0.45) {
    return {rgb_to_hsv(encoded_seed), dh, ds, dv};
  }

  bool contains(const Hsv& c) const {
    return hue_distance(c.h, seed.h) <= dh && std::abs(c.s - seed.s) <= ds && std::abs(c.v - seed.v) <= dv;
  }
};

inline void validate(const HsvBox& box) {
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(box.seed.h) || !unit(box.seed.s) || !unit(box.seed.v)) throw InputError("HSV seed must lie in [0,1]");
  if (!unit(box.dh) || !unit(box.ds) || !unit(box.dv)) throw InputError("HSV half-widths must lie in [0,1]");
}

/// HSV is evaluated on sRGB-encoded values, matching how a user picks a
/// seed pixel on screen.
inline Hsv linear_to_hsv(const Rgb& linear) {
  return rgb_to_hsv(Rgb(srgb_encode(linear.x()), srgb_encode(linear.y()), srgb_encode(linear.z())));
}

/// 1 = keep (ground), 0 = canopy.
inline Plane hsv_box_segment(const Image& image, const HsvBox& box) {
  validate(box);
  Plane mask(image.width, image.height, 1.0);
  for (std::size_t i = 0; i < image.pixel_count(); ++i)
    if (box.contains(linear_to_hsv(image.at(i)))) mask.data[i] = 0.0;
  return mask;
}

/// Drops points whose color falls inside the box; order is preserved.
inline PointCloud remove_foliage_points(const PointCloud& cloud, const HsvBox& box) {
  validate(box);
  PointCloud out;
  for (const auto& p : cloud.points)
    if (!box.contains(linear_to_hsv(p.color))) out.points.push_back(p);
  return out;
}

}  // namespace understory
