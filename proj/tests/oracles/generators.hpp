// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "understory/field.hpp"
#include "understory/geometry.hpp"
#include "understory/image.hpp"

namespace oracle {

using understory::Aabb;
using understory::Vec3;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double a = 0.0, double b = 1.0) { return std::uniform_real_distribution<double>(a, b)(rng_); }
  int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }
  Vec3 vec3(double a, double b) { return Vec3(uniform(a, b), uniform(a, b), uniform(a, b)); }
  Vec3 unit() {
    Vec3 v;
    do v = Vec3(normal(), normal(), normal());
    while (v.norm() < 1e-3);
    return v.normalized();
  }
  Vec3 in_box(const Aabb& b) {
    return Vec3(uniform(b.lo.x(), b.hi.x()), uniform(b.lo.y(), b.hi.y()), uniform(b.lo.z(), b.hi.z()));
  }
  std::mt19937_64& engine() { return rng_; }

  /// Field with raw values drawn around typical training magnitudes.
  understory::VoxelField field(const Aabb& bounds, std::array<int, 3> res) {
    understory::VoxelField f(bounds, res);
    for (std::size_t v = 0; v < f.voxel_count(); ++v) {
      f.raw(v, understory::kSigma) = uniform(-2.0, 2.0);
      for (int c = 1; c <= 3; ++c) f.raw(v, c) = uniform(-2.0, 2.0);
      f.raw(v, understory::kVisibility) = uniform(-3.0, 3.0);
    }
    return f;
  }

  /// Ray from outside the box aimed at a random interior point.
  understory::Ray ray_through(const Aabb& b) {
    const Vec3 target = in_box(b);
    const Vec3 d = unit();
    understory::Ray r;
    r.direction = d;
    r.origin = target - d * (b.extent().norm() + 1.0);
    r.t_near = 0.0;
    r.t_far = 1e6;
    return r;
  }

  understory::Image image(int w, int h) {
    understory::Image img(w, h);
    for (double& v : img.data) v = uniform();
    return img;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace oracle
