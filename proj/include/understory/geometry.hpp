// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "understory/error.hpp"
#include "understory/math.hpp"

// World frame is z-up, in meters. Camera frame follows the pinhole/OpenCV
// convention: +z forward, +x right, +y down. Integer pixel p covers
// [p, p+1) and its center is at image coordinate p + 0.5.

namespace understory {

/// Rigid camera-to-world transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 to_world(const Vec3& p_cam) const { return rotation * p_cam + translation; }
  Vec3 to_camera(const Vec3& p_world) const { return rotation.transpose() * (p_world - translation); }
};

struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;
  Pose pose;

  Vec3 center() const { return pose.translation; }
  Vec3 optical_axis() const { return pose.rotation.col(2); }
};

/// Throws InputError when the intrinsics or rotation violate the camera invariants.
inline void validate(const Camera& cam) {
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) throw InputError("camera focal lengths must be positive");
  if (cam.width <= 0 || cam.height <= 0) throw InputError("camera size must be positive");
  if (!(cam.cx > 0.0 && cam.cx < cam.width) || !(cam.cy > 0.0 && cam.cy < cam.height))
    throw InputError("camera principal point must lie inside the image");
  const Mat3& r = cam.pose.rotation;
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho < 1e-9) || !(r.determinant() > 0.0))
    throw InputError("camera rotation must be orthonormal with determinant +1");
  if (!cam.pose.translation.allFinite()) throw InputError("camera translation must be finite");
}

/// Camera-to-world rotation for a camera at `eye` looking at `target`. `up`
/// maps to image-up (-y in the camera frame).
inline Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-12) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return r;
}

/// Straight-down camera whose image +x is world +x and image +y is world -y.
inline Pose nadir_pose(const Vec3& position) {
  Pose p;
  p.rotation = Vec3(1.0, -1.0, -1.0).asDiagonal();
  p.translation = position;
  return p;
}

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

inline void validate(const Ray& ray) {
  if (std::abs(ray.direction.norm() - 1.0) > 1e-9) throw InputError("ray direction must be unit length");
  if (!(ray.t_near >= 0.0) || !(ray.t_near < ray.t_far)) throw InputError("ray bounds must satisfy 0 <= t_near < t_far");
}

/// Far bound used for camera rays before clipping to a scene volume.
inline constexpr double kDefaultFar = 1.0e6;

/// Ray through continuous pixel coordinate (px, py); integer pixels map to their centers.
inline Ray ray_for_pixel(const Camera& cam, double px, double py) {
  if (!(px >= 0.0 && px < cam.width && py >= 0.0 && py < cam.height))
    throw InputError("pixel (" + std::to_string(px) + ", " + std::to_string(py) + ") outside the image");
  const Vec3 dir_cam((px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = cam.center();
  ray.direction = (cam.pose.rotation * dir_cam).normalized();
  ray.t_near = 0.0;
  ray.t_far = kDefaultFar;
  return ray;
}

/// Projects a world point to continuous pixel coordinates (inverse of
/// ray_for_pixel). Returns nullopt for points behind the camera.
inline std::optional<Vec2> project(const Camera& cam, const Vec3& p_world) {
  const Vec3 p = cam.pose.to_camera(p_world);
  if (!(p.z() > 0.0)) return std::nullopt;
  return Vec2(cam.fx * p.x() / p.z() + cam.cx - 0.5, cam.fy * p.y() / p.z() + cam.cy - 0.5);
}

/// Axis-aligned box.
struct Aabb {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();

  Vec3 extent() const { return hi - lo; }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

/// Parametric overlap of the ray segment [t_near, t_far] with the box.
inline std::optional<std::pair<double, double>> intersect(const Ray& ray, const Aabb& box) {
  double t0 = ray.t_near;
  double t1 = ray.t_far;
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    const double o = ray.origin[a];
    if (std::abs(d) < 1e-300) {
      if (o < box.lo[a] || o > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o) / d;
    double tb = (box.hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

/// Raster of terrain heights. Node (row, col) sits at
/// origin + (col * cell_size, row * cell_size); heights are row-major.
class Dtm {
 public:
  Dtm() = default;

  Dtm(Vec2 origin, double cell_size, int rows, int cols, std::vector<double> heights)
      : origin_(std::move(origin)), cell_size_(cell_size), rows_(rows), cols_(cols), heights_(std::move(heights)) {
    if (!(cell_size_ > 0.0)) throw InputError("dtm cell_size must be positive");
    if (rows_ < 1 || cols_ < 1) throw InputError("dtm needs at least one row and column");
    if (heights_.size() != static_cast<std::size_t>(rows_) * static_cast<std::size_t>(cols_))
      throw InputError("dtm raster length does not match rows*cols");
    min_height_ = std::numeric_limits<double>::infinity();
    max_height_ = -std::numeric_limits<double>::infinity();
    for (double h : heights_) {
      if (!std::isfinite(h)) throw InputError("dtm heights must be finite");
      min_height_ = std::min(min_height_, h);
      max_height_ = std::max(max_height_, h);
    }
  }

  /// Constant-height raster covering [origin, origin + extent].
  static Dtm flat(const Vec2& origin, double extent, double cell_size, double height) {
    const int n = std::max(2, static_cast<int>(std::ceil(extent / cell_size)) + 1);
    return Dtm(origin, cell_size, n, n, std::vector<double>(static_cast<std::size_t>(n) * n, height));
  }

  const Vec2& origin() const { return origin_; }
  double cell_size() const { return cell_size_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const std::vector<double>& heights() const { return heights_; }
  double node(int row, int col) const { return heights_[static_cast<std::size_t>(row) * cols_ + col]; }
  double min_height() const { return min_height_; }
  double max_height() const { return max_height_; }

  Vec2 footprint_lo() const { return origin_; }
  Vec2 footprint_hi() const { return origin_ + Vec2((cols_ - 1) * cell_size_, (rows_ - 1) * cell_size_); }
  bool in_footprint(double x, double y) const {
    const Vec2 lo = footprint_lo();
    const Vec2 hi = footprint_hi();
    return x >= lo.x() && x <= hi.x() && y >= lo.y() && y <= hi.y();
  }

 private:
  Vec2 origin_ = Vec2::Zero();
  double cell_size_ = 1.0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> heights_;
  double min_height_ = 0.0;
  double max_height_ = 0.0;
};

struct HeightQuery {
  double height = 0.0;
  /// Set when the query fell outside the footprint and was clamped to its edge.
  bool clamped = false;
};

/// Bilinear interpolation of the four surrounding nodes.
inline HeightQuery dtm_height(const Dtm& dtm, double x, double y) {
  HeightQuery q;
  double u = (x - dtm.origin().x()) / dtm.cell_size();
  double v = (y - dtm.origin().y()) / dtm.cell_size();
  const double umax = dtm.cols() - 1;
  const double vmax = dtm.rows() - 1;
  if (!(u >= 0.0 && u <= umax && v >= 0.0 && v <= vmax)) {
    q.clamped = true;
    u = std::clamp(std::isfinite(u) ? u : 0.0, 0.0, umax);
    v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, vmax);
  }
  const int c0 = std::min(static_cast<int>(u), std::max(0, dtm.cols() - 2));
  const int r0 = std::min(static_cast<int>(v), std::max(0, dtm.rows() - 2));
  const int c1 = std::min(c0 + 1, dtm.cols() - 1);
  const int r1 = std::min(r0 + 1, dtm.rows() - 1);
  const double fu = u - c0;
  const double fv = v - r0;
  const double h0 = dtm.node(r0, c0) * (1.0 - fu) + dtm.node(r0, c1) * fu;
  const double h1 = dtm.node(r1, c0) * (1.0 - fu) + dtm.node(r1, c1) * fu;
  q.height = h0 * (1.0 - fv) + h1 * fv;
  return q;
}

/// Smallest t in [t_near, t_far] at which the ray altitude drops to
/// dtm_height + margin, or t_far if it never does. Marches on a grid of step
/// cell_size/2 anchored at t_near, then bisects the bracketing step to
/// 1e-4 * cell_size.
inline double ray_ground_entry(const Ray& ray, const Dtm& dtm, double margin) {
  const double step = 0.5 * dtm.cell_size();
  const double tol = 1e-4 * dtm.cell_size();
  auto gap = [&](double t) {
    const Vec3 p = ray.at(t);
    return p.z() - (dtm_height(dtm, p.x(), p.y()).height + margin);
  };

  // No root above the highest terrain point plus margin.
  const double z_top = dtm.max_height() + margin;
  double t_start = ray.t_near;
  const double dz = ray.direction.z();
  if (ray.at(ray.t_near).z() > z_top) {
    if (dz >= 0.0) return ray.t_far;
    const double t_slab = (z_top - ray.origin.z()) / dz;
    if (t_slab >= ray.t_far) return ray.t_far;
    t_start = ray.t_near + std::floor((t_slab - ray.t_near) / step) * step;
  }

  if (t_start <= ray.t_near && gap(ray.t_near) <= 0.0) return ray.t_near;

  // Grid points before t_start lie above z_top, so the gap there is positive.
  double prev = t_start - step;
  bool found = false;
  double hit = ray.t_far;
  for (long k = t_start > ray.t_near ? 0 : 1;; ++k) {
    double t = t_start + static_cast<double>(k) * step;
    const bool last = t >= ray.t_far;
    if (last) t = ray.t_far;
    if (gap(t) <= 0.0) {
      found = true;
      hit = t;
      break;
    }
    if (last) break;
    prev = t;
  }
  if (!found) return ray.t_far;

  double lo = prev;
  double hi = hit;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (gap(mid) <= 0.0)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

}  // namespace understory
