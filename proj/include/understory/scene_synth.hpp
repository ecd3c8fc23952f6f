// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "understory/error.hpp"
#include "understory/field.hpp"
#include "understory/geometry.hpp"
#include "understory/image.hpp"
#include "understory/math.hpp"
#include "understory/parallel.hpp"

namespace understory {

/// Vertical opaque cylinder standing on the terrain.
struct Stem {
  Vec2 base = Vec2::Zero();
  double base_z = 0.0;  ///< bottom of the cylinder (slightly below the terrain)
  double height = 1.0;  ///< above the terrain at the base
  double radius = 0.2;
  Rgb albedo = Rgb(0.3, 0.25, 0.2);

  double top_z() const { return base_z + kSink + height; }
  static constexpr double kSink = 0.2;
};

/// Homogeneous ellipsoid of foliage. Its density makes the vertical chord
/// through the center exactly `opacity` opaque.
struct CanopyBlob {
  Vec3 center = Vec3::Zero();
  Vec3 radii = Vec3::Ones();
  Rgb albedo = Rgb(0.1, 0.4, 0.1);
  double opacity = 0.5;

  double density() const { return -std::log1p(-opacity) / (2.0 * radii.z()); }
};

/// Flat colored rectangle lying on the terrain (axis aligned).
struct GroundTarget {
  Vec2 center = Vec2::Zero();
  Vec2 half_size = Vec2(0.5, 1.0);
  Rgb albedo = Rgb(0.8, 0.1, 0.1);
};

/// Two-octave value noise blending between two albedos.
struct GroundTexture {
  std::uint64_t seed = 1;
  double feature_size = 3.0;
  Rgb dark = Rgb(0.12, 0.09, 0.06);
  Rgb light = Rgb(0.45, 0.38, 0.26);
};

/// Ground shading: ambient + direct * (sun transmittance through the canopy).
/// `shadow_split_x` puts every ground point with x below it in hard shadow.
struct Lighting {
  double ambient = 1.0;
  double direct = 0.0;
  Vec3 sun_direction = Vec3(0.3, 0.2, 1.0).normalized();  ///< towards the sun
  std::optional<double> shadow_split_x;
};

struct AnalyticScene {
  Dtm terrain;
  GroundTexture texture;
  std::vector<Stem> stems;
  std::vector<CanopyBlob> canopy;
  std::vector<GroundTarget> targets;
  Rgb background = Rgb::Zero();
  Lighting lighting;

  /// Tight box around terrain, stems and canopy.
  Aabb bounds() const {
    Aabb b;
    const Vec2 lo = terrain.footprint_lo();
    const Vec2 hi = terrain.footprint_hi();
    double zmax = terrain.max_height();
    for (const auto& s : stems) zmax = std::max(zmax, s.top_z());
    for (const auto& c : canopy) zmax = std::max(zmax, c.center.z() + c.radii.z());
    b.lo = Vec3(lo.x(), lo.y(), terrain.min_height() - Stem::kSink);
    b.hi = Vec3(hi.x(), hi.y(), zmax);
    return b;
  }
};

inline void validate(const AnalyticScene& scene) {
  const Vec2 lo = scene.terrain.footprint_lo();
  const Vec2 hi = scene.terrain.footprint_hi();
  auto inside = [&](double x, double y) { return x >= lo.x() && x <= hi.x() && y >= lo.y() && y <= hi.y(); };
  for (const auto& s : scene.stems) {
    if (!(s.height > 0.0) || !(s.radius > 0.0)) throw InputError("stem height and radius must be positive");
    if (!inside(s.base.x() - s.radius, s.base.y() - s.radius) || !inside(s.base.x() + s.radius, s.base.y() + s.radius))
      throw InputError("stem outside the terrain footprint");
  }
  for (const auto& c : scene.canopy) {
    if (!(c.opacity > 0.0 && c.opacity < 1.0)) throw InputError("blob opacity must lie in (0, 1)");
    if (!(c.radii.array() > 0.0).all()) throw InputError("blob radii must be positive");
    if (!inside(c.center.x() - c.radii.x(), c.center.y() - c.radii.y()) ||
        !inside(c.center.x() + c.radii.x(), c.center.y() + c.radii.y()))
      throw InputError("blob outside the terrain footprint");
  }
}

// ---------------------------------------------------------------------------
// Ground appearance

namespace detail {

inline double lattice_value(std::uint64_t seed, long ix, long iy) {
  const auto key = static_cast<std::uint64_t>(ix) * 0x9E3779B1ULL ^ (static_cast<std::uint64_t>(iy) << 32);
  return SplitMix64(seed, key).uniform();
}

inline double smooth_value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long ix = static_cast<long>(fx), iy = static_cast<long>(fy);
  double u = x - fx, v = y - fy;
  u = u * u * (3.0 - 2.0 * u);
  v = v * v * (3.0 - 2.0 * v);
  const double a = lattice_value(seed, ix, iy), b = lattice_value(seed, ix + 1, iy);
  const double c = lattice_value(seed, ix, iy + 1), d = lattice_value(seed, ix + 1, iy + 1);
  return (a * (1 - u) + b * u) * (1 - v) + (c * (1 - u) + d * u) * v;
}

}  // namespace detail

/// Unshaded ground albedo at (x, y), targets included when requested.
inline Rgb ground_albedo(const AnalyticScene& scene, double x, double y, bool with_targets = true) {
  if (with_targets) {
    for (const auto& t : scene.targets)
      if (std::abs(x - t.center.x()) <= t.half_size.x() && std::abs(y - t.center.y()) <= t.half_size.y())
        return t.albedo;
  }
  const auto& tex = scene.texture;
  const double s = 1.0 / tex.feature_size;
  const double n = 0.7 * detail::smooth_value_noise(tex.seed, x * s, y * s) +
                   0.3 * detail::smooth_value_noise(tex.seed + 17, 2.0 * x * s, 2.0 * y * s);
  return tex.dark + n * (tex.light - tex.dark);
}

/// Chord [t_in, t_out] of a ray with an ellipsoid, t unrestricted.
inline std::optional<std::pair<double, double>> ellipsoid_chord(const Vec3& o, const Vec3& d, const CanopyBlob& b) {
  const Vec3 oc = (o - b.center).cwiseQuotient(b.radii);
  const Vec3 dc = d.cwiseQuotient(b.radii);
  const double a = dc.squaredNorm();
  const double bh = oc.dot(dc);
  const double c = oc.squaredNorm() - 1.0;
  const double disc = bh * bh - a * c;
  if (!(disc > 0.0)) return std::nullopt;
  const double sq = std::sqrt(disc);
  return std::make_pair((-bh - sq) / a, (-bh + sq) / a);
}

/// Fraction of direct sunlight reaching a ground point.
inline double sun_transmittance(const AnalyticScene& scene, const Vec3& p) {
  const Lighting& L = scene.lighting;
  if (L.shadow_split_x && p.x() < *L.shadow_split_x) return 0.0;
  double optical_depth = 0.0;
  for (const auto& b : scene.canopy) {
    const auto chord = ellipsoid_chord(p, L.sun_direction, b);
    if (!chord) continue;
    const double t0 = std::max(0.0, chord->first);
    if (chord->second > t0) optical_depth += b.density() * (chord->second - t0);
  }
  return std::exp(-optical_depth);
}

/// Shaded ground color at a terrain point.
inline Rgb ground_color(const AnalyticScene& scene, const Vec3& p, bool with_targets = true) {
  const Rgb albedo = ground_albedo(scene, p.x(), p.y(), with_targets);
  const Lighting& L = scene.lighting;
  double light = L.ambient;
  if (L.direct > 0.0) light += L.direct * sun_transmittance(scene, p);
  return (albedo * light).cwiseMin(1.0);
}

// ---------------------------------------------------------------------------
// Forest generation

struct ForestParams {
  std::uint64_t seed = 1;
  double extent = 30.0;  ///< side of the square terrain, meters
  int n_stems = 12;
  double canopy_density = 0.6;  ///< 0 disables foliage; scales crown size
  std::pair<double, double> blob_opacity_range{0.35, 0.75};

  std::pair<double, double> stem_radius_range{0.15, 0.3};
  std::pair<double, double> stem_height_range{6.0, 9.0};
  double terrain_relief = 1.0;
  double dtm_cell = 0.5;
  double texture_feature_size = 3.0;
  int n_targets = 3;
  double edge_margin = 1.0;
  Rgb background = Rgb::Zero();
  Lighting lighting;
};

/// Largest count a hexagonal lattice with the given spacing places inside a
/// square of side `side`.
inline int hex_lattice_capacity(double side, double spacing) {
  if (side < 0.0) return 0;
  const double row_pitch = spacing * std::sqrt(3.0) / 2.0;
  const int rows = static_cast<int>(std::floor(side / row_pitch + 1e-9)) + 1;
  const int even = static_cast<int>(std::floor(side / spacing + 1e-9)) + 1;
  const int odd = side >= spacing / 2.0 ? static_cast<int>(std::floor((side - spacing / 2.0) / spacing + 1e-9)) + 1 : 0;
  return (rows + 1) / 2 * even + rows / 2 * odd;
}

namespace detail {

inline std::vector<Vec2> hex_lattice(double lo, double side, double spacing) {
  std::vector<Vec2> pts;
  const double row_pitch = spacing * std::sqrt(3.0) / 2.0;
  for (int r = 0; r * row_pitch <= side + 1e-9; ++r) {
    const double off = (r % 2) ? spacing / 2.0 : 0.0;
    for (double x = off; x <= side + 1e-9; x += spacing) pts.emplace_back(lo + x, lo + r * row_pitch);
  }
  return pts;
}

/// Poisson-disk positions by dart throwing; falls back to a random subset of
/// the hexagonal lattice when dart throwing stalls.
inline std::vector<Vec2> poisson_disk(std::mt19937_64& rng, int n, double lo, double side, double min_sep) {
  std::vector<Vec2> pts;
  std::uniform_real_distribution<double> u(lo, lo + side);
  const long max_attempts = 20000L * std::max(1, n);
  for (long a = 0; a < max_attempts && static_cast<int>(pts.size()) < n; ++a) {
    const Vec2 c(u(rng), u(rng));
    bool ok = true;
    for (const auto& p : pts)
      if ((p - c).norm() < min_sep) {
        ok = false;
        break;
      }
    if (ok) pts.push_back(c);
  }
  if (static_cast<int>(pts.size()) == n) return pts;
  auto lattice = hex_lattice(lo, side, min_sep);
  std::shuffle(lattice.begin(), lattice.end(), rng);
  lattice.resize(static_cast<std::size_t>(n));
  return lattice;
}

}  // namespace detail

/// Deterministic procedural forest: value-noise terrain, Poisson-disk stems
/// each crowned by 3-8 foliage blobs, and a few ground targets.
inline AnalyticScene generate_forest(const ForestParams& p) {
  if (p.n_stems < 0) throw InputError("n_stems must be non-negative");
  if (!(p.extent > 0.0)) throw InputError("extent must be positive");
  if (!(p.blob_opacity_range.first > 0.0 && p.blob_opacity_range.second < 1.0 &&
        p.blob_opacity_range.first <= p.blob_opacity_range.second))
    throw InputError("blob opacity range must lie inside (0, 1)");
  if (!(p.canopy_density >= 0.0)) throw InputError("canopy_density must be non-negative");

  std::mt19937_64 rng(p.seed);
  auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

  AnalyticScene scene;
  scene.background = p.background;
  scene.lighting = p.lighting;
  scene.texture.seed = rng();
  scene.texture.feature_size = p.texture_feature_size;

  const int n_nodes = std::max(2, static_cast<int>(std::ceil(p.extent / p.dtm_cell)) + 1);
  const double cell = p.extent / (n_nodes - 1);
  const std::uint64_t relief_seed = rng();
  std::vector<double> heights(static_cast<std::size_t>(n_nodes) * n_nodes);
  for (int r = 0; r < n_nodes; ++r)
    for (int c = 0; c < n_nodes; ++c) {
      const double n = detail::smooth_value_noise(relief_seed, c * cell / 8.0, r * cell / 8.0);
      heights[static_cast<std::size_t>(r) * n_nodes + c] = p.terrain_relief * (n - 0.5);
    }
  scene.terrain = Dtm(Vec2::Zero(), cell, n_nodes, n_nodes, std::move(heights));

  // Crown geometry scales with canopy density; stems keep clear of the edge
  // so their crowns stay inside the footprint.
  const double crown = p.canopy_density;
  const double crown_reach = crown > 0.0 ? 1.7 * crown + 1.2 * crown : 0.0;
  const double margin = std::max(p.edge_margin, crown_reach) + p.stem_radius_range.second;
  const double side = p.extent - 2.0 * margin;
  const double min_sep = 4.0 * p.stem_radius_range.second;
  const int capacity = hex_lattice_capacity(side, min_sep);
  if (p.n_stems > capacity)
    throw InputError("cannot place " + std::to_string(p.n_stems) + " stems at separation " + std::to_string(min_sep) +
                     " m in extent " + std::to_string(p.extent) + " m; max feasible count is " +
                     std::to_string(capacity));

  const auto bases = p.n_stems > 0 ? detail::poisson_disk(rng, p.n_stems, margin, side, min_sep) : std::vector<Vec2>{};
  const Vec2 fp_lo = scene.terrain.footprint_lo();
  const Vec2 fp_hi = scene.terrain.footprint_hi();
  for (const Vec2& b : bases) {
    Stem s;
    s.base = b;
    s.radius = uniform(p.stem_radius_range.first, p.stem_radius_range.second);
    s.height = uniform(p.stem_height_range.first, p.stem_height_range.second);
    s.base_z = dtm_height(scene.terrain, b.x(), b.y()).height - Stem::kSink;
    const double shade = uniform(0.8, 1.2);
    s.albedo = (Rgb(0.34, 0.30, 0.27) * shade).cwiseMin(0.95);
    scene.stems.push_back(s);

    if (crown <= 0.0) continue;
    const int n_blobs = std::uniform_int_distribution<int>(3, 8)(rng);
    const double top = s.top_z();
    for (int k = 0; k < n_blobs; ++k) {
      CanopyBlob blob;
      const double rxy = uniform(0.9, 1.7) * crown;
      blob.radii = Vec3(rxy * uniform(0.85, 1.15), rxy * uniform(0.85, 1.15), uniform(0.6, 1.1) * crown);
      const double ang = uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = uniform(0.0, 1.2 * crown);
      Vec2 c = b + dist * Vec2(std::cos(ang), std::sin(ang));
      c.x() = std::clamp(c.x(), fp_lo.x() + blob.radii.x() + 1e-6, fp_hi.x() - blob.radii.x() - 1e-6);
      c.y() = std::clamp(c.y(), fp_lo.y() + blob.radii.y() + 1e-6, fp_hi.y() - blob.radii.y() - 1e-6);
      blob.center = Vec3(c.x(), c.y(), top - uniform(0.0, 1.5) * crown);
      blob.opacity = uniform(p.blob_opacity_range.first, p.blob_opacity_range.second);
      const double g = uniform(0.8, 1.2);
      blob.albedo = (Rgb(0.10, 0.32, 0.08) * g).cwiseMin(0.95);
      scene.canopy.push_back(blob);
    }
  }

  static const std::array<Rgb, 4> kTargetColors = {Rgb(0.85, 0.12, 0.10), Rgb(0.15, 0.25, 0.85),
                                                     Rgb(0.90, 0.80, 0.15), Rgb(0.85, 0.85, 0.85)};
  for (int k = 0; k < p.n_targets; ++k) {
    GroundTarget t;
    t.half_size = Vec2(uniform(0.35, 0.6), uniform(0.8, 1.1));
    if (uniform(0.0, 1.0) < 0.5) std::swap(t.half_size.x(), t.half_size.y());
    const double m = p.edge_margin + 1.2;
    t.center = Vec2(uniform(m, p.extent - m), uniform(m, p.extent - m));
    t.albedo = kTargetColors[static_cast<std::size_t>(k) % kTargetColors.size()];
    scene.targets.push_back(t);
  }
  validate(scene);
  return scene;
}

// ---------------------------------------------------------------------------
// Closed-form oracle

struct Layers {
  bool terrain = true;
  bool canopy = true;
  bool stems = true;
  bool targets = true;

  static Layers all() { return {}; }
  static Layers ground_only() { return {true, false, true, true}; }
  static Layers none() { return {false, false, false, false}; }
};

struct OracleHit {
  Rgb color = Rgb::Zero();
  /// False when a foliage blob is the front-most surface along the ray.
  bool ground_visible = true;
};

namespace detail {

/// Entry of the ray into a vertical cylinder (side or top cap).
inline std::optional<double> stem_hit(const Ray& ray, const Stem& s) {
  const Vec3& o = ray.origin;
  const Vec3& d = ray.direction;
  double best = std::numeric_limits<double>::infinity();
  const double top = s.top_z();
  const double a = d.x() * d.x() + d.y() * d.y();
  const double ox = o.x() - s.base.x(), oy = o.y() - s.base.y();
  if (a > 1e-18) {
    const double bh = ox * d.x() + oy * d.y();
    const double c = ox * ox + oy * oy - s.radius * s.radius;
    const double disc = bh * bh - a * c;
    if (disc >= 0.0) {
      const double t = (-bh - std::sqrt(disc)) / a;
      const double z = o.z() + t * d.z();
      if (t >= ray.t_near && t <= ray.t_far && z >= s.base_z && z <= top) best = t;
    }
  }
  if (std::abs(d.z()) > 1e-18) {
    const double t = (top - o.z()) / d.z();
    if (t >= ray.t_near && t <= ray.t_far) {
      const double x = ox + t * d.x(), y = oy + t * d.y();
      if (x * x + y * y <= s.radius * s.radius) best = std::min(best, t);
    }
  }
  if (std::isfinite(best)) return best;
  return std::nullopt;
}

inline std::optional<double> terrain_hit(const Ray& ray, const Dtm& dtm) {
  Aabb box;
  box.lo = Vec3(dtm.footprint_lo().x(), dtm.footprint_lo().y(), dtm.min_height() - 1.0);
  box.hi = Vec3(dtm.footprint_hi().x(), dtm.footprint_hi().y(), dtm.max_height() + 1.0);
  const auto span = intersect(ray, box);
  if (!span) return std::nullopt;
  Ray clipped = ray;
  clipped.t_near = span->first;
  clipped.t_far = span->second;
  const double t = ray_ground_entry(clipped, dtm, 0.0);
  const Vec3 p = ray.at(t);
  if (p.z() <= dtm_height(dtm, p.x(), p.y()).height + 1e-9) return t;
  return std::nullopt;
}

}  // namespace detail

/// Exact layered compositing along one ray: opaque terrain and stems,
/// homogeneous foliage blobs composited front to back in depth order.
inline OracleHit oracle_trace(const AnalyticScene& scene, const Ray& ray, const Layers& layers) {
  double t_opaque = std::numeric_limits<double>::infinity();
  Rgb opaque_color = scene.background;

  if (layers.terrain) {
    if (const auto t = detail::terrain_hit(ray, scene.terrain)) {
      t_opaque = *t;
      opaque_color = ground_color(scene, ray.at(*t), layers.targets);
    }
  }
  if (layers.stems) {
    for (const auto& s : scene.stems)
      if (const auto t = detail::stem_hit(ray, s); t && *t < t_opaque) {
        t_opaque = *t;
        opaque_color = s.albedo;
      }
  }

  OracleHit out;
  if (!layers.canopy || scene.canopy.empty()) {
    out.color = opaque_color;
    return out;
  }

  struct Interval {
    double t0, t1;
    const CanopyBlob* blob;
  };
  std::vector<Interval> chords;
  std::vector<double> cuts;
  for (const auto& b : scene.canopy) {
    const auto ch = ellipsoid_chord(ray.origin, ray.direction, b);
    if (!ch) continue;
    const double t0 = std::max(ch->first, ray.t_near);
    const double t1 = std::min({ch->second, ray.t_far, t_opaque});
    if (t1 <= t0) continue;
    chords.push_back({t0, t1, &b});
    cuts.push_back(t0);
    cuts.push_back(t1);
  }
  if (chords.empty()) {
    out.color = opaque_color;
    return out;
  }
  out.ground_visible = false;
  std::sort(cuts.begin(), cuts.end());
  Rgb color = Rgb::Zero();
  double trans = 1.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    if (b <= a) continue;
    const double mid = 0.5 * (a + b);
    double sigma = 0.0;
    Rgb sc = Rgb::Zero();
    for (const auto& iv : chords)
      if (iv.t0 <= mid && mid < iv.t1) {
        sigma += iv.blob->density();
        sc += iv.blob->density() * iv.blob->albedo;
      }
    if (sigma <= 0.0) continue;
    const double alpha = -std::expm1(-sigma * (b - a));
    color += trans * alpha * (sc / sigma);
    trans *= 1.0 - alpha;
  }
  out.color = color + trans * opaque_color;
  return out;
}

inline Image oracle_render(const AnalyticScene& scene, const Camera& camera, const Layers& layers, int threads = 1) {
  validate(camera);
  Image img(camera.width, camera.height);
  parallel_chunks(static_cast<std::size_t>(camera.height), threads, [&](int, std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x)
        img.set(x, static_cast<int>(y), oracle_trace(scene, ray_for_pixel(camera, x, static_cast<double>(y)), layers).color);
  });
  return img;
}

/// 1 where the front-most surface is not foliage, 0 otherwise.
inline Plane segmentation_map(const AnalyticScene& scene, const Camera& camera, int threads = 1) {
  Plane seg(camera.width, camera.height, 1.0);
  parallel_chunks(static_cast<std::size_t>(camera.height), threads, [&](int, std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const auto hit = oracle_trace(scene, ray_for_pixel(camera, x, static_cast<double>(y)), Layers::all());
        seg(x, static_cast<int>(y)) = hit.ground_visible ? 1.0 : 0.0;
      }
  });
  return seg;
}

// ---------------------------------------------------------------------------
// Capture simulation

struct CaptureConfig {
  int n_x = 6;
  int n_y = 6;
  double spacing = 3.0;
  double altitude = 40.0;
  std::optional<Vec2> grid_center;  ///< defaults to the terrain center
  int width = 128;
  int height = 128;
  std::optional<double> focal_px;  ///< derived from gsd_target when absent
  double gsd_target = 0.1;         ///< meters per pixel at the mean terrain height
  double exposure_gain = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 7;
};

inline double capture_focal(const CaptureConfig& cfg, const AnalyticScene& scene) {
  if (cfg.focal_px) return *cfg.focal_px;
  const double ground = 0.5 * (scene.terrain.min_height() + scene.terrain.max_height());
  return (cfg.altitude - ground) / cfg.gsd_target;
}

/// Ground sample distance actually achieved: (altitude - ground) / focal.
inline double capture_gsd(const CaptureConfig& cfg, const AnalyticScene& scene) {
  const double ground = 0.5 * (scene.terrain.min_height() + scene.terrain.max_height());
  return (cfg.altitude - ground) / capture_focal(cfg, scene);
}

inline void validate(const CaptureConfig& cfg, const AnalyticScene& scene) {
  if (cfg.n_x < 1 || cfg.n_y < 1) throw InputError("capture grid needs n_x, n_y >= 1");
  if (!(cfg.gsd_target > 0.0)) throw InputError("gsd_target must be positive");
  if (cfg.width < 1 || cfg.height < 1) throw InputError("capture image size must be positive");
  if (!(cfg.altitude > scene.bounds().hi.z())) throw InputError("capture altitude must clear terrain and canopy");
  if (!(cfg.exposure_gain >= 0.0) || !(cfg.noise_sigma >= 0.0)) throw InputError("gain and noise must be non-negative");
}

inline std::vector<Camera> capture_cameras(const CaptureConfig& cfg, const AnalyticScene& scene) {
  validate(cfg, scene);
  const Vec2 center = cfg.grid_center.value_or(0.5 * (scene.terrain.footprint_lo() + scene.terrain.footprint_hi()));
  const double f = capture_focal(cfg, scene);
  std::vector<Camera> cams;
  for (int j = 0; j < cfg.n_y; ++j)
    for (int i = 0; i < cfg.n_x; ++i) {
      Camera cam;
      cam.fx = cam.fy = f;
      cam.width = cfg.width;
      cam.height = cfg.height;
      cam.cx = 0.5 * cfg.width;
      cam.cy = 0.5 * cfg.height;
      const Vec2 xy = center + cfg.spacing * Vec2(i - 0.5 * (cfg.n_x - 1), j - 0.5 * (cfg.n_y - 1));
      cam.pose = nadir_pose(Vec3(xy.x(), xy.y(), cfg.altitude));
      cams.push_back(cam);
    }
  return cams;
}

struct Dataset {
  std::vector<Camera> cameras;
  std::vector<std::string> names;
  std::vector<Image> images;        ///< linear RGB
  std::vector<Plane> segmentation;  ///< empty, or one map per image
  Dtm dtm;

  std::size_t size() const { return images.size(); }
};

inline std::string view_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu", i);
  return buf;
}

/// Renders every camera with all layers, applies exposure gain, additive
/// Gaussian noise (linear RGB) and clamps to [0, 1].
inline Dataset generate_capture(const AnalyticScene& scene, const CaptureConfig& cfg, int threads = 1) {
  Dataset ds;
  ds.cameras = capture_cameras(cfg, scene);
  ds.dtm = scene.terrain;
  for (std::size_t v = 0; v < ds.cameras.size(); ++v) {
    Image img = oracle_render(scene, ds.cameras[v], Layers::all(), threads);
    if (cfg.exposure_gain != 1.0 || cfg.noise_sigma > 0.0) {
      std::mt19937_64 rng(cfg.seed * 1000003ULL + v);
      std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
      for (double& x : img.data) {
        x *= cfg.exposure_gain;
        if (cfg.noise_sigma > 0.0) x += noise(rng);
        x = std::clamp(x, 0.0, 1.0);
      }
    }
    ds.images.push_back(std::move(img));
    ds.segmentation.push_back(segmentation_map(scene, ds.cameras[v], threads));
    ds.names.push_back(view_name(v));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Scene to voxel field

struct VoxelizeOptions {
  int supersample = 2;         ///< sub-samples per axis and voxel
  double solid_density = 40.0;  ///< 1/m, terrain and stems
  double empty_density = 1e-6;
};

/// Density and density-weighted color of the scene at one point.
struct ScenePointSample {
  double sigma = 0.0;
  Rgb weighted_color = Rgb::Zero();
  double foliage_sigma = 0.0;
};

namespace detail {

/// Buckets scene primitives by the 2D cells their footprints overlap.
class PrimitiveBins {
 public:
  PrimitiveBins(const AnalyticScene& scene, double cell) : scene_(scene), cell_(cell) {
    lo_ = scene.terrain.footprint_lo();
    const Vec2 hi = scene.terrain.footprint_hi();
    nx_ = std::max(1, static_cast<int>(std::ceil((hi.x() - lo_.x()) / cell_)));
    ny_ = std::max(1, static_cast<int>(std::ceil((hi.y() - lo_.y()) / cell_)));
    stems_.resize(static_cast<std::size_t>(nx_) * ny_);
    blobs_.resize(static_cast<std::size_t>(nx_) * ny_);
    for (std::size_t i = 0; i < scene.stems.size(); ++i) {
      const auto& s = scene.stems[i];
      add(stems_, i, s.base - Vec2::Constant(s.radius), s.base + Vec2::Constant(s.radius));
    }
    for (std::size_t i = 0; i < scene.canopy.size(); ++i) {
      const auto& b = scene.canopy[i];
      add(blobs_, i, b.center.head<2>() - b.radii.head<2>(), b.center.head<2>() + b.radii.head<2>());
    }
  }

  ScenePointSample sample(const Vec3& p, double solid) const {
    ScenePointSample s;
    const std::size_t cell = cell_of(p.x(), p.y());
    if (p.z() < dtm_height(scene_.terrain, p.x(), p.y()).height) {
      s.sigma += solid;
      s.weighted_color += solid * ground_color(scene_, p);
    }
    for (std::size_t i : stems_[cell]) {
      const auto& st = scene_.stems[i];
      if (p.z() >= st.base_z && p.z() <= st.top_z() && (p.head<2>() - st.base).squaredNorm() <= st.radius * st.radius) {
        s.sigma += solid;
        s.weighted_color += solid * st.albedo;
      }
    }
    for (std::size_t i : blobs_[cell]) {
      const auto& b = scene_.canopy[i];
      if ((p - b.center).cwiseQuotient(b.radii).squaredNorm() <= 1.0) {
        const double d = b.density();
        s.sigma += d;
        s.foliage_sigma += d;
        s.weighted_color += d * b.albedo;
      }
    }
    return s;
  }

 private:
  void add(std::vector<std::vector<std::size_t>>& bins, std::size_t id, const Vec2& a, const Vec2& b) {
    const int i0 = std::clamp(static_cast<int>(std::floor((a.x() - lo_.x()) / cell_)), 0, nx_ - 1);
    const int i1 = std::clamp(static_cast<int>(std::floor((b.x() - lo_.x()) / cell_)), 0, nx_ - 1);
    const int j0 = std::clamp(static_cast<int>(std::floor((a.y() - lo_.y()) / cell_)), 0, ny_ - 1);
    const int j1 = std::clamp(static_cast<int>(std::floor((b.y() - lo_.y()) / cell_)), 0, ny_ - 1);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) bins[static_cast<std::size_t>(j) * nx_ + i].push_back(id);
  }
  std::size_t cell_of(double x, double y) const {
    const int i = std::clamp(static_cast<int>(std::floor((x - lo_.x()) / cell_)), 0, nx_ - 1);
    const int j = std::clamp(static_cast<int>(std::floor((y - lo_.y()) / cell_)), 0, ny_ - 1);
    return static_cast<std::size_t>(j) * nx_ + i;
  }

  const AnalyticScene& scene_;
  double cell_;
  Vec2 lo_;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<std::size_t>> stems_, blobs_;
};

}  // namespace detail

/// Box-filtered voxelization of the scene. Foliage-dominated voxels get
/// visibility ~0, everything else ~1; empty voxels take the ground color
/// of their column so interpolation does not bleed foreign colors.
inline VoxelField voxelize_scene(const AnalyticScene& scene, const Aabb& bounds, std::array<int, 3> resolution,
                                 const VoxelizeOptions& opt = {}, int threads = 1) {
  VoxelField field(bounds, resolution);
  const detail::PrimitiveBins bins(scene, 2.0);
  const int ss = std::max(1, opt.supersample);
  const Vec3 vs = field.voxel_size();
  const auto& res = field.resolution();
  parallel_chunks(static_cast<std::size_t>(res[2]), threads, [&](int, std::size_t k0, std::size_t k1) {
    for (int k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
      for (int j = 0; j < res[1]; ++j)
        for (int i = 0; i < res[0]; ++i) {
          const Vec3 corner = bounds.lo + Vec3(i, j, k).cwiseProduct(vs);
          double sigma = 0.0, foliage = 0.0;
          Rgb wc = Rgb::Zero();
          for (int a = 0; a < ss; ++a)
            for (int b = 0; b < ss; ++b)
              for (int c = 0; c < ss; ++c) {
                const Vec3 p = corner + Vec3((a + 0.5) / ss, (b + 0.5) / ss, (c + 0.5) / ss).cwiseProduct(vs);
                const auto s = bins.sample(p, opt.solid_density);
                sigma += s.sigma;
                foliage += s.foliage_sigma;
                wc += s.weighted_color;
              }
          const double n = static_cast<double>(ss) * ss * ss;
          const Vec3 center = field.voxel_center(i, j, k);
          Rgb color = sigma > 0.0 ? Rgb(wc / sigma)
                                  : ground_color(scene, Vec3(center.x(), center.y(),
                                                             dtm_height(scene.terrain, center.x(), center.y()).height));
          const std::size_t v = field.voxel_index(i, j, k);
          field.raw(v, kSigma) = softplus_inverse(std::max(sigma / n, opt.empty_density));
          for (int ch = 0; ch < 3; ++ch) field.raw(v, kRed + ch) = logit(std::clamp(color[ch], 1e-4, 1.0 - 1e-4));
          field.raw(v, kVisibility) = foliage > 0.5 * sigma && sigma > 0.0 ? -10.0 : 10.0;
        }
  });
  return field;
}

}  // namespace understory
