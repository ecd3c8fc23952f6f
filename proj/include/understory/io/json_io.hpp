// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "understory/analysis/stems.hpp"
#include "understory/error.hpp"
#include "understory/geometry.hpp"
#include "understory/io/files.hpp"
#include "understory/scene_synth.hpp"
#include "understory/train.hpp"

namespace understory::io {

using json = nlohmann::json;

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(what + ": " + e.what());
  }
}

inline json read_json(const fs::path& path) { return parse_json(read_text(path), path.string()); }

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline json to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

/// Reads the keys of one config object and rejects keys it does not know.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) throw InputError(what_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw InputError(what_ + ": bad value for '" + key + "'");
    }
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  void get(const std::string& key, Vec3& out) { fixed(key, out.data(), 3); }
  void get(const std::string& key, Vec2& out) { fixed(key, out.data(), 2); }
  void get(const std::string& key, std::optional<Vec2>& out) {
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    Vec2 v = Vec2::Zero();
    get(key, v);
    out = v;
  }
  void get(const std::string& key, std::pair<double, double>& out) {
    double v[2] = {out.first, out.second};
    fixed(key, v, 2);
    out = {v[0], v[1]};
  }
  void get(const std::string& key, std::array<int, 3>& out) {
    double v[3];
    if (!j_.contains(key)) return;
    fixed(key, v, 3);
    for (int i = 0; i < 3; ++i) out[i] = static_cast<int>(v[i]);
  }

  const json& object(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InputError(what_ + ": unknown key '" + k + "'");
  }

 private:
  void fixed(const std::string& key, double* out, int n) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& a = j_.at(key);
    if (!a.is_array() || a.size() != static_cast<std::size_t>(n))
      throw InputError(what_ + ": '" + key + "' must be an array of " + std::to_string(n) + " numbers");
    for (int i = 0; i < n; ++i) {
      if (!a[i].is_number()) throw InputError(what_ + ": '" + key + "' must contain numbers");
      out[i] = a[i].get<double>();
    }
  }

  const json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

/// Applies flat `key=value` overrides; dotted keys address nested objects.
/// Values that parse as JSON are used as such, anything else as a string.
inline void apply_overrides(json& j, const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [key, text] : overrides) {
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
      node = &(*node)[key.substr(start, dot - start)];
      if (!node->is_object()) *node = json::object();
    }
    (*node)[key.substr(start)] = value;
  }
}

// ---------------------------------------------------------------------------
// Geometry records

inline json camera_to_json(const Camera& c, const std::string& image) {
  json pose = json::array();
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 4; ++col) {
      double v;
      if (r == 3)
        v = col == 3 ? 1.0 : 0.0;
      else
        v = col < 3 ? c.pose.rotation(r, col) : c.pose.translation[r];
      pose.push_back(v);
    }
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
          {"pose", pose}, {"image", image}};
}

struct CameraRecord {
  Camera camera;
  std::string image;
};

inline CameraRecord camera_from_json(const json& j) {
  ConfigReader r(j, "camera");
  CameraRecord rec;
  Camera& c = rec.camera;
  r.get("fx", c.fx);
  r.get("fy", c.fy);
  r.get("cx", c.cx);
  r.get("cy", c.cy);
  r.get("width", c.width);
  r.get("height", c.height);
  r.get("image", rec.image);
  if (!j.contains("pose")) throw InputError("camera: missing pose");
  const json& p = r.object("pose");
  if (!p.is_array() || p.size() != 16) throw InputError("camera: pose must hold 16 numbers");
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) c.pose.rotation(row, col) = p[row * 4 + col].get<double>();
    c.pose.translation[row] = p[row * 4 + 3].get<double>();
  }
  r.finish();
  validate(c);
  return rec;
}

inline void write_cameras(const fs::path& path, const std::vector<Camera>& cams,
                          const std::vector<std::string>& images) {
  json arr = json::array();
  for (std::size_t i = 0; i < cams.size(); ++i) arr.push_back(camera_to_json(cams[i], i < images.size() ? images[i] : ""));
  write_text(path, arr.dump(1) + "\n");
}

inline std::vector<CameraRecord> read_cameras(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw InputError(path.string() + ": expected an array of cameras");
  std::vector<CameraRecord> out;
  for (const auto& c : j) out.push_back(camera_from_json(c));
  return out;
}

inline json dtm_to_json(const Dtm& d) {
  return {{"origin", to_json(d.origin())}, {"cell_size", d.cell_size()}, {"rows", d.rows()},
          {"cols", d.cols()}, {"heights", d.heights()}};
}

inline Dtm dtm_from_json(const json& j) {
  ConfigReader r(j, "dtm");
  Vec2 origin = Vec2::Zero();
  double cell = 0.0;
  int rows = 0, cols = 0;
  std::vector<double> heights;
  r.get("origin", origin);
  r.get("cell_size", cell);
  r.get("rows", rows);
  r.get("cols", cols);
  r.get("heights", heights);
  r.finish();
  return Dtm(origin, cell, rows, cols, std::move(heights));
}

inline Dtm read_dtm(const fs::path& path) { return dtm_from_json(read_json(path)); }
inline void write_dtm(const fs::path& path, const Dtm& d) { write_text(path, dtm_to_json(d).dump() + "\n"); }

// ---------------------------------------------------------------------------
// Scene and capture

inline json lighting_to_json(const Lighting& l) {
  json j = {{"ambient", l.ambient}, {"direct", l.direct}, {"sun_direction", to_json(l.sun_direction)}};
  j["shadow_split_x"] = l.shadow_split_x ? json(*l.shadow_split_x) : json(nullptr);
  return j;
}

inline Lighting lighting_from_json(const json& j) {
  ConfigReader r(j, "lighting");
  Lighting l;
  r.get("ambient", l.ambient);
  r.get("direct", l.direct);
  r.get("sun_direction", l.sun_direction);
  r.get("shadow_split_x", l.shadow_split_x);
  r.finish();
  if (!(l.sun_direction.norm() > 0.0)) throw InputError("lighting: sun_direction must be non-zero");
  l.sun_direction.normalize();
  return l;
}

inline json forest_params_to_json(const ForestParams& p) {
  return {{"seed", p.seed},
          {"extent", p.extent},
          {"n_stems", p.n_stems},
          {"canopy_density", p.canopy_density},
          {"blob_opacity_range", {p.blob_opacity_range.first, p.blob_opacity_range.second}},
          {"stem_radius_range", {p.stem_radius_range.first, p.stem_radius_range.second}},
          {"stem_height_range", {p.stem_height_range.first, p.stem_height_range.second}},
          {"terrain_relief", p.terrain_relief},
          {"dtm_cell", p.dtm_cell},
          {"texture_feature_size", p.texture_feature_size},
          {"n_targets", p.n_targets},
          {"edge_margin", p.edge_margin},
          {"background", to_json(p.background)},
          {"lighting", lighting_to_json(p.lighting)}};
}

inline ForestParams forest_params_from_json(const json& j) {
  ConfigReader r(j, "scene config");
  ForestParams p;
  r.get("seed", p.seed);
  r.get("extent", p.extent);
  r.get("n_stems", p.n_stems);
  r.get("canopy_density", p.canopy_density);
  r.get("blob_opacity_range", p.blob_opacity_range);
  r.get("stem_radius_range", p.stem_radius_range);
  r.get("stem_height_range", p.stem_height_range);
  r.get("terrain_relief", p.terrain_relief);
  r.get("dtm_cell", p.dtm_cell);
  r.get("texture_feature_size", p.texture_feature_size);
  r.get("n_targets", p.n_targets);
  r.get("edge_margin", p.edge_margin);
  r.get("background", p.background);
  if (r.has("lighting")) p.lighting = lighting_from_json(r.object("lighting"));
  r.finish();
  return p;
}

inline json capture_to_json(const CaptureConfig& c) {
  json j = {{"n_x", c.n_x},           {"n_y", c.n_y},         {"spacing", c.spacing},
            {"altitude", c.altitude}, {"width", c.width},     {"height", c.height},
            {"gsd_target", c.gsd_target}, {"exposure_gain", c.exposure_gain}, {"noise_sigma", c.noise_sigma},
            {"seed", c.seed}};
  j["grid_center"] = c.grid_center ? to_json(*c.grid_center) : json(nullptr);
  j["focal_px"] = c.focal_px ? json(*c.focal_px) : json(nullptr);
  return j;
}

inline CaptureConfig capture_from_json(const json& j) {
  ConfigReader r(j, "capture config");
  CaptureConfig c;
  r.get("n_x", c.n_x);
  r.get("n_y", c.n_y);
  r.get("spacing", c.spacing);
  r.get("altitude", c.altitude);
  r.get("grid_center", c.grid_center);
  r.get("width", c.width);
  r.get("height", c.height);
  r.get("focal_px", c.focal_px);
  r.get("gsd_target", c.gsd_target);
  r.get("exposure_gain", c.exposure_gain);
  r.get("noise_sigma", c.noise_sigma);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

/// Complete scene description, enough to rebuild the oracle.
inline json scene_to_json(const AnalyticScene& s) {
  json stems = json::array(), blobs = json::array(), targets = json::array();
  for (const auto& st : s.stems)
    stems.push_back({{"base", to_json(st.base)},
                     {"base_z", st.base_z},
                     {"height", st.height},
                     {"radius", st.radius},
                     {"albedo", to_json(st.albedo)}});
  for (const auto& b : s.canopy)
    blobs.push_back({{"center", to_json(b.center)},
                     {"radii", to_json(b.radii)},
                     {"albedo", to_json(b.albedo)},
                     {"opacity", b.opacity}});
  for (const auto& t : s.targets)
    targets.push_back({{"center", to_json(t.center)}, {"half_size", to_json(t.half_size)}, {"albedo", to_json(t.albedo)}});
  return {{"terrain", dtm_to_json(s.terrain)},
          {"texture",
           {{"seed", s.texture.seed},
            {"feature_size", s.texture.feature_size},
            {"dark", to_json(s.texture.dark)},
            {"light", to_json(s.texture.light)}}},
          {"stems", stems},
          {"canopy", blobs},
          {"targets", targets},
          {"background", to_json(s.background)},
          {"lighting", lighting_to_json(s.lighting)}};
}

inline AnalyticScene scene_from_json(const json& j) {
  ConfigReader r(j, "scene");
  AnalyticScene s;
  s.terrain = dtm_from_json(r.object("terrain"));
  {
    ConfigReader t(r.object("texture"), "texture");
    t.get("seed", s.texture.seed);
    t.get("feature_size", s.texture.feature_size);
    t.get("dark", s.texture.dark);
    t.get("light", s.texture.light);
    t.finish();
  }
  for (const auto& e : r.object("stems")) {
    ConfigReader q(e, "stem");
    Stem st;
    q.get("base", st.base);
    q.get("base_z", st.base_z);
    q.get("height", st.height);
    q.get("radius", st.radius);
    q.get("albedo", st.albedo);
    q.finish();
    s.stems.push_back(st);
  }
  for (const auto& e : r.object("canopy")) {
    ConfigReader q(e, "canopy blob");
    CanopyBlob b;
    q.get("center", b.center);
    q.get("radii", b.radii);
    q.get("albedo", b.albedo);
    q.get("opacity", b.opacity);
    q.finish();
    s.canopy.push_back(b);
  }
  for (const auto& e : r.object("targets")) {
    ConfigReader q(e, "target");
    GroundTarget t;
    q.get("center", t.center);
    q.get("half_size", t.half_size);
    q.get("albedo", t.albedo);
    q.finish();
    s.targets.push_back(t);
  }
  r.get("background", s.background);
  if (r.has("lighting")) s.lighting = lighting_from_json(r.object("lighting"));
  r.finish();
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct TrainSettings {
  TrainConfig train;
  FieldConfig field;
};

inline json train_settings_to_json(const TrainSettings& s) {
  const TrainConfig& t = s.train;
  const FieldConfig& f = s.field;
  json j = {{"loss", to_string(t.loss)},
            {"raw_weight", t.raw_weight},
            {"epsilon", t.epsilon},
            {"n_samples", t.n_samples},
            {"batch_size", t.batch_size},
            {"step_count", t.step_count},
            {"learning_rate", t.learning_rate},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_epsilon", t.adam_epsilon},
            {"visibility_loss_weight", t.visibility_loss_weight},
            {"distortion_weight", t.distortion_weight},
            {"seed", t.rng_seed},
            {"log_every", t.log_every},
            {"checkpoint_every", t.checkpoint_every},
            {"background", to_json(t.background)},
            {"resolution", f.resolution},
            {"height_above_ground", f.height_above_ground},
            {"depth_below_ground", f.depth_below_ground},
            {"init_sigma_raw", f.init.sigma_raw},
            {"init_color_raw", f.init.color_raw},
            {"init_visibility_raw", f.init.visibility_raw}};
  j["field_bounds"] = f.bounds ? json{{"lo", to_json(f.bounds->lo)}, {"hi", to_json(f.bounds->hi)}} : json(nullptr);
  return j;
}

inline TrainSettings train_settings_from_json(const json& j) {
  ConfigReader r(j, "train config");
  TrainSettings s;
  TrainConfig& t = s.train;
  FieldConfig& f = s.field;
  std::string loss = to_string(t.loss);
  r.get("loss", loss);
  t.loss = parse_loss_kind(loss);
  r.get("raw_weight", t.raw_weight);
  r.get("epsilon", t.epsilon);
  r.get("n_samples", t.n_samples);
  r.get("batch_size", t.batch_size);
  r.get("step_count", t.step_count);
  r.get("learning_rate", t.learning_rate);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("adam_epsilon", t.adam_epsilon);
  r.get("visibility_loss_weight", t.visibility_loss_weight);
  r.get("distortion_weight", t.distortion_weight);
  r.get("seed", t.rng_seed);
  r.get("log_every", t.log_every);
  r.get("checkpoint_every", t.checkpoint_every);
  r.get("background", t.background);
  r.get("resolution", f.resolution);
  r.get("height_above_ground", f.height_above_ground);
  r.get("depth_below_ground", f.depth_below_ground);
  r.get("init_sigma_raw", f.init.sigma_raw);
  r.get("init_color_raw", f.init.color_raw);
  r.get("init_visibility_raw", f.init.visibility_raw);
  if (r.has("field_bounds")) {
    const json& b = r.object("field_bounds");
    if (!b.is_null()) {
      ConfigReader q(b, "field_bounds");
      Aabb box;
      q.get("lo", box.lo);
      q.get("hi", box.hi);
      q.finish();
      f.bounds = box;
    }
  }
  r.finish();
  validate(t);
  return s;
}

// ---------------------------------------------------------------------------
// Stems

inline json stem_config_to_json(const StemPipelineConfig& c) {
  return {{"export_sigma_threshold", c.export_sigma_threshold},
          {"export_stride", c.export_stride},
          {"remove_foliage", c.remove_foliage},
          {"foliage_hsv", {c.foliage.seed.h, c.foliage.seed.s, c.foliage.seed.v}},
          {"foliage_half_widths", {c.foliage.dh, c.foliage.ds, c.foliage.dv}},
          {"crop_low", c.crop_low},
          {"crop_high", c.crop_high},
          {"min_cluster_size", c.min_cluster_size},
          {"min_samples", c.min_samples},
          {"min_volume", c.filter.min_volume},
          {"max_volume", c.filter.max_volume},
          {"max_tilt_deg", c.filter.max_tilt_deg},
          {"vertical_merge_xy_radius", c.filter.vertical_merge_xy_radius}};
}

inline StemPipelineConfig stem_config_from_json(const json& j) {
  ConfigReader r(j, "stems config");
  StemPipelineConfig c;
  r.get("export_sigma_threshold", c.export_sigma_threshold);
  r.get("export_stride", c.export_stride);
  r.get("remove_foliage", c.remove_foliage);
  Vec3 hsv(c.foliage.seed.h, c.foliage.seed.s, c.foliage.seed.v);
  Vec3 widths(c.foliage.dh, c.foliage.ds, c.foliage.dv);
  r.get("foliage_hsv", hsv);
  r.get("foliage_half_widths", widths);
  if (r.has("foliage_seed_rgb")) {
    Vec3 rgb = Vec3::Zero();
    r.get("foliage_seed_rgb", rgb);
    const Hsv h = rgb_to_hsv(rgb);
    hsv = Vec3(h.h, h.s, h.v);
  }
  c.foliage = HsvBox{{hsv.x(), hsv.y(), hsv.z()}, widths.x(), widths.y(), widths.z()};
  r.get("crop_low", c.crop_low);
  r.get("crop_high", c.crop_high);
  r.get("min_cluster_size", c.min_cluster_size);
  r.get("min_samples", c.min_samples);
  r.get("min_volume", c.filter.min_volume);
  r.get("max_volume", c.filter.max_volume);
  r.get("max_tilt_deg", c.filter.max_tilt_deg);
  r.get("vertical_merge_xy_radius", c.filter.vertical_merge_xy_radius);
  r.finish();
  validate(c.foliage);
  return c;
}

inline json stem_report_to_json(const StemReport& rep) {
  json stems = json::array();
  for (const auto& s : rep.stems)
    stems.push_back({{"centroid", to_json(s.centroid)},
                     {"tilt_deg", s.tilt_deg},
                     {"height_m", s.height},
                     {"n_points", s.indices.size()}});
  json discarded = json::object();
  for (const auto& [k, v] : rep.discarded) discarded[k] = v;
  return {{"stem_count", rep.stem_count}, {"stems", stems}, {"discarded", discarded}};
}

}  // namespace understory::io
