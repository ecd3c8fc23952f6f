// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "understory/io/files.hpp"
#include "understory/io/json_io.hpp"
#include "understory/io/png.hpp"
#include "understory/scene_synth.hpp"
#include "understory/train.hpp"

namespace understory::io {

/// Writes images/, seg/, cameras.json, dtm.json and (when given) scene.json.
inline void save_dataset(const fs::path& dir, const Dataset& ds, const AnalyticScene* scene = nullptr) {
  ensure_dir(dir / "images");
  std::vector<std::string> rel;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string name = i < ds.names.size() ? ds.names[i] : view_name(i);
    rel.push_back("images/" + name + ".png");
    write_png(dir / rel.back(), ds.images[i]);
    if (i < ds.segmentation.size() && ds.segmentation[i].pixel_count() > 0)
      write_mask_png(dir / "seg" / (name + ".png"), ds.segmentation[i]);
  }
  write_cameras(dir / "cameras.json", ds.cameras, rel);
  write_dtm(dir / "dtm.json", ds.dtm);
  if (scene) write_text(dir / "scene.json", scene_to_json(*scene).dump(1) + "\n");
}

/// Loads a dataset directory; images are decoded to linear values.
inline Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "cameras.json")) throw IoError(dir.string() + ": cameras.json not found");
  Dataset ds;
  for (const auto& rec : read_cameras(dir / "cameras.json")) {
    const fs::path img_path = dir / rec.image;
    Image img = read_png(img_path);
    if (img.width != rec.camera.width || img.height != rec.camera.height)
      throw IoError(img_path.string() + ": size does not match its camera");
    const std::string name = fs::path(rec.image).stem().string();
    const fs::path seg_path = dir / "seg" / (name + ".png");
    ds.segmentation.push_back(fs::exists(seg_path) ? read_mask_png(seg_path) : Plane());
    ds.cameras.push_back(rec.camera);
    ds.names.push_back(name);
    ds.images.push_back(std::move(img));
  }
  ds.dtm = read_dtm(dir / "dtm.json");
  return ds;
}

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string training_log_csv(const std::vector<LogEntry>& log) {
  std::string out = "step,loss,grad_norm,elapsed_s\n";
  for (const auto& e : log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.3f\n", e.step, e.loss, e.grad_norm, e.elapsed_s);
    out += buf;
  }
  return out;
}

/// Metric report: one `name,value` row per entry.
inline std::string metrics_csv(const std::vector<std::pair<std::string, double>>& rows) {
  std::string out = "name,value\n";
  for (const auto& [k, v] : rows) out += k + "," + format_number(v) + "\n";
  return out;
}

}  // namespace understory::io
