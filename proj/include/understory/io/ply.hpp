// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "understory/error.hpp"
#include "understory/io/files.hpp"
#include "understory/io/png.hpp"
#include "understory/point_cloud.hpp"

namespace understory::io {

/// ASCII PLY; colors are stored sRGB-encoded.
inline std::string ply_string(const PointCloud& cloud) {
  std::string out;
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char line[128];
  for (const auto& p : cloud.points) {
    std::snprintf(line, sizeof line, "%.6g %.6g %.6g %d %d %d\n", static_cast<float>(p.position.x()),
                  static_cast<float>(p.position.y()), static_cast<float>(p.position.z()), encode_srgb8(p.color.x()),
                  encode_srgb8(p.color.y()), encode_srgb8(p.color.z()));
    out += line;
  }
  return out;
}

inline void write_ply(const fs::path& path, const PointCloud& cloud) { write_text(path, ply_string(cloud)); }

inline PointCloud read_ply(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string tok;
  in >> tok;
  if (tok != "ply") throw IoError(path.string() + ": not a PLY file");
  std::size_t count = 0;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw IoError(path.string() + ": only ASCII PLY is supported");
    } else if (key == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") throw IoError(path.string() + ": unexpected element " + name);
    } else if (key == "end_header") {
      break;
    }
  }
  PointCloud cloud;
  cloud.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    double x, y, z;
    int r, g, b;
    if (!(in >> x >> y >> z >> r >> g >> b)) throw IoError(path.string() + ": truncated vertex list");
    cloud.points.push_back({Vec3(x, y, z), Rgb(srgb_decode(r / 255.0), srgb_decode(g / 255.0), srgb_decode(b / 255.0))});
  }
  return cloud;
}

}  // namespace understory::io
