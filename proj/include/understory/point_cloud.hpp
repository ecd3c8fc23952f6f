// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "understory/math.hpp"

namespace understory {

struct CloudPoint {
  Vec3 position = Vec3::Zero();
  Rgb color = Rgb::Zero();  // linear
};

struct PointCloud {
  std::vector<CloudPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

}  // namespace understory
