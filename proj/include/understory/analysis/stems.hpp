// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "understory/analysis/hdbscan.hpp"
#include "understory/analysis/hsv.hpp"
#include "understory/error.hpp"
#include "understory/field.hpp"
#include "understory/geometry.hpp"
#include "understory/point_cloud.hpp"

namespace understory {

/// Keeps points with dtm + z_low <= z <= dtm + z_high at their (x, y).
inline PointCloud crop_points(const PointCloud& cloud, const Dtm& dtm, double z_low_offset, double z_high_offset) {
  if (!(z_low_offset < z_high_offset)) throw InputError("crop offsets must satisfy low < high");
  PointCloud out;
  for (const auto& p : cloud.points) {
    const double h = dtm_height(dtm, p.position.x(), p.position.y()).height;
    if (p.position.z() >= h + z_low_offset && p.position.z() <= h + z_high_offset) out.points.push_back(p);
  }
  return out;
}

/// Point indices per cluster label, labels ascending; noise is skipped.
inline std::vector<std::vector<int>> clusters_from_labels(const std::vector<int>& labels) {
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) out[labels[i]].push_back(static_cast<int>(i));
  return out;
}

struct StemCluster {
  std::vector<int> indices;
  Vec3 centroid = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();  ///< principal axis, z component >= 0
  double tilt_deg = 0.0;
  double z_min = 0.0;
  double z_max = 0.0;
  double height = 0.0;  ///< z extent
  double volume = 0.0;  ///< axis-aligned bounding box
  bool degenerate = false;
};

/// PCA geometry of a set of cloud points.
inline StemCluster describe_cluster(const PointCloud& cloud, std::vector<int> indices) {
  StemCluster c;
  c.indices = std::move(indices);
  if (c.indices.empty()) {
    c.degenerate = true;
    return c;
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (int i : c.indices) {
    const Vec3& p = cloud.points[i].position;
    c.centroid += p;
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  c.centroid /= static_cast<double>(c.indices.size());
  Mat3 cov = Mat3::Zero();
  for (int i : c.indices) {
    const Vec3 d = cloud.points[i].position - c.centroid;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(c.indices.size());
  c.z_min = lo.z();
  c.z_max = hi.z();
  c.height = hi.z() - lo.z();
  const Vec3 ext = hi - lo;
  c.volume = ext.x() * ext.y() * ext.z();
  if (ext.maxCoeff() <= 0.0) {
    c.degenerate = true;
    return c;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Vec3 axis = es.eigenvectors().col(2);  // eigenvalues ascending
  if (axis.z() < 0.0) axis = -axis;
  c.axis = axis.normalized();
  c.tilt_deg = std::acos(std::clamp(c.axis.z(), 0.0, 1.0)) * 180.0 / std::numbers::pi;
  return c;
}

struct StemFilterConfig {
  double min_volume = 0.01;
  double max_volume = 5.0;
  double max_tilt_deg = 25.0;
  double vertical_merge_xy_radius = 0.5;
};

struct StemReport {
  std::vector<StemCluster> stems;
  int stem_count = 0;
  std::map<std::string, int> discarded;  ///< reason -> count
};

/// Empty string when the cluster passes every filter, otherwise the reason.
inline std::string rejection_reason(const StemCluster& c, const StemFilterConfig& cfg) {
  if (c.degenerate) return "degenerate";
  if (c.tilt_deg > cfg.max_tilt_deg) return "tilt";
  if (c.volume < cfg.min_volume) return "too_small";
  if (c.volume > cfg.max_volume) return "too_large";
  return "";
}

/// Filters clusters by tilt and bounding volume, then merges survivors
/// stacked on top of each other (close in x-y, disjoint in z). A merge is
/// only taken when the merged cluster itself passes the filters.
inline StemReport stem_filter_and_merge(const PointCloud& cloud, const std::vector<std::vector<int>>& clusters,
                                        const StemFilterConfig& cfg) {
  if (cfg.min_volume < 0.0 || !(cfg.min_volume <= cfg.max_volume)) throw InputError("invalid volume range");
  if (cfg.max_tilt_deg < 0.0 || cfg.max_tilt_deg > 90.0) throw InputError("max_tilt_deg must lie in [0, 90]");
  StemReport report;
  std::vector<StemCluster> kept;
  for (const auto& idx : clusters) {
    StemCluster c = describe_cluster(cloud, idx);
    const std::string reason = rejection_reason(c, cfg);
    if (reason.empty())
      kept.push_back(std::move(c));
    else
      report.discarded[reason] += 1;
  }

  bool merged = true;
  while (merged) {
    merged = false;
    for (std::size_t i = 0; i < kept.size() && !merged; ++i)
      for (std::size_t j = i + 1; j < kept.size() && !merged; ++j) {
        const StemCluster& a = kept[i];
        const StemCluster& b = kept[j];
        const double dxy = (a.centroid.head<2>() - b.centroid.head<2>()).norm();
        const bool disjoint = a.z_max < b.z_min || b.z_max < a.z_min;
        if (dxy > cfg.vertical_merge_xy_radius || !disjoint) continue;
        std::vector<int> idx = a.indices;
        idx.insert(idx.end(), b.indices.begin(), b.indices.end());
        std::sort(idx.begin(), idx.end());
        StemCluster m = describe_cluster(cloud, std::move(idx));
        if (!rejection_reason(m, cfg).empty()) continue;
        kept[i] = std::move(m);
        kept.erase(kept.begin() + static_cast<long>(j));
        merged = true;
      }
  }
  report.stem_count = static_cast<int>(kept.size());
  report.stems = std::move(kept);
  return report;
}

struct StemPipelineConfig {
  double export_sigma_threshold = 5.0;
  int export_stride = 1;
  HsvBox foliage = HsvBox::around(Rgb(0.35, 0.67, 0.35));
  bool remove_foliage = true;
  double crop_low = 0.3;
  double crop_high = 8.0;
  int min_cluster_size = 15;
  int min_samples = 5;
  StemFilterConfig filter;
};

struct StemPipelineResult {
  PointCloud exported;
  PointCloud defoliated;
  PointCloud cropped;
  std::vector<int> labels;  ///< per point of `cropped`
  StemReport report;
};

/// Field export, foliage removal, terrain/canopy crop, clustering and
/// filtering. An empty cloud after filtering yields a report with 0 stems.
inline StemPipelineResult run_stem_pipeline(const VoxelField& field, const Dtm& dtm, const StemPipelineConfig& cfg) {
  StemPipelineResult r;
  r.exported = export_points(field, cfg.export_sigma_threshold, cfg.export_stride);
  r.defoliated = cfg.remove_foliage ? remove_foliage_points(r.exported, cfg.foliage) : r.exported;
  r.cropped = crop_points(r.defoliated, dtm, cfg.crop_low, cfg.crop_high);
  std::vector<Vec3> pts;
  pts.reserve(r.cropped.size());
  for (const auto& p : r.cropped.points) pts.push_back(p.position);
  r.labels = hdbscan_cluster(pts, cfg.min_cluster_size, cfg.min_samples);
  r.report = stem_filter_and_merge(r.cropped, clusters_from_labels(r.labels), cfg.filter);
  return r;
}

}  // namespace understory
