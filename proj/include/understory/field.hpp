// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "understory/error.hpp"
#include "understory/geometry.hpp"
#include "understory/math.hpp"
#include "understory/point_cloud.hpp"

namespace understory {

/// Channels stored per voxel, in memory order.
enum Channel : int { kSigma = 0, kRed = 1, kGreen = 2, kBlue = 3, kVisibility = 4 };
inline constexpr int kChannels = 5;

struct FieldInit {
  double sigma_raw = -2.0;
  double color_raw = 0.0;
  /// sigmoid(10) ~ 0.99995: masking disabled until supervised.
  double visibility_raw = 10.0;
};

struct FieldSample {
  double sigma = 0.0;
  Rgb color = Rgb::Constant(0.5);
  double visibility = 1.0;
};

/// Dense voxel grid of unconstrained parameters. Samples are trilinear
/// interpolations between voxel centers, followed by the activations
/// softplus (density) and sigmoid (color, visibility).
class VoxelField {
 public:
  VoxelField() = default;

  VoxelField(const Aabb& bounds, std::array<int, 3> resolution, const FieldInit& init = {})
      : bounds_(bounds), resolution_(resolution) {
    const Vec3 ext = bounds.extent();
    if (!(ext.array() > 0.0).all() || !ext.allFinite()) throw InputError("field bounds must have positive extent");
    for (int n : resolution)
      if (n < 2) throw InputError("field resolution must be at least 2 per axis");
    voxel_size_ = ext.cwiseQuotient(Vec3(resolution[0], resolution[1], resolution[2]));
    params_.resize(voxel_count() * kChannels);
    for (std::size_t v = 0; v < voxel_count(); ++v) {
      double* p = &params_[v * kChannels];
      p[kSigma] = init.sigma_raw;
      p[kRed] = p[kGreen] = p[kBlue] = init.color_raw;
      p[kVisibility] = init.visibility_raw;
    }
  }

  const Aabb& bounds() const { return bounds_; }
  const std::array<int, 3>& resolution() const { return resolution_; }
  const Vec3& voxel_size() const { return voxel_size_; }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(resolution_[0]) * resolution_[1] * resolution_[2];
  }
  std::size_t param_count() const { return params_.size(); }

  std::size_t voxel_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution_[1] + j) * resolution_[0] + i;
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return bounds_.lo + Vec3(i + 0.5, j + 0.5, k + 0.5).cwiseProduct(voxel_size_);
  }

  double& raw(std::size_t voxel, int channel) { return params_[voxel * kChannels + channel]; }
  double raw(std::size_t voxel, int channel) const { return params_[voxel * kChannels + channel]; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

 private:
  Aabb bounds_;
  std::array<int, 3> resolution_{2, 2, 2};
  Vec3 voxel_size_ = Vec3::Ones();
  std::vector<double> params_;
};

/// The 8 voxels surrounding a point and their trilinear weights.
struct Stencil {
  std::array<std::size_t, 8> voxel{};
  std::array<double, 8> weight{};
};

/// Returns false for points outside the field bounds. Inside, coordinates
/// within half a voxel of the boundary clamp to the outer voxel layer.
inline bool make_stencil(const VoxelField& field, const Vec3& x, Stencil& st) {
  if (!field.bounds().contains(x)) return false;
  const auto& res = field.resolution();
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double u =
        std::clamp((x[a] - field.bounds().lo[a]) / field.voxel_size()[a] - 0.5, 0.0, static_cast<double>(res[a] - 1));
    base[a] = std::min(static_cast<int>(u), res[a] - 2);
    frac[a] = u - base[a];
  }
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    st.voxel[c] = field.voxel_index(base[0] + di, base[1] + dj, base[2] + dk);
    st.weight[c] = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]) * (dk ? frac[2] : 1.0 - frac[2]);
  }
  return true;
}

/// Interpolated raw parameters at a stencil.
inline std::array<double, kChannels> interpolate_raw(const VoxelField& field, const Stencil& st) {
  std::array<double, kChannels> raw{};
  const double* p = field.params().data();
  for (int c = 0; c < 8; ++c) {
    const double* v = p + st.voxel[c] * kChannels;
    const double w = st.weight[c];
    for (int ch = 0; ch < kChannels; ++ch) raw[ch] += w * v[ch];
  }
  return raw;
}

inline FieldSample activate(const std::array<double, kChannels>& raw) {
  FieldSample s;
  s.sigma = softplus(raw[kSigma]);
  s.color = Rgb(sigmoid(raw[kRed]), sigmoid(raw[kGreen]), sigmoid(raw[kBlue]));
  s.visibility = sigmoid(raw[kVisibility]);
  return s;
}

/// Outside the bounds: empty space (sigma 0, neutral color, visible).
inline FieldSample field_sample(const VoxelField& field, const Vec3& x) {
  Stencil st;
  if (!make_stencil(field, x, st)) return FieldSample{};
  return activate(interpolate_raw(field, st));
}

/// Derivatives of one sample with respect to one surrounding voxel's raw parameters.
struct CornerGradient {
  std::size_t voxel = 0;
  double weight = 0.0;
  double d_sigma = 0.0;  ///< d sigma / d sigma_raw
  Rgb d_color = Rgb::Zero();  ///< d color_k / d color_raw_k
  double d_visibility = 0.0;  ///< d v / d v_raw
};

/// Empty for points outside the bounds, otherwise exactly 8 entries.
inline std::vector<CornerGradient> field_param_grad(const VoxelField& field, const Vec3& x) {
  std::vector<CornerGradient> out;
  Stencil st;
  if (!make_stencil(field, x, st)) return out;
  const auto raw = interpolate_raw(field, st);
  const double ds = sigmoid(raw[kSigma]);  // softplus' = sigmoid
  Rgb dc;
  for (int k = 0; k < 3; ++k) dc[k] = sigmoid_grad_from_value(sigmoid(raw[kRed + k]));
  const double dv = sigmoid_grad_from_value(sigmoid(raw[kVisibility]));
  out.reserve(8);
  for (int c = 0; c < 8; ++c) {
    CornerGradient g;
    g.voxel = st.voxel[c];
    g.weight = st.weight[c];
    g.d_sigma = st.weight[c] * ds;
    g.d_color = st.weight[c] * dc;
    g.d_visibility = st.weight[c] * dv;
    out.push_back(g);
  }
  return out;
}

/// Samples the field at every `stride`-th voxel center and keeps the samples
/// whose density reaches `sigma_threshold`.
inline PointCloud export_points(const VoxelField& field, double sigma_threshold, int stride) {
  if (!(sigma_threshold > 0.0)) throw InputError("sigma_threshold must be positive");
  if (stride < 1) throw InputError("stride must be at least 1");
  PointCloud cloud;
  const auto& res = field.resolution();
  for (int k = 0; k < res[2]; k += stride)
    for (int j = 0; j < res[1]; j += stride)
      for (int i = 0; i < res[0]; i += stride) {
        const Vec3 x = field.voxel_center(i, j, k);
        const FieldSample s = field_sample(field, x);
        if (s.sigma >= sigma_threshold) cloud.points.push_back({x, s.color});
      }
  return cloud;
}

}  // namespace understory
