// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "understory/error.hpp"
#include "understory/image.hpp"

namespace understory {

/// 10 log10(1 / MSE) over all channels; +inf for identical images.
inline double psnr(const Image& a, const Image& b) {
  require_same_size(a, b);
  if (a.data.empty()) throw InputError("psnr of empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(se / static_cast<double>(a.data.size()));
}

inline constexpr std::array<double, 5> kMsssimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Scales usable for an image whose shorter side is `min_side` (0 if too small).
inline int msssim_scale_count(int min_side) {
  int m = 0;
  while (m < 5 && min_side >= kSsimWindow * (1 << m)) ++m;
  return m;
}

/// Weights for the coarsest `scales` scales of the standard set, renormalized.
inline std::vector<double> msssim_weights(int scales) {
  std::vector<double> w(kMsssimWeights.end() - scales, kMsssimWeights.end());
  double sum = 0.0;
  for (double x : w) sum += x;
  for (double& x : w) x /= sum;
  return w;
}

namespace detail {

inline std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

/// Separable 'valid' Gaussian filter.
inline Plane gaussian_valid(const Plane& p) {
  static const auto g = gaussian_taps();
  const int ow = p.width - kSsimWindow + 1, oh = p.height - kSsimWindow + 1;
  Plane tmp(ow, p.height);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * p(x + k, y);
      tmp(x, y) = s;
    }
  Plane out(ow, oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * tmp(x, y + k);
      out(x, y) = s;
    }
  return out;
}

inline Plane downsample2(const Plane& p) {
  Plane out(p.width / 2, p.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out(x, y) = 0.25 * (p(2 * x, 2 * y) + p(2 * x + 1, 2 * y) + p(2 * x, 2 * y + 1) + p(2 * x + 1, 2 * y + 1));
  return out;
}

}  // namespace detail

struct SsimComponents {
  double ssim = 0.0;  ///< mean of luminance * contrast-structure
  double cs = 0.0;    ///< mean contrast-structure term
};

/// Single-scale SSIM on planes with data range 1.
inline SsimComponents ssim_components(const Plane& a, const Plane& b) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Plane aa(a.width, a.height), bb(a.width, a.height), ab(a.width, a.height);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
    ab.data[i] = a.data[i] * b.data[i];
  }
  const Plane mu_a = detail::gaussian_valid(a), mu_b = detail::gaussian_valid(b);
  const Plane e_aa = detail::gaussian_valid(aa), e_bb = detail::gaussian_valid(bb), e_ab = detail::gaussian_valid(ab);
  double ssim = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < mu_a.data.size(); ++i) {
    const double ma = mu_a.data[i], mb = mu_b.data[i];
    const double va = e_aa.data[i] - ma * ma, vb = e_bb.data[i] - mb * mb, cov = e_ab.data[i] - ma * mb;
    const double cs_i = (2.0 * cov + c2) / (va + vb + c2);
    const double l_i = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    cs += cs_i;
    ssim += l_i * cs_i;
  }
  const double n = static_cast<double>(mu_a.data.size());
  return {ssim / n, cs / n};
}

struct MsssimResult {
  double score = 0.0;
  /// Per scale, finest first: the contrast-structure term, except the last
  /// entry which is the full SSIM of the coarsest scale. Clamped at 0.
  std::vector<double> components;
  std::vector<double> weights;
};

inline MsssimResult msssim_detail(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) throw InputError("image dimensions differ");
  const int scales = msssim_scale_count(std::min(a.width, a.height));
  if (scales == 0) throw InputError("images must be at least 11 px on each side for M-SSIM");
  MsssimResult r;
  r.weights = msssim_weights(scales);
  Plane pa = a, pb = b;
  for (int s = 0; s < scales; ++s) {
    const SsimComponents c = ssim_components(pa, pb);
    r.components.push_back(std::max(0.0, s + 1 == scales ? c.ssim : c.cs));
    if (s + 1 < scales) {
      pa = detail::downsample2(pa);
      pb = detail::downsample2(pb);
    }
  }
  r.score = 1.0;
  for (int s = 0; s < scales; ++s) r.score *= std::pow(r.components[s], r.weights[s]);
  return r;
}

/// Multi-scale SSIM on Rec. 709 luminance of linear images.
inline double msssim(const Image& a, const Image& b) {
  require_same_size(a, b);
  return msssim_detail(luminance_plane(a), luminance_plane(b)).score;
}

}  // namespace understory
