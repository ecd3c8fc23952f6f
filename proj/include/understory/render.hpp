// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "understory/error.hpp"
#include "understory/field.hpp"
#include "understory/geometry.hpp"
#include "understory/image.hpp"
#include "understory/parallel.hpp"

namespace understory {

/// Integration interval of one ray. With `t_ground` set, integration starts
/// at the ground entry instead of t1 (canopy crop). With `masked`, each
/// sample's weight is scaled by its visibility and the removed mass goes to
/// the background.
struct RenderBounds {
  double t1 = 0.0;
  double t2 = 1.0;
  std::optional<double> t_ground;
  bool masked = false;

  static RenderBounds full(double t1, double t2) { return {t1, t2, std::nullopt, false}; }
  static RenderBounds crop(double t1, double t2, double t_ground) { return {t1, t2, t_ground, false}; }
  static RenderBounds mask(double t1, double t2) { return {t1, t2, std::nullopt, true}; }

  double start() const { return t_ground ? *t_ground : t1; }
};

inline void validate(const RenderBounds& b) {
  if (!(b.t1 < b.t2)) throw InputError("render bounds require t1 < t2");
  if (b.t_ground && !(*b.t_ground >= b.t1 && *b.t_ground < b.t2))
    throw InputError("crop bound must satisfy t1 <= t_g < t2");
}

struct RaySampling {
  int n_samples = 128;
  bool jitter = false;
  std::uint64_t seed = 0;
  Rgb background = Rgb::Zero();
};

struct RayRenderOutput {
  Rgb color = Rgb::Zero();
  std::vector<double> t;           ///< sample positions
  std::vector<double> weights;     ///< T_i * alpha_i
  std::vector<double> visibility;  ///< v_i per sample
  double background_weight = 1.0;
  double opacity = 0.0;  ///< 1 - final transmittance
  double depth = 0.0;    ///< weight-averaged t (t2 when nothing is hit)
  /// sum w_i v_i + (1 - opacity): the supervised visibility of the ray.
  double rendered_visibility = 1.0;
};

namespace detail {

struct SamplePoint {
  bool inside = false;
  Stencil stencil;
  double sigma_raw = 0.0;
  double sigma = 0.0;
  Rgb color_raw = Rgb::Zero();
  Rgb color = Rgb::Zero();
  double vis_raw = 0.0;
  double vis = 1.0;
  double delta = 0.0;
  double alpha = 0.0;
  double trans = 1.0;  ///< transmittance before this sample
};

/// Per-ray state shared by the forward and reverse passes.
struct RayTrace {
  std::vector<SamplePoint> samples;
  std::vector<double> t;
  double final_trans = 1.0;
};

/// Stratified sample positions; bin i is [start + i h, start + (i+1) h).
inline void place_samples(double start, double end, const RaySampling& s, std::vector<double>& t) {
  const double h = (end - start) / s.n_samples;
  t.resize(static_cast<std::size_t>(s.n_samples));
  if (s.jitter) {
    SplitMix64 rng(s.seed);
    for (int i = 0; i < s.n_samples; ++i) t[i] = start + (i + rng.uniform()) * h;
  } else {
    for (int i = 0; i < s.n_samples; ++i) t[i] = start + (i + 0.5) * h;
  }
}

inline void trace_forward(const VoxelField& field, const Ray& ray, const RenderBounds& bounds, const RaySampling& s,
                          RayTrace& tr) {
  const double start = bounds.start();
  const double h = (bounds.t2 - start) / s.n_samples;
  place_samples(start, bounds.t2, s, tr.t);
  tr.samples.resize(tr.t.size());
  double trans = 1.0;
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    SamplePoint& sp = tr.samples[i];
    sp.delta = h;
    sp.trans = trans;
    sp.inside = make_stencil(field, ray.at(tr.t[i]), sp.stencil);
    if (!sp.inside) {
      sp.sigma = 0.0;
      sp.color = Rgb::Constant(0.5);
      sp.vis = 1.0;
      sp.alpha = 0.0;
      continue;
    }
    const auto raw = interpolate_raw(field, sp.stencil);
    sp.sigma_raw = raw[kSigma];
    sp.color_raw = Rgb(raw[kRed], raw[kGreen], raw[kBlue]);
    sp.vis_raw = raw[kVisibility];
    sp.sigma = softplus(sp.sigma_raw);
    sp.color = Rgb(sigmoid(raw[kRed]), sigmoid(raw[kGreen]), sigmoid(raw[kBlue]));
    sp.vis = sigmoid(sp.vis_raw);
    sp.alpha = -std::expm1(-sp.sigma * sp.delta);
    trans *= 1.0 - sp.alpha;
  }
  tr.final_trans = trans;
}

inline RayRenderOutput summarize(const RayTrace& tr, const RenderBounds& bounds, const RaySampling& s) {
  RayRenderOutput out;
  out.t = tr.t;
  out.weights.resize(tr.samples.size());
  out.visibility.resize(tr.samples.size());
  Rgb color = Rgb::Zero();
  double wsum = 0.0, wvsum = 0.0, wt = 0.0;
  for (std::size_t i = 0; i < tr.samples.size(); ++i) {
    const SamplePoint& sp = tr.samples[i];
    const double w = sp.trans * sp.alpha;
    out.weights[i] = w;
    out.visibility[i] = sp.vis;
    const double wc = bounds.masked ? w * sp.vis : w;
    color += wc * sp.color;
    wsum += w;
    wvsum += w * sp.vis;
    wt += w * tr.t[i];
  }
  out.opacity = 1.0 - tr.final_trans;
  out.background_weight = bounds.masked ? 1.0 - wvsum : tr.final_trans;
  out.color = color + out.background_weight * s.background;
  out.depth = wsum > 0.0 ? wt / wsum : bounds.t2;
  out.rendered_visibility = wvsum + tr.final_trans;
  return out;
}

/// Reverse pass. `d_color` and `d_visibility` are dL/d(color) and
/// dL/d(rendered_visibility); `d_weight`, when given, adds a direct dL/dw_i
/// per sample. sink(param_index, dL/dparam) is called once per touched
/// parameter occurrence.
template <class Sink>
void trace_backward(const RayTrace& tr, const RenderBounds& bounds, const RaySampling& s, const Rgb& d_color,
                    double d_visibility, Sink&& sink, const std::vector<double>* d_weight = nullptr) {
  const std::size_t n = tr.samples.size();
  double suffix = 0.0;  // sum_{j>i} w_j E_j
  for (std::size_t ii = n; ii-- > 0;) {
    const SamplePoint& sp = tr.samples[ii];
    if (!sp.inside) continue;
    const double w = sp.trans * sp.alpha;
    const double m = bounds.masked ? sp.vis : 1.0;
    const Rgb diff = sp.color - s.background;
    double payload = m * d_color.dot(diff) + d_visibility * (sp.vis - 1.0);
    if (d_weight) payload += (*d_weight)[ii];
    const double trans_after = sp.trans * (1.0 - sp.alpha);
    const double g_sigma = sp.delta * (trans_after * payload - suffix);
    suffix += w * payload;

    const double g_sigma_raw = g_sigma * sigmoid(sp.sigma_raw);
    Rgb g_color_raw;
    for (int k = 0; k < 3; ++k) g_color_raw[k] = d_color[k] * w * m * sigmoid_grad_from_value(sp.color[k]);
    double g_vis = d_visibility * w;
    if (bounds.masked) g_vis += w * d_color.dot(diff);
    const double g_vis_raw = g_vis * sigmoid_grad_from_value(sp.vis);

    for (int c = 0; c < 8; ++c) {
      const double wc = sp.stencil.weight[c];
      if (wc == 0.0) continue;
      const std::size_t base = sp.stencil.voxel[c] * kChannels;
      sink(base + kSigma, wc * g_sigma_raw);
      sink(base + kRed, wc * g_color_raw[0]);
      sink(base + kGreen, wc * g_color_raw[1]);
      sink(base + kBlue, wc * g_color_raw[2]);
      sink(base + kVisibility, wc * g_vis_raw);
    }
  }
}

/// Weight-spread penalty sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 d_i on
/// sample positions normalized to [0, 1] over the integration interval.
/// Writes dL/dw_i into `grad`.
inline double distortion(const std::vector<double>& t, const std::vector<double>& w, double start, double end,
                         std::vector<double>& grad) {
  const std::size_t n = w.size();
  grad.assign(n, 0.0);
  if (n == 0) return 0.0;
  const double len = end - start;
  const double width = 1.0 / static_cast<double>(n);
  double w_total = 0.0, ws_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w_total += w[i];
    ws_total += w[i] * (t[i] - start) / len;
  }
  double loss = 0.0, w_before = 0.0, ws_before = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double si = (t[i] - start) / len;
    const double w_after = w_total - w_before - w[i];
    const double ws_after = ws_total - ws_before - w[i] * si;
    const double spread = si * w_before - ws_before + ws_after - si * w_after;
    loss += w[i] * spread + w[i] * w[i] * width / 3.0;
    grad[i] = 2.0 * spread + 2.0 * w[i] * width / 3.0;
    w_before += w[i];
    ws_before += w[i] * si;
  }
  return loss;
}

}  // namespace detail

/// Integration interval of the ray inside the field volume, if any.
inline std::optional<RenderBounds> field_bounds(const VoxelField& field, const Ray& ray) {
  const auto hit = intersect(ray, field.bounds());
  if (!hit) return std::nullopt;
  return RenderBounds::full(hit->first, hit->second);
}

/// Alpha-compositing quadrature of the volume rendering integral:
/// alpha_i = 1 - exp(-sigma_i delta_i), w_i = alpha_i prod_{j<i} (1 - alpha_j).
inline RayRenderOutput render_ray(const VoxelField& field, const Ray& ray, const RenderBounds& bounds,
                                  const RaySampling& sampling) {
  validate(bounds);
  if (sampling.n_samples < 1) throw InputError("n_samples must be at least 1");
  detail::RayTrace tr;
  detail::trace_forward(field, ray, bounds, sampling, tr);
  return detail::summarize(tr, bounds, sampling);
}

/// Sparse parameter gradient, keyed by flat parameter index (voxel * 5 + channel).
using SparseGradient = std::map<std::size_t, double>;

/// Gradient of upstream . color with respect to every touched raw
/// parameter. Must be called with the same sampling (including seed) as the
/// forward pass it differentiates.
inline SparseGradient render_ray_backward(const VoxelField& field, const Ray& ray, const RenderBounds& bounds,
                                          const RaySampling& sampling, const Rgb& upstream) {
  validate(bounds);
  if (sampling.n_samples < 1) throw InputError("n_samples must be at least 1");
  detail::RayTrace tr;
  detail::trace_forward(field, ray, bounds, sampling, tr);
  SparseGradient grad;
  detail::trace_backward(tr, bounds, sampling, upstream, 0.0, [&](std::size_t i, double g) { grad[i] += g; });
  return grad;
}

/// How each pixel's integration interval is chosen.
struct RenderPolicy {
  const Dtm* crop_dtm = nullptr;
  double crop_margin = 0.3;
  bool masked = false;

  static RenderPolicy full() { return {}; }
  static RenderPolicy crop(const Dtm& dtm, double margin) { return {&dtm, margin, false}; }
  static RenderPolicy mask() { return {nullptr, 0.3, true}; }
};

struct ImageRenderOptions {
  int n_samples = 128;
  Rgb background = Rgb::Zero();
  int threads = 1;
};

/// Bounds for one camera ray under a policy; nullopt when nothing remains to integrate.
inline std::optional<RenderBounds> policy_bounds(const VoxelField& field, const Ray& ray, const RenderPolicy& policy) {
  auto b = field_bounds(field, ray);
  if (!b) return std::nullopt;
  b->masked = policy.masked;
  if (policy.crop_dtm) {
    Ray clipped = ray;
    clipped.t_near = b->t1;
    clipped.t_far = b->t2;
    const double tg = ray_ground_entry(clipped, *policy.crop_dtm, policy.crop_margin);
    if (!(tg < b->t2)) return std::nullopt;
    b->t_ground = tg;
  }
  return b;
}

/// Deterministic midpoint-sampled render of every pixel.
inline Image render_image(const VoxelField& field, const Camera& camera, const RenderPolicy& policy,
                          const ImageRenderOptions& opt) {
  validate(camera);
  if (opt.n_samples < 1) throw InputError("n_samples must be at least 1");
  Image img(camera.width, camera.height, opt.background);
  RaySampling sampling;
  sampling.n_samples = opt.n_samples;
  sampling.background = opt.background;
  parallel_chunks(static_cast<std::size_t>(camera.height), opt.threads, [&](int, std::size_t y0, std::size_t y1) {
    detail::RayTrace tr;
    for (std::size_t y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = ray_for_pixel(camera, x, static_cast<double>(y));
        const auto b = policy_bounds(field, ray, policy);
        if (!b) continue;
        detail::trace_forward(field, ray, *b, sampling, tr);
        img.set(x, static_cast<int>(y), detail::summarize(tr, *b, sampling).color);
      }
  });
  return img;
}

}  // namespace understory
