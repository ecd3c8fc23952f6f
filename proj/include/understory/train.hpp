// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "understory/error.hpp"
#include "understory/field.hpp"
#include "understory/geometry.hpp"
#include "understory/parallel.hpp"
#include "understory/render.hpp"
#include "understory/scene_synth.hpp"

namespace understory {

// ---------------------------------------------------------------------------
// Photometric losses

struct LossResult {
  double value = 0.0;
  std::vector<Rgb> gradient;  ///< d loss / d predicted, per ray
};

/// Per-channel L1 term and its subgradient (0 at exact ties).
inline double l1_term(double predicted, double target, double& grad) {
  const double r = predicted - target;
  grad = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
  return std::abs(r);
}

/// Per-channel low-light term ((p - t) / (sg(p) + eps))^2. The denominator is
/// held constant when differentiating.
inline double raw_term(double predicted, double target, double epsilon, double& grad) {
  const double denom = predicted + epsilon;
  const double r = predicted - target;
  grad = 2.0 * r / (denom * denom);
  return (r / denom) * (r / denom);
}

inline LossResult loss_l1(std::span<const Rgb> predicted, std::span<const Rgb> target) {
  if (predicted.size() != target.size()) throw InputError("loss inputs differ in length");
  LossResult out;
  out.gradient.resize(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (int k = 0; k < 3; ++k) out.value += l1_term(predicted[i][k], target[i][k], out.gradient[i][k]);
  return out;
}

inline LossResult loss_raw(std::span<const Rgb> predicted, std::span<const Rgb> target, double epsilon) {
  if (predicted.size() != target.size()) throw InputError("loss inputs differ in length");
  if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
  LossResult out;
  out.gradient.resize(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (int k = 0; k < 3; ++k) out.value += raw_term(predicted[i][k], target[i][k], epsilon, out.gradient[i][k]);
  return out;
}

enum class LossKind { kL1, kRaw, kL1PlusRaw };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kL1: return "l1";
    case LossKind::kRaw: return "raw";
    case LossKind::kL1PlusRaw: return "l1+raw";
  }
  return "l1";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "l1") return LossKind::kL1;
  if (s == "raw") return LossKind::kRaw;
  if (s == "l1+raw" || s == "l1_raw") return LossKind::kL1PlusRaw;
  throw InputError("unknown loss kind '" + s + "' (expected l1, raw or l1+raw)");
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  LossKind loss = LossKind::kL1;
  double raw_weight = 1.0;  ///< lambda in l1 + lambda * raw
  double epsilon = 1e-3;
  int n_samples = 64;
  int batch_size = 8192;
  int step_count = 5000;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_epsilon = 1e-10;
  double visibility_loss_weight = 0.1;
  double distortion_weight = 0.0;  ///< weight-spread penalty per ray; 0 disables
  std::uint64_t rng_seed = 0;
  int threads = 1;
  int log_every = 50;
  int checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  Rgb background = Rgb::Zero();
};

inline void validate(const TrainConfig& c) {
  if (!(c.epsilon > 0.0)) throw InputError("epsilon must be positive");
  if (c.batch_size < 1) throw InputError("batch_size must be at least 1");
  if (!(c.learning_rate >= 0.0)) throw InputError("learning_rate must be non-negative");
  if (c.n_samples < 1) throw InputError("n_samples must be at least 1");
  if (!(c.distortion_weight >= 0.0)) throw InputError("distortion_weight must be non-negative");
  if (c.step_count < 0) throw InputError("step_count must be non-negative");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw InputError("Adam moments must lie in [0, 1)");
}

struct FieldConfig {
  std::optional<Aabb> bounds;  ///< derived from the dataset DTM when absent
  double height_above_ground = 12.0;
  double depth_below_ground = 0.5;
  std::array<int, 3> resolution{64, 64, 64};
  FieldInit init;
};

inline Aabb field_bounds_for(const FieldConfig& cfg, const Dtm& dtm) {
  if (cfg.bounds) return *cfg.bounds;
  Aabb b;
  b.lo = Vec3(dtm.footprint_lo().x(), dtm.footprint_lo().y(), dtm.min_height() - cfg.depth_below_ground);
  b.hi = Vec3(dtm.footprint_hi().x(), dtm.footprint_hi().y(), dtm.max_height() + cfg.height_above_ground);
  return b;
}

// ---------------------------------------------------------------------------
// Ray batches

struct PixelRef {
  std::uint32_t image = 0;
  std::uint32_t x = 0;
  std::uint32_t y = 0;
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<Rgb> target_colors;
  std::vector<std::optional<double>> target_visibility;
  std::vector<PixelRef> pixels;

  std::size_t size() const { return rays.size(); }
};

enum class BatchMode { kUniform, kExhaustive };

inline std::size_t total_pixels(const Dataset& ds) {
  std::size_t n = 0;
  for (const auto& img : ds.images) n += img.pixel_count();
  return n;
}

namespace detail {

inline void append_pixel(const Dataset& ds, std::uint32_t image, std::uint32_t x, std::uint32_t y, RayBatch& b) {
  b.rays.push_back(ray_for_pixel(ds.cameras[image], x, y));
  b.target_colors.push_back(ds.images[image].at(static_cast<int>(x), static_cast<int>(y)));
  if (image < ds.segmentation.size() && ds.segmentation[image].pixel_count() > 0)
    b.target_visibility.emplace_back(ds.segmentation[image](static_cast<int>(x), static_cast<int>(y)));
  else
    b.target_visibility.emplace_back(std::nullopt);
  b.pixels.push_back({image, x, y});
}

}  // namespace detail

/// Uniform sampling over all (image, pixel) pairs. Exhaustive mode draws
/// without replacement from a random permutation, so batch_size equal to
/// the pixel count visits every pixel exactly once.
inline RayBatch sample_ray_batch(const Dataset& ds, int batch_size, std::mt19937_64& rng,
                                 BatchMode mode = BatchMode::kUniform) {
  if (ds.images.empty()) throw InputError("dataset is empty");
  if (batch_size < 1) throw InputError("batch_size must be at least 1");
  std::vector<std::size_t> offsets(ds.images.size() + 1, 0);
  for (std::size_t i = 0; i < ds.images.size(); ++i) offsets[i + 1] = offsets[i] + ds.images[i].pixel_count();
  const std::size_t total = offsets.back();

  auto locate = [&](std::size_t flat, RayBatch& b) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const auto image = static_cast<std::uint32_t>(std::distance(offsets.begin(), it) - 1);
    const std::size_t local = flat - offsets[image];
    const int w = ds.images[image].width;
    detail::append_pixel(ds, image, static_cast<std::uint32_t>(local % w), static_cast<std::uint32_t>(local / w), b);
  };

  RayBatch batch;
  batch.rays.reserve(static_cast<std::size_t>(batch_size));
  if (mode == BatchMode::kExhaustive) {
    std::vector<std::size_t> perm(total);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t n = std::min<std::size_t>(total, static_cast<std::size_t>(batch_size));
    for (std::size_t i = 0; i < n; ++i) locate(perm[i], batch);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (int i = 0; i < batch_size; ++i) locate(pick(rng), batch);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Optimization

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  void reset(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
  }
};

struct StepResult {
  double loss = 0.0;  ///< mean per ray over the batch
  double grad_norm = 0.0;
};

/// Scratch buffers reused across steps.
struct TrainWorkspace {
  std::vector<std::vector<double>> grads;  ///< one dense buffer per worker
};

inline std::uint64_t ray_seed(std::uint64_t seed, long step, std::size_t ray) {
  return SplitMix64(seed ^ (static_cast<std::uint64_t>(step) * 0xA24BAED4963EE407ULL), ray)();
}

namespace detail {

struct RayLoss {
  double value = 0.0;
  Rgb d_color = Rgb::Zero();
  double d_visibility = 0.0;
};

inline RayLoss ray_loss(const Rgb& pred, const Rgb& target, double vis, const std::optional<double>& vis_target,
                        const TrainConfig& cfg) {
  RayLoss out;
  for (int k = 0; k < 3; ++k) {
    double g = 0.0;
    if (cfg.loss == LossKind::kL1 || cfg.loss == LossKind::kL1PlusRaw) {
      out.value += l1_term(pred[k], target[k], g);
      out.d_color[k] += g;
    }
    if (cfg.loss == LossKind::kRaw || cfg.loss == LossKind::kL1PlusRaw) {
      const double lambda = cfg.loss == LossKind::kL1PlusRaw ? cfg.raw_weight : 1.0;
      out.value += lambda * raw_term(pred[k], target[k], cfg.epsilon, g);
      out.d_color[k] += lambda * g;
    }
  }
  if (vis_target && cfg.visibility_loss_weight > 0.0) {
    constexpr double kClamp = 1e-6;
    const double v = std::clamp(vis, kClamp, 1.0 - kClamp);
    const double t = *vis_target;
    out.value += cfg.visibility_loss_weight * -(t * std::log(v) + (1.0 - t) * std::log(1.0 - v));
    if (vis > kClamp && vis < 1.0 - kClamp) out.d_visibility = cfg.visibility_loss_weight * (v - t) / (v * (1.0 - v));
  }
  return out;
}

}  // namespace detail

/// Renders every batch ray (full mode), accumulates the photometric and
/// visibility losses, and applies one Adam update to the raw parameters that
/// received a gradient. Parameters no batch ray touched are left unchanged.
inline StepResult train_step(VoxelField& field, const RayBatch& batch, const TrainConfig& cfg, AdamState& opt,
                             TrainWorkspace& ws) {
  validate(cfg);
  const std::size_t n_params = field.param_count();
  if (opt.m.size() != n_params) opt.reset(n_params);
  const int workers = effective_workers(batch.size(), cfg.threads);
  if (ws.grads.size() < static_cast<std::size_t>(workers)) ws.grads.resize(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) ws.grads[w].assign(n_params, 0.0);
  std::vector<double> losses(static_cast<std::size_t>(workers), 0.0);
  const long step = opt.step;

  parallel_chunks(batch.size(), workers, [&](int w, std::size_t begin, std::size_t end) {
    detail::RayTrace tr;
    std::vector<double> d_weight;
    std::vector<double>& grad = ws.grads[w];
    double local = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      const Ray& ray = batch.rays[r];
      auto b = field_bounds(field, ray);
      Rgb pred = cfg.background;
      double vis = 1.0;
      double dist = 0.0;
      RaySampling sampling{cfg.n_samples, true, ray_seed(cfg.rng_seed, step, r), cfg.background};
      if (b) {
        detail::trace_forward(field, ray, *b, sampling, tr);
        const auto out = detail::summarize(tr, *b, sampling);
        pred = out.color;
        vis = out.rendered_visibility;
        if (cfg.distortion_weight > 0.0) {
          dist = cfg.distortion_weight * detail::distortion(out.t, out.weights, b->start(), b->t2, d_weight);
          for (double& g : d_weight) g *= cfg.distortion_weight;
        }
      }
      auto rl = detail::ray_loss(pred, batch.target_colors[r], vis, batch.target_visibility[r], cfg);
      rl.value += dist;
      if (!std::isfinite(rl.value) || !rl.d_color.allFinite() || !std::isfinite(rl.d_visibility)) {
        std::ostringstream msg;
        msg << "non-finite loss at batch ray " << r;
        if (r < batch.pixels.size())
          msg << " (image " << batch.pixels[r].image << ", pixel " << batch.pixels[r].x << "," << batch.pixels[r].y
              << ")";
        throw NumericalError(msg.str());
      }
      local += rl.value;
      if (b)
        detail::trace_backward(tr, *b, sampling, rl.d_color, rl.d_visibility,
                               [&grad](std::size_t i, double g) { grad[i] += g; },
                               cfg.distortion_weight > 0.0 ? &d_weight : nullptr);
    }
    losses[w] = local;
  });

  std::vector<double>& grad = ws.grads[0];
  for (int w = 1; w < workers; ++w) {
    const std::vector<double>& other = ws.grads[w];
    for (std::size_t i = 0; i < n_params; ++i) grad[i] += other[i];
  }
  const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(1, batch.size()));
  double loss = 0.0;
  for (double l : losses) loss += l;

  StepResult res;
  res.loss = loss * scale;
  double norm2 = 0.0;
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  double* params = field.params().data();
  for (std::size_t i = 0; i < n_params; ++i) {
    const double g = grad[i] * scale;
    if (g == 0.0) continue;
    norm2 += g * g;
    opt.m[i] = cfg.beta1 * opt.m[i] + (1.0 - cfg.beta1) * g;
    opt.v[i] = cfg.beta2 * opt.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = opt.m[i] / bc1;
    const double vhat = opt.v[i] / bc2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
  }
  res.grad_norm = std::sqrt(norm2);
  if (!std::isfinite(res.grad_norm)) throw NumericalError("non-finite gradient norm at step " + std::to_string(step));
  return res;
}

inline StepResult train_step(VoxelField& field, const RayBatch& batch, const TrainConfig& cfg, AdamState& opt) {
  TrainWorkspace ws;
  return train_step(field, batch, cfg, opt, ws);
}

struct LogEntry {
  long step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double elapsed_s = 0.0;
};

struct FitResult {
  VoxelField field;
  std::vector<LogEntry> log;
};

struct FitCallbacks {
  std::function<void(long step, const VoxelField&)> on_checkpoint;
  std::function<void(const LogEntry&)> on_log;
};

/// Trains from `initial` (or a freshly initialized field) for step_count steps.
inline FitResult fit(const Dataset& ds, const FieldConfig& field_cfg, const TrainConfig& cfg,
                     const FitCallbacks& callbacks = {}, std::optional<VoxelField> initial = std::nullopt,
                     long first_step = 0) {
  validate(cfg);
  if (ds.size() < 2) throw InputError("training needs at least 2 views");
  FitResult result;
  result.field = initial ? std::move(*initial) : VoxelField(field_bounds_for(field_cfg, ds.dtm), field_cfg.resolution,
                                                            field_cfg.init);
  std::mt19937_64 rng(cfg.rng_seed);
  // Skip the batches a resumed run has already consumed.
  for (long s = 0; s < first_step; ++s) (void)sample_ray_batch(ds, cfg.batch_size, rng);
  AdamState opt;
  opt.reset(result.field.param_count());
  TrainWorkspace ws;
  const auto t0 = std::chrono::steady_clock::now();
  for (long s = first_step; s < first_step + cfg.step_count; ++s) {
    const RayBatch batch = sample_ray_batch(ds, cfg.batch_size, rng);
    const StepResult r = train_step(result.field, batch, cfg, opt, ws);
    const long done = s + 1;
    const bool last = done == first_step + cfg.step_count;
    if (cfg.log_every > 0 && (done % cfg.log_every == 0 || s == first_step || last)) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      LogEntry e{done, r.loss, r.grad_norm, elapsed};
      result.log.push_back(e);
      if (callbacks.on_log) callbacks.on_log(e);
    }
    if (callbacks.on_checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && !last)
      callbacks.on_checkpoint(done, result.field);
  }
  return result;
}

}  // namespace understory
