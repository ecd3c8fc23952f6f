// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles/finite_diff.hpp"
#include "oracles/generators.hpp"
#include "understory/train.hpp"

using namespace understory;

namespace {

AnalyticScene flat_scene(double extent = 8.0, int stems = 0, double canopy = 0.0) {
  ForestParams p;
  p.extent = extent;
  p.n_stems = stems;
  p.canopy_density = canopy;
  p.terrain_relief = 0.0;
  p.texture_feature_size = 1.0;
  p.n_targets = 1;
  p.stem_height_range = {3.0, 4.0};
  p.stem_radius_range = {0.1, 0.15};
  return generate_forest(p);
}

Dataset small_capture(const AnalyticScene& scene, int nx, int ny, int size = 24) {
  CaptureConfig c;
  c.n_x = nx;
  c.n_y = ny;
  c.spacing = 1.5;
  c.altitude = 12.0;
  c.width = c.height = size;
  c.gsd_target = 0.3;
  return generate_capture(scene, c);
}

TrainConfig small_config() {
  TrainConfig c;
  c.n_samples = 24;
  c.batch_size = 256;
  c.learning_rate = 5e-2;
  c.log_every = 1;
  return c;
}

FieldConfig small_field() {
  FieldConfig f;
  f.resolution = {12, 12, 8};
  f.height_above_ground = 2.0;
  return f;
}

}  // namespace

TEST(LossL1, HandExample) {
  const std::vector<Rgb> p{Rgb(0.3, 0.3, 0.3)}, t{Rgb(0.1, 0.5, 0.3)};
  const auto r = loss_l1(p, t);
  EXPECT_NEAR(r.value, 0.4, 1e-15);
  EXPECT_EQ(r.gradient[0], Rgb(1.0, -1.0, 0.0));
}

TEST(LossL1, IdentityAndHomogeneity) {
  oracle::Gen g(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Rgb> p(8), t(8), p2(8);
    for (int i = 0; i < 8; ++i) {
      p[i] = Rgb(g.uniform(), g.uniform(), g.uniform());
      t[i] = Rgb(g.uniform(), g.uniform(), g.uniform());
      p2[i] = t[i] + 2.0 * (p[i] - t[i]);
    }
    EXPECT_EQ(loss_l1(t, t).value, 0.0);
    EXPECT_NEAR(loss_l1(p2, t).value, 2.0 * loss_l1(p, t).value, 1e-12);
  }
  EXPECT_THROW(loss_l1(std::vector<Rgb>(2), std::vector<Rgb>(3)), InputError);
}

TEST(LossRaw, HandExample) {
  const std::vector<Rgb> p{Rgb(0.1, 0.4, 0.4)}, t{Rgb(0.2, 0.4, 0.4)};
  const auto r = loss_raw(p, t, 1e-3);
  EXPECT_NEAR(r.value, 0.98030, 1e-5);
  EXPECT_NEAR(r.value, std::pow(-0.1 / 0.101, 2), 1e-14);
  EXPECT_NEAR(r.gradient[0].x(), -19.606, 1e-3);
  EXPECT_EQ(r.gradient[0].y(), 0.0);
  EXPECT_THROW(loss_raw(p, t, 0.0), InputError);
}

TEST(LossRaw, EmphasizesDarkPixels) {
  const double eps = 1e-3;
  const std::vector<Rgb> dark{Rgb::Constant(0.05)}, dark_t{Rgb::Constant(0.06)};
  const std::vector<Rgb> bright{Rgb::Constant(0.5)}, bright_t{Rgb::Constant(0.51)};
  const double ratio = loss_raw(dark, dark_t, eps).value / loss_raw(bright, bright_t, eps).value;
  EXPECT_NEAR(ratio, std::pow(0.501 / 0.051, 2), 1e-9);
  EXPECT_NEAR(ratio, 96.5, 0.05);
}

TEST(LossRaw, GradientStopsAtDenominator) {
  oracle::Gen g(2);
  for (int trial = 0; trial < 200; ++trial) {
    const double p = g.uniform(0.01, 1.0), t = g.uniform(0.0, 1.0), eps = 1e-3;
    if (std::abs(p - t) < 0.05) continue;
    double grad = 0.0;
    raw_term(p, t, eps, grad);
    const double frozen_denom = p + eps;
    double x = p;
    const double frozen = oracle::central_difference(x, 1e-6, [&] {
      return std::pow((x - t) / frozen_denom, 2);
    });
    const double unfrozen = oracle::central_difference(x, 1e-6, [&] { return std::pow((x - t) / (x + eps), 2); });
    EXPECT_LT(oracle::relative_error(grad, frozen), 1e-6);
    EXPECT_GT(oracle::relative_error(grad, unfrozen), 1e-3);
  }
}

TEST(LossRaw, VanishesForLargeEpsilon) {
  oracle::Gen g(3);
  std::vector<Rgb> p(4), t(4);
  for (int i = 0; i < 4; ++i) {
    p[i] = Rgb(g.uniform(), g.uniform(), g.uniform());
    t[i] = Rgb(g.uniform(), g.uniform(), g.uniform());
  }
  EXPECT_LT(loss_raw(p, t, 1e6).value, 1e-11);
  EXPECT_EQ(loss_raw(t, t, 1e-3).value, 0.0);
  for (const Rgb& gr : loss_raw(t, t, 1e-3).gradient) EXPECT_EQ(gr, Rgb::Zero());
}

TEST(LossKindNames, RoundTrip) {
  for (LossKind k : {LossKind::kL1, LossKind::kRaw, LossKind::kL1PlusRaw})
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_loss_kind("l2"), InputError);
}

TEST(TrainConfigValidate, RejectsBadValues) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(validate(c), InputError);
  };
  bad([](TrainConfig& c) { c.epsilon = 0.0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.learning_rate = -1.0; });
  bad([](TrainConfig& c) { c.n_samples = 0; });
  bad([](TrainConfig& c) { c.distortion_weight = -0.1; });
  bad([](TrainConfig& c) { c.beta2 = 1.0; });
  EXPECT_NO_THROW(validate(TrainConfig{}));
}

TEST(SampleRayBatch, ExhaustiveVisitsEveryPixelOnce) {
  const Dataset ds = small_capture(flat_scene(), 2, 1, 8);
  std::mt19937_64 rng(4);
  const RayBatch b = sample_ray_batch(ds, static_cast<int>(total_pixels(ds)), rng, BatchMode::kExhaustive);
  ASSERT_EQ(b.size(), 128u);
  std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> seen;
  for (const auto& p : b.pixels) seen.insert({p.image, p.x, p.y});
  EXPECT_EQ(seen.size(), 128u);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& p = b.pixels[i];
    EXPECT_EQ(b.target_colors[i], ds.images[p.image].at(static_cast<int>(p.x), static_cast<int>(p.y)));
    const Ray expect = ray_for_pixel(ds.cameras[p.image], p.x, p.y);
    EXPECT_TRUE(b.rays[i].direction.isApprox(expect.direction));
  }
}

TEST(SampleRayBatch, SeededAndDeterministic) {
  const Dataset ds = small_capture(flat_scene(), 2, 2, 8);
  std::mt19937_64 a(9), b(9), c(10);
  const RayBatch ba = sample_ray_batch(ds, 64, a), bb = sample_ray_batch(ds, 64, b), bc = sample_ray_batch(ds, 64, c);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(ba.pixels[i].image, bb.pixels[i].image);
    EXPECT_EQ(ba.pixels[i].x, bb.pixels[i].x);
    EXPECT_EQ(ba.pixels[i].y, bb.pixels[i].y);
  }
  bool differs = false;
  for (std::size_t i = 0; i < 64; ++i) differs = differs || ba.pixels[i].x != bc.pixels[i].x;
  EXPECT_TRUE(differs);
  EXPECT_THROW(sample_ray_batch(Dataset{}, 4, a), InputError);
}

TEST(SampleRayBatch, CanopyPixelsHaveZeroVisibilityTarget) {
  const AnalyticScene scene = flat_scene(10.0, 2, 1.0);
  const Dataset ds = small_capture(scene, 1, 1, 32);
  std::mt19937_64 rng(1);
  const RayBatch b = sample_ray_batch(ds, static_cast<int>(total_pixels(ds)), rng, BatchMode::kExhaustive);
  int covered = 0, open = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    ASSERT_TRUE(b.target_visibility[i].has_value());
    const bool visible = oracle_trace(scene, b.rays[i], Layers::all()).ground_visible;
    EXPECT_EQ(*b.target_visibility[i], visible ? 1.0 : 0.0);
    (visible ? open : covered)++;
  }
  EXPECT_GT(covered, 0);
  EXPECT_GT(open, 0);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  const Dataset ds = small_capture(flat_scene(), 2, 1);
  VoxelField f(field_bounds_for(small_field(), ds.dtm), small_field().resolution);
  const auto before = f.params();
  TrainConfig cfg = small_config();
  cfg.learning_rate = 0.0;
  AdamState opt;
  opt.reset(f.param_count());
  std::mt19937_64 rng(1);
  const StepResult r = train_step(f, sample_ray_batch(ds, 64, rng), cfg, opt);
  EXPECT_EQ(f.params(), before);
  EXPECT_GT(r.loss, 0.0);
  EXPECT_GT(r.grad_norm, 0.0);
}

TEST(TrainStep, SingleRayMovesAgainstGradient) {
  const Aabb box{Vec3::Zero(), Vec3::Ones()};
  VoxelField f(box, {2, 2, 2}, FieldInit{1.0, 0.0, 10.0});
  RayBatch b;
  Ray r;
  r.origin = Vec3(0.5, 0.5, 3.0);
  r.direction = -Vec3::UnitZ();
  r.t_far = 10.0;
  b.rays = {r};
  b.target_colors = {Rgb(0.9, 0.1, 0.5)};
  b.target_visibility = {std::nullopt};
  TrainConfig cfg = small_config();
  cfg.loss = LossKind::kL1;
  cfg.learning_rate = 1e-2;
  AdamState opt;
  opt.reset(f.param_count());
  const auto before = f.params();
  // Rendered color is about 0.37 per channel: below the red target, above the green one.
  train_step(f, b, cfg, opt);
  for (std::size_t v = 0; v < f.voxel_count(); ++v) {
    EXPECT_GT(f.raw(v, kRed), before[v * kChannels + kRed]);
    EXPECT_LT(f.raw(v, kGreen), before[v * kChannels + kGreen]);
  }
}

TEST(TrainStep, UntouchedVoxelsStayFixed) {
  const Aabb box{Vec3::Zero(), Vec3(4, 4, 4)};
  VoxelField f(box, {8, 8, 8});
  RayBatch b;
  for (double x : {0.3, 0.6}) {
    Ray r;
    r.origin = Vec3(x, 0.4, 10.0);
    r.direction = -Vec3::UnitZ();
    r.t_far = 20.0;
    b.rays.push_back(r);
    b.target_colors.push_back(Rgb(0.2, 0.8, 0.1));
    b.target_visibility.push_back(0.0);
  }
  const auto before = f.params();
  AdamState opt;
  opt.reset(f.param_count());
  TrainConfig cfg = small_config();
  cfg.distortion_weight = 0.1;
  train_step(f, b, cfg, opt);
  int moved = 0;
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) {
        const std::size_t v = f.voxel_index(i, j, k);
        bool changed = false;
        for (int c = 0; c < kChannels; ++c) changed = changed || f.raw(v, c) != before[v * kChannels + c];
        if (i > 1 || j > 1) EXPECT_FALSE(changed) << i << "," << j << "," << k;
        moved += changed;
      }
  EXPECT_GT(moved, 0);
}

TEST(TrainStep, AllVisibleTargetsLeaveVisibilityAlone) {
  const Aabb box{Vec3::Zero(), Vec3::Ones()};
  oracle::Gen g(6);
  VoxelField f(box, {4, 4, 4});
  for (std::size_t v = 0; v < f.voxel_count(); ++v) f.raw(v, kSigma) = g.uniform(-1.0, 2.0);
  RayBatch b;
  for (int i = 0; i < 32; ++i) {
    b.rays.push_back(g.ray_through(box));
    b.target_colors.push_back(Rgb::Constant(0.5));
    b.target_visibility.push_back(1.0);
  }
  TrainConfig cfg = small_config();
  cfg.visibility_loss_weight = 1.0;
  std::vector<double> grad(f.param_count(), 0.0);
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto fb = field_bounds(f, b.rays[r]);
    detail::RayTrace tr;
    RaySampling s;
    s.n_samples = cfg.n_samples;
    detail::trace_forward(f, b.rays[r], *fb, s, tr);
    const auto out = detail::summarize(tr, *fb, s);
    const auto rl = detail::ray_loss(out.color, b.target_colors[r], out.rendered_visibility, 1.0, cfg);
    detail::trace_backward(tr, *fb, s, Rgb::Zero(), rl.d_visibility, [&](std::size_t i, double v) { grad[i] += v; });
  }
  for (std::size_t v = 0; v < f.voxel_count(); ++v) EXPECT_LT(std::abs(grad[v * kChannels + kVisibility]), 1e-3);
}

TEST(TrainStep, NonFiniteLossNamesTheRay) {
  const Aabb box{Vec3::Zero(), Vec3::Ones()};
  VoxelField f(box, {2, 2, 2});
  RayBatch b;
  Ray r;
  r.origin = Vec3(0.5, 0.5, 3.0);
  r.direction = -Vec3::UnitZ();
  r.t_far = 10.0;
  b.rays = {r, r};
  b.target_colors = {Rgb::Constant(0.5), Rgb(std::nan(""), 0.0, 0.0)};
  b.target_visibility = {std::nullopt, std::nullopt};
  AdamState opt;
  opt.reset(f.param_count());
  try {
    train_step(f, b, small_config(), opt);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("ray 1"), std::string::npos) << e.what();
  }
}

TEST(Fit, FlatSceneLossDropsBelowQuarter) {
  const Dataset ds = small_capture(flat_scene(), 5, 1);
  TrainConfig cfg = small_config();
  cfg.step_count = 200;
  cfg.log_every = 200;
  const FitResult r = fit(ds, small_field(), cfg);
  ASSERT_GE(r.log.size(), 2u);
  EXPECT_EQ(r.log.front().step, 1);
  EXPECT_EQ(r.log.back().step, 200);
  EXPECT_LT(r.log.back().loss, 0.25 * r.log.front().loss);
}

TEST(Fit, IdenticalSeedsGiveIdenticalCurves) {
  const Dataset ds = small_capture(flat_scene(), 2, 2, 16);
  TrainConfig cfg = small_config();
  cfg.step_count = 20;
  cfg.distortion_weight = 0.05;
  const FitResult a = fit(ds, small_field(), cfg);
  const FitResult b = fit(ds, small_field(), cfg);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);
    EXPECT_EQ(a.log[i].grad_norm, b.log[i].grad_norm);
  }
  EXPECT_EQ(a.field.params(), b.field.params());
}

TEST(Fit, ThreadCountOnlyReassociates) {
  const Dataset ds = small_capture(flat_scene(), 2, 2, 16);
  TrainConfig cfg = small_config();
  cfg.step_count = 5;
  const FitResult a = fit(ds, small_field(), cfg);
  cfg.threads = 3;
  const FitResult b = fit(ds, small_field(), cfg);
  for (std::size_t i = 0; i < a.log.size(); ++i)
    EXPECT_LT(oracle::relative_error(b.log[i].loss, a.log[i].loss), 1e-6);
}

TEST(Fit, RequiresTwoViews) {
  const Dataset ds = small_capture(flat_scene(), 1, 1, 8);
  EXPECT_THROW(fit(ds, small_field(), small_config()), InputError);
}

TEST(Fit, CheckpointCallbackCadence) {
  const Dataset ds = small_capture(flat_scene(), 2, 1, 8);
  TrainConfig cfg = small_config();
  cfg.step_count = 10;
  cfg.checkpoint_every = 3;
  std::vector<long> steps;
  FitCallbacks cb;
  cb.on_checkpoint = [&](long s, const VoxelField&) { steps.push_back(s); };
  fit(ds, small_field(), cfg, cb);
  EXPECT_EQ(steps, (std::vector<long>{3, 6, 9}));
}
