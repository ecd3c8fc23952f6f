// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles/generators.hpp"
#include "understory/io/json_io.hpp"
#include "understory/render.hpp"
#include "understory/scene_synth.hpp"

using namespace understory;

namespace {

Camera nadir_camera(const Vec3& pos, int w, int h, double f) {
  Camera cam;
  cam.fx = cam.fy = f;
  cam.width = w;
  cam.height = h;
  cam.cx = 0.5 * w;
  cam.cy = 0.5 * h;
  cam.pose = nadir_pose(pos);
  return cam;
}

AnalyticScene bare_plane(double extent = 10.0) {
  AnalyticScene s;
  s.terrain = Dtm::flat(Vec2::Zero(), extent, 0.5, 0.0);
  s.texture.feature_size = 1.5;
  s.background = Rgb(0.3, 0.6, 0.9);
  return s;
}

}  // namespace

TEST(GenerateForest, BareTerrain) {
  ForestParams p;
  p.n_stems = 0;
  p.canopy_density = 0.0;
  const AnalyticScene s = generate_forest(p);
  EXPECT_TRUE(s.stems.empty());
  EXPECT_TRUE(s.canopy.empty());
  EXPECT_NEAR(s.terrain.footprint_hi().x() - s.terrain.footprint_lo().x(), 30.0, 1e-9);
}

TEST(GenerateForest, SameSeedSameScene) {
  ForestParams p;
  p.seed = 42;
  const auto a = io::scene_to_json(generate_forest(p)).dump();
  const auto b = io::scene_to_json(generate_forest(p)).dump();
  EXPECT_EQ(a, b);
  p.seed = 43;
  EXPECT_NE(a, io::scene_to_json(generate_forest(p)).dump());
}

TEST(GenerateForest, StemSeparationAndCrowns) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ForestParams p;
    p.seed = seed;
    p.n_stems = 12;
    p.extent = 30.0;
    const AnalyticScene s = generate_forest(p);
    ASSERT_EQ(s.stems.size(), 12u);
    const double min_sep = 4.0 * p.stem_radius_range.second;
    for (std::size_t i = 0; i < s.stems.size(); ++i)
      for (std::size_t j = i + 1; j < s.stems.size(); ++j)
        EXPECT_GE((s.stems[i].base - s.stems[j].base).norm(), min_sep);
    EXPECT_GE(s.canopy.size(), 3u * 12u);
    EXPECT_LE(s.canopy.size(), 8u * 12u);
    for (const auto& b : s.canopy) {
      EXPECT_GT(b.opacity, 0.0);
      EXPECT_LT(b.opacity, 1.0);
    }
    EXPECT_NO_THROW(validate(s));
  }
}

TEST(GenerateForest, InfeasiblePackingNamesCapacity) {
  ForestParams p;
  p.extent = 6.0;
  p.canopy_density = 0.0;
  p.n_stems = 500;
  try {
    generate_forest(p);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    const double margin = p.edge_margin + p.stem_radius_range.second;
    const int cap = hex_lattice_capacity(p.extent - 2.0 * margin, 4.0 * p.stem_radius_range.second);
    EXPECT_NE(std::string(e.what()).find("max feasible count is " + std::to_string(cap)), std::string::npos)
        << e.what();
  }
  p.n_stems = -1;
  EXPECT_THROW(generate_forest(p), InputError);
}

TEST(GenerateForest, PackingAtCapacitySucceeds) {
  ForestParams p;
  p.extent = 8.0;
  p.canopy_density = 0.0;
  const double margin = p.edge_margin + p.stem_radius_range.second;
  p.n_stems = hex_lattice_capacity(p.extent - 2.0 * margin, 4.0 * p.stem_radius_range.second);
  const AnalyticScene s = generate_forest(p);
  EXPECT_EQ(static_cast<int>(s.stems.size()), p.n_stems);
  for (std::size_t i = 0; i < s.stems.size(); ++i)
    for (std::size_t j = i + 1; j < s.stems.size(); ++j)
      EXPECT_GE((s.stems[i].base - s.stems[j].base).norm(), 4.0 * p.stem_radius_range.second - 1e-9);
}

TEST(HexLattice, CapacityMatchesPointCount) {
  oracle::Gen g(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double side = g.uniform(0.0, 20.0), spacing = g.uniform(0.3, 5.0);
    const auto pts = detail::hex_lattice(0.0, side, spacing);
    EXPECT_EQ(static_cast<int>(pts.size()), hex_lattice_capacity(side, spacing));
    for (const auto& p : pts) {
      EXPECT_GE(p.x(), -1e-9);
      EXPECT_LE(p.x(), side + 1e-9);
      EXPECT_LE(p.y(), side + 1e-9);
    }
  }
}

TEST(SceneValidate, RejectsBadPrimitives) {
  AnalyticScene s = bare_plane();
  s.canopy.push_back(CanopyBlob{Vec3(5, 5, 3), Vec3(1, 1, 1), Rgb::Zero(), 1.0});
  EXPECT_THROW(validate(s), InputError);
  s.canopy.back().opacity = 0.5;
  EXPECT_NO_THROW(validate(s));
  s.canopy.back().center.x() = 9.5;
  EXPECT_THROW(validate(s), InputError);
  s.canopy.clear();
  Stem st;
  st.base = Vec2(5, 5);
  st.height = 0.0;
  s.stems.push_back(st);
  EXPECT_THROW(validate(s), InputError);
}

TEST(OracleRender, NoLayersGivesBackground) {
  ForestParams p;
  p.extent = 12.0;
  p.n_stems = 3;
  p.canopy_density = 0.8;
  const AnalyticScene s = generate_forest(p);
  const Image img = oracle_render(s, nadir_camera(Vec3(6, 6, 30), 16, 16, 20.0), Layers::none());
  for (std::size_t i = 0; i < img.pixel_count(); ++i) EXPECT_EQ(img.at(i), s.background);
}

TEST(OracleRender, BarePlaneShowsAlbedo) {
  const AnalyticScene s = bare_plane();
  const Camera cam = nadir_camera(Vec3(5, 5, 20), 24, 24, 60.0);
  const Image img = oracle_render(s, cam, Layers::all());
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      const Ray r = ray_for_pixel(cam, x, y);
      const Vec3 hit = r.origin + (-r.origin.z() / r.direction.z()) * r.direction;
      EXPECT_LT((img.at(x, y) - ground_albedo(s, hit.x(), hit.y())).norm(), 1e-4);
    }
}

TEST(OracleRender, HalfOpaqueBlobOverGround) {
  AnalyticScene s = bare_plane();
  CanopyBlob b;
  b.center = Vec3(5.0, 5.0, 4.0);
  b.radii = Vec3(1.5, 1.2, 0.8);
  b.albedo = Rgb(0.1, 0.5, 0.2);
  b.opacity = 0.5;
  s.canopy.push_back(b);
  Ray r;
  r.origin = Vec3(5.0, 5.0, 20.0);
  r.direction = -Vec3::UnitZ();
  r.t_far = kDefaultFar;
  const OracleHit hit = oracle_trace(s, r, Layers::all());
  const Rgb ground = ground_albedo(s, 5.0, 5.0);
  EXPECT_TRUE(hit.color.isApprox(0.5 * b.albedo + 0.5 * ground, 1e-12));
  EXPECT_FALSE(hit.ground_visible);
  EXPECT_TRUE(oracle_trace(s, r, Layers::ground_only()).color.isApprox(ground, 1e-12));
}

TEST(OracleRender, OverlappingBlobsCompositeAsOneMedium) {
  AnalyticScene s = bare_plane();
  s.background = Rgb::Zero();
  s.terrain = Dtm::flat(Vec2::Zero(), 10.0, 0.5, -100.0);
  CanopyBlob a{Vec3(5, 5, 4), Vec3(2, 2, 1), Rgb(1, 0, 0), 0.5};
  CanopyBlob b{Vec3(5, 5, 4.5), Vec3(2, 2, 1), Rgb(0, 0, 1), 0.3};
  s.canopy = {a, b};
  Ray r;
  r.origin = Vec3(5.0, 5.0, 20.0);
  r.direction = -Vec3::UnitZ();
  r.t_far = 50.0;
  // Exact segment integration of the piecewise-constant medium along the vertical chord.
  const double da = a.density(), db = b.density();
  const double top_only = 5.5 - 5.0, both = 5.0 - 3.5, bottom_only = 3.5 - 3.0;
  const double t1 = std::exp(-db * top_only), t2 = std::exp(-(da + db) * both), t3 = std::exp(-da * bottom_only);
  Rgb expect = (1.0 - t1) * b.albedo;
  expect += t1 * (1.0 - t2) * (da * a.albedo + db * b.albedo) / (da + db);
  expect += t1 * t2 * (1.0 - t3) * a.albedo;
  EXPECT_TRUE(oracle_trace(s, r, Layers::all()).color.isApprox(expect, 1e-12));
}

TEST(OracleRender, StemOccludesGround) {
  AnalyticScene s = bare_plane();
  Stem st;
  st.base = Vec2(5, 5);
  st.base_z = -Stem::kSink;
  st.height = 3.0;
  st.radius = 0.4;
  st.albedo = Rgb(0.7, 0.1, 0.7);
  s.stems.push_back(st);
  Ray r;
  r.origin = Vec3(5.1, 5.0, 20.0);
  r.direction = -Vec3::UnitZ();
  r.t_far = kDefaultFar;
  EXPECT_EQ(oracle_trace(s, r, Layers::all()).color, st.albedo);
  EXPECT_TRUE(oracle_trace(s, r, Layers::all()).ground_visible);
  Layers no_stems = Layers::all();
  no_stems.stems = false;
  EXPECT_NE(oracle_trace(s, r, no_stems).color, st.albedo);
}

TEST(GenerateCapture, IdentityExposureMatchesOracle) {
  ForestParams p;
  p.extent = 12.0;
  p.n_stems = 4;
  p.canopy_density = 0.8;
  const AnalyticScene s = generate_forest(p);
  CaptureConfig c;
  c.n_x = 2;
  c.n_y = 1;
  c.width = c.height = 16;
  c.altitude = 30.0;
  const Dataset ds = generate_capture(s, c);
  ASSERT_EQ(ds.size(), 2u);
  for (std::size_t v = 0; v < ds.size(); ++v) {
    EXPECT_EQ(ds.images[v].data, oracle_render(s, ds.cameras[v], Layers::all()).data);
    EXPECT_EQ(ds.names[v], view_name(v));
  }
  c.exposure_gain = 0.05;
  const Dataset dark = generate_capture(s, c);
  for (std::size_t v = 0; v < ds.size(); ++v)
    for (std::size_t i = 0; i < ds.images[v].data.size(); ++i)
      EXPECT_NEAR(dark.images[v].data[i], 0.05 * ds.images[v].data[i], 1e-15);
}

TEST(GenerateCapture, NoiseIsSeededAndClamped) {
  const AnalyticScene s = bare_plane();
  CaptureConfig c;
  c.n_x = c.n_y = 1;
  c.width = c.height = 16;
  c.altitude = 20.0;
  c.noise_sigma = 0.3;
  const Dataset a = generate_capture(s, c), b = generate_capture(s, c);
  EXPECT_EQ(a.images[0].data, b.images[0].data);
  for (double x : a.images[0].data) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
  c.seed = 8;
  EXPECT_NE(generate_capture(s, c).images[0].data, a.images[0].data);
}

TEST(GenerateCapture, GridGeometryAndGsd) {
  const AnalyticScene s = bare_plane(30.0);
  CaptureConfig c;
  c.n_x = c.n_y = 6;
  c.spacing = 3.0;
  c.altitude = 50.0;
  c.gsd_target = 0.1;
  const auto cams = capture_cameras(c, s);
  ASSERT_EQ(cams.size(), 36u);
  EXPECT_NEAR(capture_focal(c, s), 500.0, 1e-9);
  EXPECT_NEAR(capture_gsd(c, s), 50.0 / cams[0].fx, 1e-12);
  EXPECT_TRUE(cams.front().center().isApprox(Vec3(7.5, 7.5, 50.0)));
  EXPECT_TRUE(cams.back().center().isApprox(Vec3(22.5, 22.5, 50.0)));
  c.altitude = 0.0;
  EXPECT_THROW(capture_cameras(c, s), InputError);
  c.altitude = 50.0;
  c.gsd_target = 0.0;
  EXPECT_THROW(capture_cameras(c, s), InputError);
}

TEST(Segmentation, FoliagePixelsAreZero) {
  ForestParams p;
  p.extent = 12.0;
  p.n_stems = 4;
  p.canopy_density = 1.0;
  const AnalyticScene s = generate_forest(p);
  const Camera cam = nadir_camera(Vec3(6, 6, 30), 32, 32, 50.0);
  const Plane seg = segmentation_map(s, cam);
  int zeros = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const Ray r = ray_for_pixel(cam, x, y);
      bool crosses_blob = false;
      for (const auto& b : s.canopy) crosses_blob = crosses_blob || ellipsoid_chord(r.origin, r.direction, b);
      if (!crosses_blob) {
        EXPECT_EQ(seg(x, y), 1.0);
      }
      EXPECT_EQ(seg(x, y), oracle_trace(s, r, Layers::all()).ground_visible ? 1.0 : 0.0);
      zeros += seg(x, y) == 0.0;
    }
  EXPECT_GT(zeros, 0);
}

TEST(Segmentation, VisibleStemPointsAgreeAcrossViews) {
  ForestParams p;
  p.extent = 12.0;
  p.n_stems = 5;
  p.canopy_density = 0.7;
  p.seed = 11;
  const AnalyticScene s = generate_forest(p);
  const std::vector<Vec3> eyes{Vec3(4, 6, 25), Vec3(8, 6, 25), Vec3(6, 3, 22)};
  oracle::Gen g(5);
  int agreeing = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const Stem& st = s.stems[static_cast<std::size_t>(g.integer(0, 4))];
    const double ang = g.uniform(0.0, 6.283185307179586);
    const Vec3 pt(st.base.x() + st.radius * std::cos(ang), st.base.y() + st.radius * std::sin(ang),
                  g.uniform(st.base_z + Stem::kSink, st.top_z()));
    int visible_in = 0;
    for (const Vec3& eye : eyes) {
      Ray r;
      r.origin = eye;
      r.direction = (pt - eye).normalized();
      r.t_far = kDefaultFar;
      const double dist = (pt - eye).norm();
      const auto t = detail::stem_hit(r, st);
      if (!t || std::abs(*t - dist) > 1e-6) continue;
      bool blocked = false;
      for (const auto& other : s.stems)
        if (const auto to = detail::stem_hit(r, other); to && *to < dist - 1e-6) blocked = true;
      for (const auto& b : s.canopy)
        if (const auto ch = ellipsoid_chord(r.origin, r.direction, b); ch && ch->first < dist) blocked = true;
      if (blocked) continue;
      EXPECT_TRUE(oracle_trace(s, r, Layers::all()).ground_visible);
      ++visible_in;
    }
    agreeing += visible_in >= 2;
  }
  EXPECT_GT(agreeing, 0);
}

TEST(VoxelizeScene, QuadratureMatchesOracle) {
  AnalyticScene s = bare_plane(6.0);
  s.background = Rgb::Zero();
  s.texture.feature_size = 2.0;
  s.canopy.push_back(CanopyBlob{Vec3(3.0, 3.0, 2.2), Vec3(1.4, 1.1, 0.7), Rgb(0.1, 0.45, 0.1), 0.6});
  const Aabb box{Vec3(0, 0, -0.3), Vec3(6, 6, 3.3)};
  const VoxelField f = voxelize_scene(s, box, {96, 96, 58});
  const Camera cam = nadir_camera(Vec3(3, 3, 12), 24, 24, 40.0);
  const Image oracle = oracle_render(s, cam, Layers::all());
  ImageRenderOptions opt;
  opt.n_samples = 512;
  const Image rendered = render_image(f, cam, RenderPolicy::full(), opt);
  double mae = 0.0;
  for (std::size_t i = 0; i < oracle.data.size(); ++i) mae += std::abs(oracle.data[i] - rendered.data[i]);
  mae /= static_cast<double>(oracle.data.size());
  EXPECT_LT(mae, 0.02);
}

TEST(VoxelizeScene, FoliageVoxelsAreMasked) {
  AnalyticScene s = bare_plane(6.0);
  s.canopy.push_back(CanopyBlob{Vec3(3.0, 3.0, 2.2), Vec3(1.4, 1.1, 0.7), Rgb(0.1, 0.45, 0.1), 0.6});
  const Aabb box{Vec3(0, 0, -0.3), Vec3(6, 6, 3.3)};
  const VoxelField f = voxelize_scene(s, box, {24, 24, 18});
  EXPECT_LT(field_sample(f, Vec3(3.0, 3.0, 2.2)).visibility, 1e-3);
  EXPECT_GT(field_sample(f, Vec3(3.0, 3.0, -0.2)).visibility, 0.999);
  EXPECT_GT(field_sample(f, Vec3(3.0, 3.0, -0.2)).sigma, 10.0);
  EXPECT_LT(field_sample(f, Vec3(0.5, 0.5, 2.5)).sigma, 1e-3);
}
