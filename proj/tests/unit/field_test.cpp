// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles/finite_diff.hpp"
#include "oracles/generators.hpp"
#include "understory/field.hpp"

using namespace understory;

namespace {
const Aabb kUnit{Vec3::Zero(), Vec3::Ones()};
}

TEST(Activations, Values) {
  EXPECT_NEAR(softplus(-2.0), std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(softplus(-2.0), 0.12692801104297263, 1e-15);
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_EQ(softplus(-800.0), 0.0);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(10.0), 0.9999546021312976, 1e-15);
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_NEAR(softplus(softplus_inverse(0.37)), 0.37, 1e-14);
  EXPECT_NEAR(softplus(softplus_inverse(45.0)), 45.0, 1e-12);
  EXPECT_NEAR(sigmoid(logit(0.2)), 0.2, 1e-15);
}

TEST(Activations, SrgbRoundTrip) {
  for (int code = 0; code <= 255; ++code) {
    const double e = code / 255.0;
    EXPECT_NEAR(srgb_encode(srgb_decode(e)), e, 1e-12);
  }
  EXPECT_DOUBLE_EQ(srgb_encode(0.0), 0.0);
  EXPECT_DOUBLE_EQ(srgb_encode(1.0), 1.0);
  EXPECT_DOUBLE_EQ(srgb_encode(2.0), 1.0);
}

TEST(VoxelField, RejectsBadConstruction) {
  EXPECT_THROW(VoxelField(kUnit, {1, 4, 4}), InputError);
  EXPECT_THROW(VoxelField(Aabb{Vec3::Zero(), Vec3(1, 0, 1)}, {2, 2, 2}), InputError);
}

TEST(VoxelField, ParameterLayout) {
  const VoxelField f(kUnit, {3, 4, 5});
  EXPECT_EQ(f.voxel_count(), 60u);
  EXPECT_EQ(f.param_count(), 300u);
  EXPECT_EQ(f.voxel_index(1, 0, 0), 1u);
  EXPECT_EQ(f.voxel_index(0, 1, 0), 3u);
  EXPECT_EQ(f.voxel_index(0, 0, 1), 12u);
  EXPECT_TRUE(f.voxel_center(0, 0, 0).isApprox(Vec3(1.0 / 6, 1.0 / 8, 1.0 / 10)));
}

TEST(VoxelField, DefaultInitIsConstant) {
  const VoxelField f(kUnit, {4, 4, 4});
  oracle::Gen g(1);
  for (int i = 0; i < 50; ++i) {
    const FieldSample s = field_sample(f, g.in_box(kUnit));
    EXPECT_NEAR(s.sigma, softplus(-2.0), 1e-15);
    EXPECT_NEAR(s.sigma, 0.1269, 1e-4);
    EXPECT_TRUE(s.color.isApprox(Rgb::Constant(0.5)));
    EXPECT_NEAR(s.visibility, 1.0, 1e-4);
  }
}

TEST(VoxelField, InterpolateThenActivate) {
  VoxelField f(kUnit, {2, 2, 2});
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j) {
      f.raw(f.voxel_index(0, j, k), kSigma) = 0.0;
      f.raw(f.voxel_index(1, j, k), kSigma) = 1.0;
    }
  // Midway between the voxel centers at x = 0.25 and 0.75.
  EXPECT_NEAR(field_sample(f, Vec3(0.5, 0.4, 0.6)).sigma, softplus(0.5), 1e-15);
  // Within half a voxel of the boundary the outer layer is held constant.
  EXPECT_NEAR(field_sample(f, Vec3(0.1, 0.4, 0.6)).sigma, softplus(0.0), 1e-15);
}

TEST(VoxelField, OutsideIsEmptyNeutralVisible) {
  const VoxelField f(kUnit, {2, 2, 2}, FieldInit{5.0, 3.0, -4.0});
  const FieldSample s = field_sample(f, Vec3(1.5, 0.5, 0.5));
  EXPECT_EQ(s.sigma, 0.0);
  EXPECT_EQ(s.color, Rgb::Constant(0.5));
  EXPECT_EQ(s.visibility, 1.0);
  EXPECT_TRUE(field_param_grad(f, Vec3(-0.1, 0.5, 0.5)).empty());
}

TEST(VoxelField, ActivationsStayInRange) {
  oracle::Gen g(8);
  VoxelField f(kUnit, {5, 5, 5});
  for (double& p : f.params()) p = g.uniform(-40.0, 40.0);
  for (int i = 0; i < 1000; ++i) {
    const FieldSample s = field_sample(f, g.in_box(kUnit));
    EXPECT_GE(s.sigma, 0.0);
    EXPECT_TRUE((s.color.array() >= 0.0).all() && (s.color.array() <= 1.0).all());
    EXPECT_GE(s.visibility, 0.0);
    EXPECT_LE(s.visibility, 1.0);
  }
}

TEST(VoxelField, StencilWeightsArePartitionOfUnity) {
  oracle::Gen g(4);
  const Aabb box{Vec3(-2, 0, 1), Vec3(3, 1, 4)};
  const VoxelField f(box, {6, 3, 7});
  for (int i = 0; i < 1000; ++i) {
    Stencil st;
    ASSERT_TRUE(make_stencil(f, g.in_box(box), st));
    double sum = 0.0;
    for (double w : st.weight) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(VoxelField, ParamGradientMatchesFiniteDifferences) {
  oracle::Gen g(21);
  const Aabb box{Vec3(0, 0, 0), Vec3(2, 1, 1.5)};
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    VoxelField f = g.field(box, {4, 3, 5});
    const Vec3 x = g.in_box(box);
    const auto grads = field_param_grad(f, x);
    ASSERT_EQ(grads.size(), 8u);
    const auto& cg = grads[static_cast<std::size_t>(g.integer(0, 7))];
    if (cg.weight < 1e-3) continue;
    ++checked;
    auto probe = [&](int ch, auto value) {
      double& p = f.raw(cg.voxel, ch);
      return oracle::central_difference(p, 1e-4, [&] { return value(field_sample(f, x)); });
    };
    EXPECT_LT(oracle::relative_error(cg.d_sigma, probe(kSigma, [](const FieldSample& s) { return s.sigma; }), 1e-8),
              1e-5);
    for (int k = 0; k < 3; ++k)
      EXPECT_LT(oracle::relative_error(cg.d_color[k],
                                       probe(kRed + k, [k](const FieldSample& s) { return s.color[k]; }), 1e-8),
                1e-5);
    EXPECT_LT(oracle::relative_error(cg.d_visibility,
                                     probe(kVisibility, [](const FieldSample& s) { return s.visibility; }), 1e-8),
              1e-5);
  }
  EXPECT_GT(checked, 500);
}

TEST(VoxelField, SigmaGradientAtCornerMatchesFiniteDifference) {
  VoxelField f(kUnit, {2, 2, 2});
  f.raw(0, kSigma) = 0.3;
  const Vec3 x = f.voxel_center(0, 0, 0);
  const auto grads = field_param_grad(f, x);
  ASSERT_EQ(grads[0].voxel, 0u);
  EXPECT_DOUBLE_EQ(grads[0].weight, 1.0);
  const double fd = oracle::central_difference(f.raw(0, kSigma), 1e-4, [&] { return field_sample(f, x).sigma; });
  EXPECT_LT(oracle::relative_error(grads[0].d_sigma, fd, 0.0), 1e-6);
}

TEST(ExportPoints, ThresholdAndStride) {
  VoxelField f(kUnit, {4, 4, 4});
  EXPECT_TRUE(export_points(f, 1.0, 1).empty());
  f.raw(f.voxel_index(1, 2, 3), kSigma) = 20.0;
  f.raw(f.voxel_index(1, 2, 3), kRed) = 20.0;
  const PointCloud c = export_points(f, 5.0, 1);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_TRUE(c.points[0].position.isApprox(f.voxel_center(1, 2, 3)));
  EXPECT_NEAR(c.points[0].color.x(), 1.0, 1e-6);
  EXPECT_EQ(export_points(f, 5.0, 2).size(), 0u);
  EXPECT_THROW(export_points(f, 0.0, 1), InputError);
  EXPECT_THROW(export_points(f, 1.0, 0), InputError);
}

TEST(ExportPoints, DenseFieldExportsEveryStridedVoxel) {
  const VoxelField f(kUnit, {6, 6, 6}, FieldInit{10.0, 0.0, 10.0});
  EXPECT_EQ(export_points(f, 5.0, 1).size(), 216u);
  EXPECT_EQ(export_points(f, 5.0, 2).size(), 27u);
  EXPECT_EQ(export_points(f, 5.0, 4).size(), 8u);
}
