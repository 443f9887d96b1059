// Copyright 2026 The mvster Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <optional>
#include <vector>

#include <gtest/gtest.h>

#include "mvster/core_geometry.hpp"
#include "mvster/scene_synth.hpp"

namespace mvster {
namespace {

Primitive plane(Eigen::Vector3d center, Eigen::Vector3d normal, std::uint64_t seed = 1) {
  Primitive p;
  p.kind = PrimitiveKind::kPlane;
  p.center = center;
  p.normal = normal.normalized();
  p.seed = seed;
  return p;
}

Primitive sphere(Eigen::Vector3d center, double radius, std::uint64_t seed = 2) {
  Primitive p;
  p.kind = PrimitiveKind::kSphere;
  p.center = center;
  p.radius = radius;
  p.seed = seed;
  return p;
}

SceneSpec small_spec() {
  SceneSpec s;
  s.width = 64;
  s.height = 48;
  s.focal = 70.0;
  return s;
}

// Whether the open segment a -> b passes through the sphere.
bool segment_hits_sphere(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                         const Primitive& s) {
  const Eigen::Vector3d d = b - a;
  const double t = std::clamp((s.center - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
  return (a + t * d - s.center).norm() < s.radius;
}

TEST(Render, FrontoParallelPlaneHasConstantDepth) {
  SceneSpec s = small_spec();
  s.views = 1;
  const double d = 612.5;
  s.primitives = {plane({0, 0, d}, {0, 0, -1})};
  const RenderedView r = render(s, 0);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      ASSERT_TRUE(r.valid.at(y, x));
      EXPECT_NEAR(r.depth.at(y, x), d, 1e-9 * d);
    }
  }
}

TEST(Render, SphereCenterPixelDepth) {
  SceneSpec s = small_spec();
  s.views = 1;
  // The optical axis passes through (31.5, 31.5).
  s.width = 64;
  s.height = 64;
  const double d = 700.0, r = 90.0;
  s.primitives = {sphere({0, 0, d}, r)};
  s.target = {0, 0, d};
  const auto center = depth_at(s, 0, {31.5, 31.5});
  ASSERT_TRUE(center.has_value());
  EXPECT_NEAR(*center, d - r, 1e-9);
  // Rays that miss the sphere leave the pixel invalid.
  const RenderedView v = render(s, 0);
  EXPECT_FALSE(v.valid.at(0, 0));
  EXPECT_EQ(v.depth.at(0, 0), 0.0);
  EXPECT_EQ(v.primitive.at(0, 0), -1);
}

TEST(Render, SameSeedIsBitIdentical) {
  SceneSpec s = three_plane_scene(3);
  s.width = 64;
  s.height = 48;
  s.focal = 70.0;
  s.gain_jitter = 0.1;
  s.noise_sigma = 0.02;
  s.noise_seed = 11;
  const RenderedView a = render(s, 2);
  const RenderedView b = render(s, 2, 4);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.depth, b.depth);
  s.noise_seed = 12;
  EXPECT_FALSE(render(s, 2).image == a.image);
}

TEST(Render, ImageInUnitRange) {
  SceneSpec s = three_plane_scene(1);
  s.width = 64;
  s.height = 48;
  s.focal = 70.0;
  s.noise_sigma = 0.3;
  const RenderedView r = render(s, 1);
  for (double v : r.image.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Render, CameraInsideSphereIsRejected) {
  SceneSpec s = small_spec();
  s.primitives = {sphere({0, 0, 0}, 50.0)};
  EXPECT_THROW(render(s, 0), ConfigError);
}

TEST(SceneSpec, ValidationErrors) {
  SceneSpec s = small_spec();
  s.primitives = {plane({0, 0, 600}, {0, 0, -1})};
  s.width = 60;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.target = {0, 0, -650};  // up vector parallel to the viewing axis
  s.up = {0, 0, 1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.primitives = {sphere({0, 0, 600}, -1.0)};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  EXPECT_THROW(s.camera(s.views), UsageError);
}

TEST(Cameras, RingAroundReferenceLooksAtTarget) {
  const SceneSpec s = three_plane_scene(1);
  EXPECT_LE((s.camera(0).center() - s.ring_center).norm(), 1e-12);
  for (int v = 1; v < s.views; ++v) {
    const CameraModel c = s.camera(v);
    EXPECT_NEAR((c.center() - s.ring_center).norm(), s.ring_radius, 1e-9);
    Eigen::Vector2d px;
    double depth = 0.0;
    ASSERT_TRUE(c.project(s.target, px, depth));
    EXPECT_NEAR(px.x(), (s.width - 1) / 2.0, 1e-9);
    EXPECT_NEAR(px.y(), (s.height - 1) / 2.0, 1e-9);
  }
}

TEST(GtVisibility, SinglePlaneIsVisibleEverywhereInBounds) {
  SceneSpec s = small_spec();
  s.primitives = {plane({0, 0, 650}, {0.1, 0, -1})};
  for (int src = 1; src < s.views; ++src) {
    const auto vis = gt_visibility(s, 0, src);
    const CameraModel ref = s.camera(0), cam = s.camera(src);
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const auto d = depth_at(s, 0, Eigen::Vector2d(x, y));
        Eigen::Vector2d px;
        double z = 0.0;
        const bool in_bounds =
            cam.project(ref.backproject(Eigen::Vector2d(x, y), *d), px, z) && cam.in_image(px);
        EXPECT_EQ(vis.at(y, x) != 0, in_bounds) << x << "," << y;
      }
    }
  }
}

TEST(GtVisibility, SameViewIsAllValid) {
  SceneSpec s = small_spec();
  s.primitives = {sphere({0, 0, 650}, 100.0)};
  const auto vis = gt_visibility(s, 0, 0);
  EXPECT_EQ(vis, render(s, 0).valid);
}

TEST(GtVisibility, SphereOccludesPlane) {
  SceneSpec s = small_spec();
  const Primitive ball = sphere({0, 0, 480}, 35.0, 9);
  s.primitives = {plane({0, 0, 700}, {0, 0, -1}), ball};
  const CameraModel ref = s.camera(0);
  std::size_t hidden = 0;
  for (int src = 1; src < s.views; ++src) {
    const CameraModel cam = s.camera(src);
    const auto vis = gt_visibility(s, 0, src);
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const auto hit = cast_pixel(s, ref, Eigen::Vector2d(x, y));
        ASSERT_TRUE(hit.has_value());
        if (hit->primitive != 0) continue;
        Eigen::Vector2d px;
        double z = 0.0;
        if (!cam.project(hit->point, px, z) || !cam.in_image(px)) {
          EXPECT_FALSE(vis.at(y, x));
          continue;
        }
        const bool blocked = segment_hits_sphere(hit->point, cam.center(), ball);
        hidden += blocked;
        EXPECT_EQ(vis.at(y, x) != 0, !blocked) << src << ": " << x << "," << y;
      }
    }
  }
  EXPECT_GT(hidden, 0u);
}

TEST(GtConsistency, WarpedReferenceDepthMatchesSourceDepth) {
  SceneSpec s = three_plane_scene(2);
  s.width = 80;
  s.height = 64;
  s.focal = 87.5;
  s.primitives.push_back(sphere({20, -10, 600}, 40.0, 5));
  const RenderedView ref = render(s, 0);
  std::size_t checked = 0, agree = 0;
  for (int src = 1; src < s.views; ++src) {
    const CameraModel cam = s.camera(src);
    const PairWarp warp(ref.camera, cam);
    const auto vis = gt_visibility(s, 0, src);
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        if (!vis.at(y, x)) continue;
        const double d = ref.depth.at(y, x);
        const WarpResult w = warp(Eigen::Vector2d(x, y), d);
        ASSERT_TRUE(w.in_front);
        Eigen::Vector2d px;
        double z = 0.0;
        ASSERT_TRUE(cam.project(ref.camera.backproject(Eigen::Vector2d(x, y), d), px, z));
        const auto ds = depth_at(s, src, w.coord);
        ++checked;
        if (ds && std::abs(*ds - z) <= 1e-6 * z) ++agree;
      }
    }
  }
  ASSERT_GT(checked, 0u);
  EXPECT_EQ(agree, checked);
}

TEST(SceneConfig, RoundTrip) {
  SceneSpec s = three_plane_scene(4);
  s.primitives.push_back(sphere({1.25, -3.5, 600.0}, 30.0, 77));
  s.primitives[0].half_size = 400.0;
  s.noise_sigma = 0.02;
  s.gain_jitter = 0.1;
  s.noise_seed = 123456789012345ULL;
  const SceneSpec back = scene_from_config(scene_to_config(s));
  EXPECT_EQ(scene_to_config(back).to_string(), scene_to_config(s).to_string());
  ASSERT_EQ(back.primitives.size(), s.primitives.size());
  EXPECT_EQ(back.primitives[3].kind, PrimitiveKind::kSphere);
  EXPECT_EQ(back.primitives[3].radius, 30.0);
  EXPECT_EQ(back.noise_seed, s.noise_seed);
  for (int v = 0; v < s.views; ++v) {
    EXPECT_EQ(render(back, v).depth, render(s, v).depth);
  }
}

TEST(SceneConfig, RejectsMalformedPrimitives) {
  io::KeyValueFile kv = scene_to_config(three_plane_scene(1));
  kv.set("plane.7", "0 0 600 0 0 -1");
  EXPECT_THROW(scene_from_config(kv), ConfigError);
  kv = scene_to_config(three_plane_scene(1));
  kv.set("sphere.x", "0 0 600 10 1");
  EXPECT_THROW(scene_from_config(kv), ConfigError);
  kv = scene_to_config(three_plane_scene(1));
  kv.set("plane.9", "0 0 600 0 0 0 0 1");
  EXPECT_THROW(scene_from_config(kv), ConfigError);
}

}  // namespace
}  // namespace mvster
