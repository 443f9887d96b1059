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

#ifndef MVSTER_SCENE_SYNTH_HPP
#define MVSTER_SCENE_SYNTH_HPP

// Synthetic multi-view scenes with analytic ground-truth depth.
//
// Depth is the exact ray-primitive intersection through each pixel centre.
// Shading is Lambertian under a directional light with a procedural value
// noise albedo evaluated at the 3-D surface point, so every view sees the
// same texture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "mvster/core_geometry.hpp"
#include "mvster/errors.hpp"
#include "mvster/grid.hpp"
#include "mvster/io/kv_config.hpp"
#include "mvster/parallel.hpp"

namespace mvster {

enum class PrimitiveKind { kPlane, kSphere };

// Plane: `center` lies on it, `normal` is its unit normal and `half_size`
// bounds a square around the centre (<= 0 means unbounded).
// Sphere: `center` and `radius`.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kPlane;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double half_size = 0.0;
  double radius = 0.0;
  std::uint64_t seed = 0;
};

struct SceneSpec {
  int width = 320;
  int height = 256;
  double focal = 350.0;  // pixels, both axes
  int views = 5;
  // View 0 sits at ring_center; views 1..N-1 are evenly spaced on a circle
  // of ring_radius around it, perpendicular to the viewing axis.
  double ring_radius = 150.0;
  Eigen::Vector3d ring_center = Eigen::Vector3d::Zero();
  Eigen::Vector3d target{0.0, 0.0, 650.0};
  Eigen::Vector3d up{0.0, -1.0, 0.0};
  double d_min = 425.0;
  double d_max = 935.0;
  Eigen::Vector3d light{0.3, -0.5, -1.0};
  double ambient = 0.3;
  double texture_scale = 40.0;  // wavelength of the coarsest octave
  int texture_octaves = 4;
  double gain_jitter = 0.0;    // per-view gain drawn from [1 - j, 1 + j]
  double offset_jitter = 0.0;  // per-view offset drawn from [-j, j]
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  std::vector<Primitive> primitives;

  void validate() const;
  DepthRange depth_range() const { return {d_min, d_max}; }
  CameraModel camera(int view) const;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double lattice_value(std::uint64_t seed, std::int64_t i, std::int64_t j, std::int64_t k) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(i));
  h = splitmix64(h ^ static_cast<std::uint64_t>(j));
  h = splitmix64(h ^ static_cast<std::uint64_t>(k));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// Trilinear value noise in [0, 1] with quintic fade.
inline double value_noise(std::uint64_t seed, const Eigen::Vector3d& p) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy),
             iz = static_cast<std::int64_t>(fz);
  const double u = fade(p.x() - fx), v = fade(p.y() - fy), w = fade(p.z() - fz);
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double weight = (dx ? u : 1.0 - u) * (dy ? v : 1.0 - v) * (dz ? w : 1.0 - w);
    acc += weight * lattice_value(seed, ix + dx, iy + dy, iz + dz);
  }
  return acc;
}

inline Eigen::Matrix3d rotation_towards(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                        const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d x_raw = z.cross(up);
  if (!(x_raw.norm() > 1e-12)) throw ConfigError("scene: up vector parallel to viewing axis");
  const Eigen::Vector3d x = x_raw.normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  return R;
}

// Two unit vectors spanning the plane orthogonal to `n`.
inline std::pair<Eigen::Vector3d, Eigen::Vector3d> plane_axes(const Eigen::Vector3d& n) {
  Eigen::Vector3d a = Eigen::Vector3d::UnitX();
  if (std::abs(n.x()) > std::abs(n.y()) && std::abs(n.x()) > std::abs(n.z())) {
    a = Eigen::Vector3d::UnitY();
  }
  const Eigen::Vector3d u = n.cross(a).normalized();
  return {u, n.cross(u)};
}

}  // namespace detail

inline CameraModel SceneSpec::camera(int view) const {
  if (view < 0 || view >= views) {
    throw UsageError("scene: view index " + std::to_string(view) + " out of range");
  }
  Eigen::Vector3d eye = ring_center;
  if (view > 0) {
    const Eigen::Vector3d axis = (target - ring_center).normalized();
    const auto [u, v] = detail::plane_axes(axis);
    const double theta = 2.0 * std::numbers::pi * (view - 1) / std::max(1, views - 1);
    eye += ring_radius * (std::cos(theta) * u + std::sin(theta) * v);
  }
  const Eigen::Matrix3d R = detail::rotation_towards(eye, target, up);
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = focal;
  K(1, 1) = focal;
  K(0, 2) = (width - 1) / 2.0;
  K(1, 2) = (height - 1) / 2.0;
  return CameraModel(K, R, -R * eye, width, height);
}

struct RayHit {
  double t = 0.0;  // ray parameter; equals camera depth for z-normalised rays
  int primitive = -1;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
};

// Nearest hit with t > 0 along origin + t * dir.
inline std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin,
                                      const Eigen::Vector3d& dir) {
  std::optional<RayHit> best;
  for (int i = 0; i < static_cast<int>(spec.primitives.size()); ++i) {
    const Primitive& pr = spec.primitives[i];
    double t = -1.0;
    if (pr.kind == PrimitiveKind::kPlane) {
      const double denom = pr.normal.dot(dir);
      if (denom == 0.0) continue;
      t = pr.normal.dot(pr.center - origin) / denom;
      if (!(t > 0.0)) continue;
      if (pr.half_size > 0.0) {
        const auto [u, v] = detail::plane_axes(pr.normal);
        const Eigen::Vector3d rel = origin + t * dir - pr.center;
        if (std::abs(u.dot(rel)) > pr.half_size || std::abs(v.dot(rel)) > pr.half_size) continue;
      }
    } else {
      const Eigen::Vector3d oc = origin - pr.center;
      const double a = dir.squaredNorm();
      const double b = oc.dot(dir);
      const double c = oc.squaredNorm() - pr.radius * pr.radius;
      const double disc = b * b - a * c;
      if (disc < 0.0) continue;
      const double root = std::sqrt(disc);
      // Numerically stable pair of roots.
      const double q = b >= 0.0 ? -(b + root) : -(b - root);
      double t0 = q / a, t1 = q != 0.0 ? c / q : t0;
      if (t0 > t1) std::swap(t0, t1);
      t = t0 > 0.0 ? t0 : t1;
      if (!(t > 0.0)) continue;
    }
    if (!best || t < best->t) {
      RayHit h;
      h.t = t;
      h.primitive = i;
      h.point = origin + t * dir;
      h.normal = pr.kind == PrimitiveKind::kPlane ? pr.normal
                                                  : (h.point - pr.center).normalized();
      best = h;
    }
  }
  return best;
}

inline void SceneSpec::validate() const {
  if (width <= 0 || height <= 0 || width % 8 != 0 || height % 8 != 0) {
    throw ConfigError("scene: resolution must be positive and divisible by 8");
  }
  if (!(focal > 0.0)) throw ConfigError("scene: focal must be positive");
  if (views < 1) throw ConfigError("scene: need at least one view");
  if (!(ring_radius >= 0.0)) throw ConfigError("scene: ring_radius must be non-negative");
  depth_range().validate();
  if (!(light.norm() > 0.0)) throw ConfigError("scene: light direction must be non-zero");
  if (texture_octaves < 1 || !(texture_scale > 0.0)) {
    throw ConfigError("scene: texture needs positive scale and at least one octave");
  }
  if (gain_jitter < 0.0 || gain_jitter >= 1.0 || offset_jitter < 0.0 || noise_sigma < 0.0) {
    throw ConfigError("scene: invalid noise parameters");
  }
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const Primitive& pr = primitives[i];
    if (pr.kind == PrimitiveKind::kPlane && std::abs(pr.normal.norm() - 1.0) > 1e-9) {
      throw ConfigError("scene: plane " + std::to_string(i) + " normal is not unit length");
    }
    if (pr.kind == PrimitiveKind::kSphere && !(pr.radius > 0.0)) {
      throw ConfigError("scene: sphere " + std::to_string(i) + " radius must be positive");
    }
  }
  for (int v = 0; v < views; ++v) {
    const CameraModel cam = camera(v);
    const Eigen::Vector3d eye = cam.center();
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      const Primitive& pr = primitives[i];
      const bool inside = pr.kind == PrimitiveKind::kSphere
                              ? (eye - pr.center).norm() <= pr.radius
                              : std::abs(pr.normal.dot(eye - pr.center)) == 0.0;
      if (inside) {
        throw ConfigError("scene: camera " + std::to_string(v) + " is inside primitive " +
                          std::to_string(i));
      }
    }
    Eigen::Vector2d px;
    double depth = 0.0;
    if (!cam.project(target, px, depth) || !cam.in_image(px)) {
      throw ConfigError("scene: camera " + std::to_string(v) + " does not see the target");
    }
  }
}

// Ray through a (possibly fractional) pixel of `cam`; depth of the hit in
// that camera, or nullopt if nothing is hit.
inline std::optional<RayHit> cast_pixel(const SceneSpec& spec, const CameraModel& cam,
                                        const Eigen::Vector2d& pixel) {
  const Eigen::Vector3d dir_cam = cam.intrinsics_inverse() * Eigen::Vector3d(pixel.x(), pixel.y(), 1.0);
  // dir_cam has unit z, so the ray parameter is the camera depth.
  return cast_ray(spec, cam.center(), cam.rotation().transpose() * dir_cam);
}

inline std::optional<double> depth_at(const SceneSpec& spec, int view,
                                      const Eigen::Vector2d& pixel) {
  const auto hit = cast_pixel(spec, spec.camera(view), pixel);
  if (!hit) return std::nullopt;
  return hit->t;
}

// Albedo colour at a surface point of primitive `index`.
inline Eigen::Vector3d surface_albedo(const SceneSpec& spec, int index, const Eigen::Vector3d& p) {
  const Primitive& pr = spec.primitives[index];
  double acc = 0.0, norm = 0.0, amp = 1.0;
  for (int o = 0; o < spec.texture_octaves; ++o) {
    const double freq = std::ldexp(1.0, o) / spec.texture_scale;
    acc += amp * detail::value_noise(pr.seed * 131 + o, p * freq);
    norm += amp;
    amp *= 0.6;
  }
  const double t = acc / norm;
  // Per-primitive tint keeps channels distinct without changing contrast.
  Eigen::Vector3d tint;
  for (int c = 0; c < 3; ++c) tint[c] = 0.6 + 0.4 * detail::lattice_value(pr.seed, 7, c, 0);
  return tint * (0.15 + 0.85 * t);
}

struct RenderedView {
  Grid<double> image;          // H x W x 3 in [0, 1]
  Grid<double> depth;          // 0 where no primitive is hit
  Grid<unsigned char> valid;   // 1 where a primitive is hit
  Grid<int> primitive;         // hit primitive index, -1 for none
  CameraModel camera;
};

inline RenderedView render(const SceneSpec& spec, int view, int threads = 1) {
  spec.validate();
  RenderedView out;
  out.camera = spec.camera(view);
  const int H = spec.height, W = spec.width;
  out.image = Grid<double>(H, W, 3);
  out.depth = Grid<double>(H, W);
  out.valid = Grid<unsigned char>(H, W);
  out.primitive = Grid<int>(H, W, 1, -1);
  const Eigen::Vector3d light = spec.light.normalized();
  parallel_for(0, H, threads, [&](int y) {
    for (int x = 0; x < W; ++x) {
      const auto hit = cast_pixel(spec, out.camera, Eigen::Vector2d(x, y));
      if (!hit) continue;
      out.depth.at(y, x) = hit->t;
      out.valid.at(y, x) = 1;
      out.primitive.at(y, x) = hit->primitive;
      // Two-sided Lambertian term so shading is the same from every view.
      const double shade =
          spec.ambient + (1.0 - spec.ambient) * std::abs(hit->normal.dot(light));
      const Eigen::Vector3d rgb = surface_albedo(spec, hit->primitive, hit->point) * shade;
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = rgb[c];
    }
  });
  // Photometric noise is drawn sequentially so it does not depend on threads.
  std::mt19937_64 rng(detail::splitmix64(spec.noise_seed ^ (0x5bd1e995ULL * (view + 1))));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double gain = 1.0 + spec.gain_jitter * unit(rng);
  const double offset = spec.offset_jitter * unit(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& v : out.image.data()) {
    double n = 0.0;
    if (spec.noise_sigma > 0.0) n = spec.noise_sigma * noise(rng);
    v = std::clamp(gain * v + offset + n, 0.0, 1.0);
  }
  return out;
}

// Relative depth tolerance used to decide that a source ray hits the same
// surface point.
inline constexpr double kVisibilityTolerance = 1e-9;

// Reference pixels whose surface point is seen unoccluded by the source view.
inline Grid<unsigned char> gt_visibility(const SceneSpec& spec, int ref_view, int src_view,
                                         int threads = 1) {
  spec.validate();
  const CameraModel ref = spec.camera(ref_view);
  const CameraModel src = spec.camera(src_view);
  Grid<unsigned char> vis(spec.height, spec.width);
  parallel_for(0, spec.height, threads, [&](int y) {
    for (int x = 0; x < spec.width; ++x) {
      const auto hit = cast_pixel(spec, ref, Eigen::Vector2d(x, y));
      if (!hit) continue;
      if (ref_view == src_view) {
        vis.at(y, x) = 1;
        continue;
      }
      Eigen::Vector2d px;
      double depth = 0.0;
      if (!src.project(hit->point, px, depth) || !src.in_image(px)) continue;
      const auto seen = cast_pixel(spec, src, px);
      if (seen && seen->primitive == hit->primitive &&
          std::abs(seen->t - depth) <= kVisibilityTolerance * depth) {
        vis.at(y, x) = 1;
      }
    }
  });
  return vis;
}

// Default verification scene: three unbounded planes forming an open box
// facing the cameras. Every camera lies inside the convex region they
// bound, so the visible surface has no self-occlusion.
inline SceneSpec three_plane_scene(std::uint64_t seed = 1) {
  SceneSpec s;
  auto plane = [](Eigen::Vector3d c, Eigen::Vector3d n, std::uint64_t sd) {
    Primitive p;
    p.kind = PrimitiveKind::kPlane;
    p.center = c;
    p.normal = n.normalized();
    p.seed = sd;
    return p;
  };
  s.primitives.push_back(plane({0.0, 0.0, 760.0}, {-0.15, 0.1, -1.0}, seed * 3 + 0));
  s.primitives.push_back(plane({-110.0, 0.0, 650.0}, {0.8, 0.0, -0.6}, seed * 3 + 1));
  s.primitives.push_back(plane({0.0, 90.0, 650.0}, {0.0, -0.7, -0.7}, seed * 3 + 2));
  s.noise_seed = seed;
  return s;
}

// Key-value (de)serialisation. Vectors are whitespace-separated triples;
// primitives are "plane.<i> = cx cy cz nx ny nz half_size seed" and
// "sphere.<i> = cx cy cz radius seed".
inline io::KeyValueFile scene_to_config(const SceneSpec& s) {
  using io::format_exact;
  io::KeyValueFile kv;
  auto vec = [](const Eigen::Vector3d& v) {
    return format_exact(v.x()) + " " + format_exact(v.y()) + " " + format_exact(v.z());
  };
  kv.set("width", std::to_string(s.width));
  kv.set("height", std::to_string(s.height));
  kv.set("focal", format_exact(s.focal));
  kv.set("views", std::to_string(s.views));
  kv.set("ring_radius", format_exact(s.ring_radius));
  kv.set("ring_center", vec(s.ring_center));
  kv.set("target", vec(s.target));
  kv.set("up", vec(s.up));
  kv.set("d_min", format_exact(s.d_min));
  kv.set("d_max", format_exact(s.d_max));
  kv.set("light", vec(s.light));
  kv.set("ambient", format_exact(s.ambient));
  kv.set("texture_scale", format_exact(s.texture_scale));
  kv.set("texture_octaves", std::to_string(s.texture_octaves));
  kv.set("noise.gain_jitter", format_exact(s.gain_jitter));
  kv.set("noise.offset_jitter", format_exact(s.offset_jitter));
  kv.set("noise.sigma", format_exact(s.noise_sigma));
  kv.set("noise.seed", std::to_string(s.noise_seed));
  int planes = 0, spheres = 0;
  for (const Primitive& p : s.primitives) {
    if (p.kind == PrimitiveKind::kPlane) {
      kv.set("plane." + std::to_string(planes++),
             vec(p.center) + " " + vec(p.normal) + " " + format_exact(p.half_size) + " " +
                 std::to_string(p.seed));
    } else {
      kv.set("sphere." + std::to_string(spheres++),
             vec(p.center) + " " + format_exact(p.radius) + " " + std::to_string(p.seed));
    }
  }
  return kv;
}

namespace detail {

inline Eigen::Vector3d get_vec3(const io::KeyValueFile& kv, const std::string& key,
                                const Eigen::Vector3d& fallback) {
  if (!kv.has(key)) return fallback;
  const auto v = kv.get_doubles(key);
  if (v.size() != 3) throw ConfigError("key '" + key + "': expected three numbers");
  return {v[0], v[1], v[2]};
}

inline std::uint64_t parse_seed(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an unsigned seed, got '" + text + "'");
  }
}

// Primitive keys "<prefix><i>" in numeric order of i.
inline std::vector<std::string> indexed_keys(const io::KeyValueFile& kv, const std::string& prefix) {
  std::vector<std::pair<long long, std::string>> items;
  for (const auto& k : kv.keys_with_prefix(prefix)) {
    const std::string idx = k.substr(prefix.size());
    long long i = -1;
    try {
      std::size_t used = 0;
      i = std::stoll(idx, &used);
      if (used != idx.size() || i < 0) throw std::invalid_argument(idx);
    } catch (const std::exception&) {
      throw ConfigError("key '" + k + "': expected '" + prefix + "<index>'");
    }
    items.emplace_back(i, k);
  }
  std::sort(items.begin(), items.end());
  std::vector<std::string> out;
  for (auto& it : items) out.push_back(it.second);
  return out;
}

}  // namespace detail

inline SceneSpec scene_from_config(const io::KeyValueFile& kv) {
  SceneSpec s;
  s.width = static_cast<int>(kv.get_int_or("width", s.width));
  s.height = static_cast<int>(kv.get_int_or("height", s.height));
  s.focal = kv.get_double_or("focal", s.focal);
  s.views = static_cast<int>(kv.get_int_or("views", s.views));
  s.ring_radius = kv.get_double_or("ring_radius", s.ring_radius);
  s.ring_center = detail::get_vec3(kv, "ring_center", s.ring_center);
  s.target = detail::get_vec3(kv, "target", s.target);
  s.up = detail::get_vec3(kv, "up", s.up);
  s.d_min = kv.get_double_or("d_min", s.d_min);
  s.d_max = kv.get_double_or("d_max", s.d_max);
  s.light = detail::get_vec3(kv, "light", s.light);
  s.ambient = kv.get_double_or("ambient", s.ambient);
  s.texture_scale = kv.get_double_or("texture_scale", s.texture_scale);
  s.texture_octaves = static_cast<int>(kv.get_int_or("texture_octaves", s.texture_octaves));
  s.gain_jitter = kv.get_double_or("noise.gain_jitter", s.gain_jitter);
  s.offset_jitter = kv.get_double_or("noise.offset_jitter", s.offset_jitter);
  s.noise_sigma = kv.get_double_or("noise.sigma", s.noise_sigma);
  if (kv.has("noise.seed")) s.noise_seed = detail::parse_seed("noise.seed", kv.get("noise.seed"));
  for (const auto& key : detail::indexed_keys(kv, "plane.")) {
    std::istringstream ss(kv.get(key));
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() != 8) throw ConfigError("key '" + key + "': expected 8 fields");
    Primitive p;
    p.kind = PrimitiveKind::kPlane;
    io::KeyValueFile one;
    for (int i = 0; i < 7; ++i) one.set(std::to_string(i), tok[i]);
    p.center = {one.get_double("0"), one.get_double("1"), one.get_double("2")};
    p.normal = Eigen::Vector3d(one.get_double("3"), one.get_double("4"), one.get_double("5"));
    if (!(p.normal.norm() > 0.0)) throw ConfigError("key '" + key + "': zero normal");
    p.normal.normalize();
    p.half_size = one.get_double("6");
    p.seed = detail::parse_seed(key, tok[7]);
    s.primitives.push_back(p);
  }
  for (const auto& key : detail::indexed_keys(kv, "sphere.")) {
    std::istringstream ss(kv.get(key));
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() != 5) throw ConfigError("key '" + key + "': expected 5 fields");
    Primitive p;
    p.kind = PrimitiveKind::kSphere;
    io::KeyValueFile one;
    for (int i = 0; i < 4; ++i) one.set(std::to_string(i), tok[i]);
    p.center = {one.get_double("0"), one.get_double("1"), one.get_double("2")};
    p.radius = one.get_double("3");
    p.seed = detail::parse_seed(key, tok[4]);
    s.primitives.push_back(p);
  }
  s.validate();
  return s;
}

}  // namespace mvster

#endif  // MVSTER_SCENE_SYNTH_HPP
