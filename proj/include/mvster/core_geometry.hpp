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

#ifndef MVSTER_CORE_GEOMETRY_HPP
#define MVSTER_CORE_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "mvster/errors.hpp"
#include "mvster/grid.hpp"

namespace mvster {

// Projected homogeneous depth at or below this value is treated as lying on
// or behind the image plane of the target camera.
inline constexpr double kMinProjectedDepth = 1e-9;

// Pinhole view with world->camera extrinsics: x_cam = R * x_world + t.
//
// Integer pixel coordinates address pixel centres, so the sampleable image
// domain is [0, W-1] x [0, H-1].
class CameraModel {
 public:
  CameraModel() = default;

  CameraModel(const Eigen::Matrix3d& intrinsics, const Eigen::Matrix3d& rotation,
              const Eigen::Vector3d& translation, int width, int height)
      : K_(intrinsics), R_(rotation), t_(translation), width_(width), height_(height) {
    validate();
    K_inv_ = K_.inverse();
  }

  const Eigen::Matrix3d& intrinsics() const noexcept { return K_; }
  const Eigen::Matrix3d& intrinsics_inverse() const noexcept { return K_inv_; }
  const Eigen::Matrix3d& rotation() const noexcept { return R_; }
  const Eigen::Vector3d& translation() const noexcept { return t_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  Eigen::Vector3d center() const { return -R_.transpose() * t_; }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return R_ * world + t_;
  }

  // World point seen at pixel `p` with camera-frame depth `depth`.
  Eigen::Vector3d backproject(const Eigen::Vector2d& p, double depth) const {
    const Eigen::Vector3d cam = K_inv_ * Eigen::Vector3d(p.x(), p.y(), 1.0) * depth;
    return R_.transpose() * (cam - t_);
  }

  // Projects a world point; returns false if it lies on/behind the image
  // plane. `depth` receives the camera-frame z.
  bool project(const Eigen::Vector3d& world, Eigen::Vector2d& pixel,
               double& depth) const {
    const Eigen::Vector3d h = K_ * to_camera(world);
    depth = h.z();
    if (!(h.z() > kMinProjectedDepth)) return false;
    pixel = h.head<2>() / h.z();
    return true;
  }

  bool in_image(const Eigen::Vector2d& p) const noexcept {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width_ - 1.0 &&
           p.y() <= height_ - 1.0;
  }

  // Camera for a feature map downscaled by `factor`: focal lengths and
  // principal point divided by the factor, extrinsics unchanged.
  CameraModel downscaled(int factor) const {
    if (factor < 1 || width_ % factor != 0 || height_ % factor != 0) {
      throw UsageError("CameraModel::downscaled: image size " +
                       std::to_string(width_) + "x" + std::to_string(height_) +
                       " not divisible by " + std::to_string(factor));
    }
    Eigen::Matrix3d K = K_;
    K.row(0) /= factor;
    K.row(1) /= factor;
    return CameraModel(K, R_, t_, width_ / factor, height_ / factor);
  }

 private:
  void validate() const {
    if (width_ <= 0 || height_ <= 0) {
      throw ConfigError("camera: width and height must be positive");
    }
    if (!K_.allFinite() || !R_.allFinite() || !t_.allFinite()) {
      throw ConfigError("camera: non-finite parameters");
    }
    if (K_(1, 0) != 0.0 || K_(2, 0) != 0.0 || K_(2, 1) != 0.0) {
      throw ConfigError("camera: intrinsics must be upper-triangular");
    }
    if (!(K_(0, 0) > 0.0 && K_(1, 1) > 0.0) || K_(2, 2) != 1.0) {
      throw ConfigError(
          "camera: intrinsics need positive focal lengths and K(2,2) == 1");
    }
    const double orth =
        (R_.transpose() * R_ - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    const double det = R_.determinant();
    if (orth > 1e-9 || std::abs(det - 1.0) > 1e-9) {
      throw ConfigError("camera: rotation is not orthonormal with det +1");
    }
  }

  Eigen::Matrix3d K_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d K_inv_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t_ = Eigen::Vector3d::Zero();
  int width_ = 1;
  int height_ = 1;
};

struct WarpResult {
  Eigen::Vector2d coord = Eigen::Vector2d::Zero();
  bool in_front = false;  // projected depth above kMinProjectedDepth
  bool in_image = false;  // inside the source sampling domain

  bool valid() const noexcept { return in_front && in_image; }
};

// Reference->source plane-sweep warp with the per-pair matrices hoisted:
// p_s ~ K_s (R_rel K_r^-1 p_r d + t_rel) = A p_r d + b.
class PairWarp {
 public:
  PairWarp(const CameraModel& ref, const CameraModel& src) : src_(&src) {
    const Eigen::Matrix3d R_rel = src.rotation() * ref.rotation().transpose();
    const Eigen::Vector3d t_rel = src.translation() - R_rel * ref.translation();
    A_ = src.intrinsics() * R_rel * ref.intrinsics_inverse();
    b_ = src.intrinsics() * t_rel;
  }

  WarpResult operator()(const Eigen::Vector2d& p_ref, double depth) const {
    const Eigen::Vector3d h = A_ * Eigen::Vector3d(p_ref.x(), p_ref.y(), 1.0) * depth + b_;
    WarpResult out;
    out.in_front = h.z() > kMinProjectedDepth;
    if (!out.in_front) return out;
    out.coord = h.head<2>() / h.z();
    out.in_image = src_->in_image(out.coord);
    return out;
  }

  // Ray direction part A * p_r, for callers warping many depths of a pixel.
  Eigen::Vector3d ray(const Eigen::Vector2d& p_ref) const {
    return A_ * Eigen::Vector3d(p_ref.x(), p_ref.y(), 1.0);
  }
  const Eigen::Vector3d& offset() const noexcept { return b_; }
  const CameraModel& source() const noexcept { return *src_; }

 private:
  const CameraModel* src_;
  Eigen::Matrix3d A_;
  Eigen::Vector3d b_;
};

inline WarpResult warp_pixel(const CameraModel& ref, const CameraModel& src,
                             const Eigen::Vector2d& p_ref, double depth) {
  if (!(depth > 0.0)) throw UsageError("warp_pixel: depth must be positive");
  return PairWarp(ref, src)(p_ref, depth);
}

// Source-image locations of reference pixel `p_ref` at each hypothesis.
inline std::vector<WarpResult> epipolar_samples(const CameraModel& ref,
                                                const CameraModel& src,
                                                const Eigen::Vector2d& p_ref,
                                                std::span<const double> depths) {
  const PairWarp warp(ref, src);
  std::vector<WarpResult> out;
  out.reserve(depths.size());
  for (double d : depths) {
    if (!(d > 0.0)) throw UsageError("epipolar_samples: depths must be positive");
    out.push_back(warp(p_ref, d));
  }
  return out;
}

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

// F with p_s^T F p_r = 0 for corresponding pixels.
inline Eigen::Matrix3d fundamental_matrix(const CameraModel& ref,
                                          const CameraModel& src) {
  const Eigen::Matrix3d R_rel = src.rotation() * ref.rotation().transpose();
  const Eigen::Vector3d t_rel = src.translation() - R_rel * ref.translation();
  return src.intrinsics_inverse().transpose() * skew(t_rel) * R_rel *
         ref.intrinsics_inverse();
}

// Distance in pixels from `p_src` to the epipolar line of `p_ref`.
inline double epipolar_distance(const Eigen::Matrix3d& F, const Eigen::Vector2d& p_ref,
                                const Eigen::Vector2d& p_src) {
  const Eigen::Vector3d line = F * Eigen::Vector3d(p_ref.x(), p_ref.y(), 1.0);
  const double norm = line.head<2>().norm();
  if (norm == 0.0) return 0.0;
  return std::abs(line.dot(Eigen::Vector3d(p_src.x(), p_src.y(), 1.0))) / norm;
}

struct DepthRange {
  double d_min = 0.0;
  double d_max = 0.0;

  void validate() const {
    if (!(d_min > 0.0) || !(d_max > d_min) || !std::isfinite(d_max)) {
      throw ConfigError("depth range requires 0 < d_min < d_max");
    }
  }
  double inverse_span() const { return 1.0 / d_min - 1.0 / d_max; }
  double span() const { return d_max - d_min; }
};

// Per-pixel depth hypotheses of one cascade stage, ascending in depth.
struct DepthHypothesisSet {
  int stage = 0;
  int count = 0;
  int width = 0;
  int height = 0;
  double inverse_span = 0.0;  // inverse-depth extent the stage was built for
  std::vector<double> values;  // (y * width + x) * count + j

  std::span<const double> at(int y, int x) const {
    return {values.data() + (static_cast<std::size_t>(y) * width + x) * count,
            static_cast<std::size_t>(count)};
  }
  std::span<double> at(int y, int x) {
    return {values.data() + (static_cast<std::size_t>(y) * width + x) * count,
            static_cast<std::size_t>(count)};
  }
};

// D depths equidistant in inverse depth between d_min and d_max, ascending.
inline std::vector<double> inverse_depth_samples(const DepthRange& range, int count) {
  if (count < 2) throw ConfigError("hypothesis count must be at least 2");
  range.validate();
  const double inv_near = 1.0 / range.d_min;
  const double inv_far = 1.0 / range.d_max;
  std::vector<double> out(count);
  for (int j = 0; j < count; ++j) {
    const double t = static_cast<double>(j) / (count - 1);
    out[j] = 1.0 / (inv_near + t * (inv_far - inv_near));
  }
  out.front() = range.d_min;
  out.back() = range.d_max;
  return out;
}

// Stage-0 hypotheses: the same inverse-depth sweep at every pixel.
inline DepthHypothesisSet init_inverse_depth_hypotheses(const DepthRange& range,
                                                        int count, int width = 1,
                                                        int height = 1) {
  const std::vector<double> sweep = inverse_depth_samples(range, count);
  DepthHypothesisSet set;
  set.stage = 0;
  set.count = count;
  set.width = width;
  set.height = height;
  set.inverse_span = range.inverse_span();
  set.values.resize(static_cast<std::size_t>(width) * height * count);
  for (std::size_t i = 0; i < set.values.size(); i += count) {
    std::copy(sweep.begin(), sweep.end(), set.values.begin() + i);
  }
  return set;
}

// Inverse-depth span of the next stage: one bin of the previous sweep.
inline double next_inverse_range(double prev_inverse_span, int prev_count) {
  if (prev_count < 2) throw ConfigError("previous hypothesis count must be >= 2");
  if (!(prev_inverse_span > 0.0)) {
    throw ConfigError("previous inverse span must be positive");
  }
  return prev_inverse_span / (prev_count - 1);
}

// Minimal inverse-depth gap kept between neighbouring hypotheses after
// clamping, relative to 1/d_min.
inline constexpr double kHypothesisSeparation = 1e-9;

// Writes `count` depths centred (in inverse depth) on `center_depth` with
// spacing inverse_span / count, clamped into the range, ascending.
inline void centered_inverse_samples(double center_depth, int count,
                                     double inverse_span, const DepthRange& range,
                                     std::span<double> out) {
  const double inv_lo = 1.0 / range.d_max;
  const double inv_hi = 1.0 / range.d_min;
  const double delta = kHypothesisSeparation * inv_hi;
  const double step = inverse_span / count;
  const double center = 1.0 / center_depth;
  // u ascends in inverse depth, i.e. descends in depth.
  std::vector<double> u(count);
  for (int j = 0; j < count; ++j) {
    u[j] = std::clamp(center + (j - (count - 1) / 2.0) * step, inv_lo, inv_hi);
  }
  for (int j = 1; j < count; ++j) u[j] = std::max(u[j], u[j - 1] + delta);
  if (u.back() > inv_hi) {
    u.back() = inv_hi;
    for (int j = count - 2; j >= 0; --j) u[j] = std::min(u[j], u[j + 1] - delta);
  }
  for (int j = 0; j < count; ++j) {
    out[count - 1 - j] = std::clamp(1.0 / u[j], range.d_min, range.d_max);
  }
}

// Hypotheses of a refinement stage centred on the (already upsampled)
// previous depth. Pixels without a valid previous depth fall back to the
// full stage-0 sweep.
inline DepthHypothesisSet refine_hypotheses(const Grid<double>& prev_depth,
                                            const Grid<unsigned char>& prev_valid,
                                            int count, double inverse_span,
                                            const DepthRange& range, int stage) {
  if (count < 2) throw ConfigError("hypothesis count must be at least 2");
  if (!(inverse_span >= 0.0)) throw ConfigError("inverse span must be non-negative");
  range.validate();
  if (prev_depth.height() != prev_valid.height() ||
      prev_depth.width() != prev_valid.width()) {
    throw UsageError("refine_hypotheses: depth/validity shape mismatch");
  }
  DepthHypothesisSet set;
  set.stage = stage;
  set.count = count;
  set.width = prev_depth.width();
  set.height = prev_depth.height();
  set.inverse_span = inverse_span;
  set.values.resize(static_cast<std::size_t>(set.width) * set.height * count);
  const std::vector<double> fallback = inverse_depth_samples(range, count);
  for (int y = 0; y < set.height; ++y) {
    for (int x = 0; x < set.width; ++x) {
      const double d = prev_depth.at(y, x);
      std::span<double> out = set.at(y, x);
      if (prev_valid.at(y, x) && d > 0.0 && std::isfinite(d)) {
        centered_inverse_samples(d, count, inverse_span, range, out);
      } else {
        std::copy(fallback.begin(), fallback.end(), out.begin());
      }
    }
  }
  return set;
}

}  // namespace mvster

#endif  // MVSTER_CORE_GEOMETRY_HPP
