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

#ifndef MVSTER_FUSION_METRICS_HPP
#define MVSTER_FUSION_METRICS_HPP

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvster/core_geometry.hpp"
#include "mvster/errors.hpp"
#include "mvster/grid.hpp"
#include "mvster/parallel.hpp"

namespace mvster {

using Mask = Grid<unsigned char>;

// One view's depth estimate together with its full-resolution camera.
struct ViewDepth {
  Grid<double> depth;
  Mask valid;
  CameraModel camera;
};

struct ConsistencyOptions {
  double reproj_px_tol = 1.0;
  double rel_depth_tol = 0.01;
  int min_consistent = 4;
};

inline constexpr double kPhotometricThreshold = 0.5;

struct PixelRef {
  int view = 0;
  int y = 0;
  int x = 0;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<std::uint8_t, 3>> colors;  // empty or one per point
  std::vector<PixelRef> sources;                    // empty or one per point

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  bool has_colors() const noexcept { return !colors.empty(); }

  void validate() const {
    for (const auto& p : points) {
      if (!p.allFinite()) throw UsageError("point cloud: non-finite coordinate");
    }
    if (!colors.empty() && colors.size() != points.size()) {
      throw UsageError("point cloud: color count does not match point count");
    }
    if (!sources.empty() && sources.size() != points.size()) {
      throw UsageError("point cloud: source count does not match point count");
    }
  }
};

namespace detail {

inline void check_view(const ViewDepth& v) {
  if (v.depth.channels() != 1 || v.valid.channels() != 1 ||
      v.valid.height() != v.depth.height() || v.valid.width() != v.depth.width()) {
    throw UsageError("depth view: depth and valid maps disagree in shape");
  }
  if (v.depth.width() != v.camera.width() || v.depth.height() != v.camera.height()) {
    throw UsageError("depth view: camera size does not match the depth map");
  }
}

// Bilinear inverse depth at a continuous pixel, exact on planes; fails
// unless all four neighbours are valid.
inline std::optional<double> sample_depth(const ViewDepth& v, const Eigen::Vector2d& p) {
  const double xmax = v.depth.width() - 1.0, ymax = v.depth.height() - 1.0;
  const double tol = kSampleBoundaryTolerance;
  if (!(p.x() >= -tol && p.y() >= -tol && p.x() <= xmax + tol && p.y() <= ymax + tol)) {
    return std::nullopt;
  }
  const double x = std::clamp(p.x(), 0.0, xmax), y = std::clamp(p.y(), 0.0, ymax);
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, v.depth.width() - 1);
  const int y1 = std::min(y0 + 1, v.depth.height() - 1);
  const double ax = x - x0, ay = y - y0;
  if (!v.valid.at(y0, x0) || !v.valid.at(y0, x1) || !v.valid.at(y1, x0) ||
      !v.valid.at(y1, x1)) {
    return std::nullopt;
  }
  const double i00 = 1.0 / v.depth.at(y0, x0), i01 = 1.0 / v.depth.at(y0, x1);
  const double i10 = 1.0 / v.depth.at(y1, x0), i11 = 1.0 / v.depth.at(y1, x1);
  const double top = (1 - ax) * i00 + ax * i01;
  const double bottom = (1 - ax) * i10 + ax * i11;
  return 1.0 / ((1 - ay) * top + ay * bottom);
}

struct PairCheck {
  Eigen::Vector2d src_pixel;
  double reproj_depth = 0.0;  // source estimate seen from the reference camera
  double reproj_error = 0.0;  // pixels
  double rel_depth_error = 0.0;
};

// Round trip ref pixel -> source depth map -> reference camera.
inline std::optional<PairCheck> check_pair(const ViewDepth& ref, const ViewDepth& src, int y,
                                           int x) {
  const double d = ref.depth.at(y, x);
  const Eigen::Vector2d p(x, y);
  const Eigen::Vector3d world = ref.camera.backproject(p, d);
  PairCheck c;
  double z = 0.0;
  if (!src.camera.project(world, c.src_pixel, z)) return std::nullopt;
  const auto ds = sample_depth(src, c.src_pixel);
  if (!ds || !(*ds > 0.0)) return std::nullopt;
  const Eigen::Vector3d back = src.camera.backproject(c.src_pixel, *ds);
  Eigen::Vector2d q;
  if (!ref.camera.project(back, q, c.reproj_depth)) return std::nullopt;
  c.reproj_error = (q - p).norm();
  c.rel_depth_error = std::abs(c.reproj_depth - d) / d;
  return c;
}

inline bool passes(const PairCheck& c, const ConsistencyOptions& opt) {
  return c.reproj_error <= opt.reproj_px_tol && c.rel_depth_error <= opt.rel_depth_tol;
}

}  // namespace detail

struct GeometricFilterResult {
  std::vector<Mask> masks;
  std::vector<Grid<int>> consistent_views;  // per pixel count of agreeing sources
  bool too_few_views = false;
};

// Keeps a pixel of view i when at least min_consistent other views agree
// with its depth. With fewer than min_consistent + 1 views nothing is kept
// and too_few_views is set.
inline GeometricFilterResult geometric_filter(std::span<const ViewDepth> views,
                                              const ConsistencyOptions& opt = {},
                                              int threads = 1) {
  if (opt.min_consistent < 0) throw ConfigError("min_consistent must be non-negative");
  if (!(opt.reproj_px_tol >= 0.0) || !(opt.rel_depth_tol >= 0.0)) {
    throw ConfigError("consistency tolerances must be non-negative");
  }
  for (const auto& v : views) detail::check_view(v);
  GeometricFilterResult out;
  const int n = static_cast<int>(views.size());
  out.too_few_views = n < opt.min_consistent + 1;
  for (const auto& v : views) {
    out.masks.emplace_back(v.depth.height(), v.depth.width(), 1, 0);
    out.consistent_views.emplace_back(v.depth.height(), v.depth.width(), 1, 0);
  }
  if (out.too_few_views) return out;
  for (int i = 0; i < n; ++i) {
    const ViewDepth& ref = views[i];
    Mask& mask = out.masks[i];
    Grid<int>& count = out.consistent_views[i];
    parallel_for(0, ref.depth.height(), threads, [&](int y) {
      for (int x = 0; x < ref.depth.width(); ++x) {
        if (!ref.valid.at(y, x) || !(ref.depth.at(y, x) > 0.0)) continue;
        int agree = 0;
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const auto c = detail::check_pair(ref, views[j], y, x);
          if (c && detail::passes(*c, opt)) ++agree;
        }
        count.at(y, x) = agree;
        mask.at(y, x) = agree >= opt.min_consistent ? 1 : 0;
      }
    });
  }
  return out;
}

// Keeps pixels with confidence >= threshold (and valid, when a mask is given).
inline Mask photometric_filter(const Grid<double>& confidence,
                               double threshold = kPhotometricThreshold,
                               const Mask* valid = nullptr) {
  if (valid && (valid->height() != confidence.height() || valid->width() != confidence.width())) {
    throw UsageError("photometric filter: mask and confidence disagree in shape");
  }
  Mask out(confidence.height(), confidence.width(), 1, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool ok = confidence.data()[i] >= threshold && (!valid || valid->data()[i]);
    out.data()[i] = ok ? 1 : 0;
  }
  return out;
}

inline Mask mask_and(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw UsageError("mask_and: shape mismatch");
  Mask out(a.height(), a.width(), 1, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] && b.data()[i];
  return out;
}

// Fuses the kept pixels of all views into one cloud. Views are visited in
// order, pixels row-major. A kept pixel that is not yet claimed becomes a
// point at the mean of its depth and the reprojected depths of the agreeing
// views; the nearest pixels it hit in those views are then claimed and
// never seed a point of their own. `colors` is empty or one RGB image per
// view.
inline PointCloud fuse_point_cloud(std::span<const ViewDepth> views, std::span<const Mask> masks,
                                   const ConsistencyOptions& opt = {},
                                   std::span<const Grid<double>> colors = {}) {
  if (masks.size() != views.size()) throw UsageError("fusion: one mask per view required");
  if (!colors.empty() && colors.size() != views.size()) {
    throw UsageError("fusion: one color image per view required");
  }
  for (std::size_t i = 0; i < views.size(); ++i) {
    detail::check_view(views[i]);
    if (!masks[i].same_shape(views[i].valid)) throw UsageError("fusion: mask shape mismatch");
    if (!colors.empty() && (colors[i].height() != views[i].depth.height() ||
                            colors[i].width() != views[i].depth.width() ||
                            colors[i].channels() != 3)) {
      throw UsageError("fusion: color image shape mismatch");
    }
  }
  std::vector<Mask> claimed;
  for (const auto& v : views) claimed.emplace_back(v.depth.height(), v.depth.width(), 1, 0);

  PointCloud cloud;
  const int n = static_cast<int>(views.size());
  std::vector<std::pair<int, Eigen::Vector2i>> hits;
  for (int i = 0; i < n; ++i) {
    const ViewDepth& ref = views[i];
    for (int y = 0; y < ref.depth.height(); ++y) {
      for (int x = 0; x < ref.depth.width(); ++x) {
        if (!masks[i].at(y, x) || claimed[i].at(y, x)) continue;
        double sum = ref.depth.at(y, x);
        int terms = 1;
        hits.clear();
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const auto c = detail::check_pair(ref, views[j], y, x);
          if (!c || !detail::passes(*c, opt)) continue;
          sum += c->reproj_depth;
          ++terms;
          hits.emplace_back(j, Eigen::Vector2i(static_cast<int>(std::lround(c->src_pixel.x())),
                                               static_cast<int>(std::lround(c->src_pixel.y()))));
        }
        claimed[i].at(y, x) = 1;
        for (const auto& [j, q] : hits) claimed[j].at(q.y(), q.x()) = 1;
        cloud.points.push_back(ref.camera.backproject(Eigen::Vector2d(x, y), sum / terms));
        cloud.sources.push_back({i, y, x});
        if (!colors.empty()) {
          std::array<std::uint8_t, 3> rgb{};
          for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(colors[i].at(y, x, c), 0.0, 1.0);
            rgb[c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
          }
          cloud.colors.push_back(rgb);
        }
      }
    }
  }
  return cloud;
}

struct DepthMetrics {
  double epe = 0.0;
  double e1 = 0.0;
  double e3 = 0.0;
  std::size_t count = 0;
};

// Mean absolute error and fractions of errors above 1 and 3 depth units
// over the valid pixels, summed in row-major order.
inline DepthMetrics depth_metrics(const Grid<double>& pred, const Grid<double>& gt,
                                  const Mask& valid) {
  if (!pred.same_shape(gt) || pred.height() != valid.height() ||
      pred.width() != valid.width() || pred.channels() != 1 || valid.channels() != 1) {
    throw UsageError("depth metrics: shape mismatch");
  }
  DepthMetrics m;
  double sum = 0.0;
  std::size_t over1 = 0, over3 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid.data()[i]) continue;
    const double e = std::abs(pred.data()[i] - gt.data()[i]);
    sum += e;
    over1 += e > 1.0;
    over3 += e > 3.0;
    ++m.count;
  }
  if (m.count == 0) throw UsageError("depth metrics: no valid pixels");
  const double n = static_cast<double>(m.count);
  m.epe = sum / n;
  m.e1 = static_cast<double>(over1) / n;
  m.e3 = static_cast<double>(over3) / n;
  return m;
}

// Full-resolution map read at the pixel centers of a map downscaled by
// `factor`: coarse (x, y) sits on fine (factor * x, factor * y).
template <typename T>
Grid<T> decimate(const Grid<T>& in, int factor) {
  if (factor < 1 || in.width() % factor != 0 || in.height() % factor != 0) {
    throw UsageError("decimate: size not divisible by " + std::to_string(factor));
  }
  Grid<T> out(in.height() / factor, in.width() / factor, in.channels());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      for (int c = 0; c < in.channels(); ++c) out.at(y, x, c) = in.at(factor * y, factor * x, c);
    }
  }
  return out;
}

// Exact nearest-neighbour queries over a uniform hash grid.
class PointGrid {
 public:
  PointGrid(std::span<const Eigen::Vector3d> points, double cell)
      : points_(points.begin(), points.end()), cell_(cell) {
    if (points_.empty()) throw UsageError("point grid: empty cloud");
    if (!(cell > 0.0) || !std::isfinite(cell)) throw UsageError("point grid: invalid cell size");
    lo_ = hi_ = key_of(points_[0]);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Eigen::Vector3i k = key_of(points_[i]);
      lo_ = lo_.cwiseMin(k);
      hi_ = hi_.cwiseMax(k);
      cells_[hash(k)].push_back(static_cast<std::uint32_t>(i));
    }
  }

  // Distance to the nearest point, or `cap` when none is closer.
  double nearest(const Eigen::Vector3d& q, double cap) const {
    const Eigen::Vector3i c = key_of(q);
    double best2 = cap * cap;
    const int max_ring = std::max({(c - lo_).cwiseAbs().maxCoeff(),
                                   (hi_ - c).cwiseAbs().maxCoeff()});
    for (int r = 0; r <= max_ring; ++r) {
      // Points outside rings 0..r-1 lie at least (r - 1) cells away.
      const double reach = (r - 1) * cell_;
      if (r > 0 && reach * reach >= best2) break;
      for (int dz = -r; dz <= r; ++dz) {
        for (int dy = -r; dy <= r; ++dy) {
          const int step = (std::abs(dz) == r || std::abs(dy) == r) ? 1 : std::max(1, 2 * r);
          for (int dx = -r; dx <= r; dx += step) {
            const Eigen::Vector3i k = c + Eigen::Vector3i(dx, dy, dz);
            if ((k.array() < lo_.array()).any() || (k.array() > hi_.array()).any()) continue;
            const auto it = cells_.find(hash(k));
            if (it == cells_.end()) continue;
            for (std::uint32_t i : it->second) {
              best2 = std::min(best2, (points_[i] - q).squaredNorm());
            }
          }
        }
      }
    }
    return std::sqrt(best2);
  }

 private:
  Eigen::Vector3i key_of(const Eigen::Vector3d& p) const {
    return (p / cell_).array().floor().cast<int>();
  }
  static std::uint64_t hash(const Eigen::Vector3i& k) {
    const auto u = [](int v) { return static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)); };
    return (u(k.x()) * 0x9E3779B97F4A7C15ULL) ^ (u(k.y()) * 0xC2B2AE3D27D4EB4FULL) ^
           (u(k.z()) * 0x165667B19E3779F9ULL) ^ (u(k.x()) << 42) ^ (u(k.y()) << 21) ^ u(k.z());
  }

  std::vector<Eigen::Vector3d> points_;
  double cell_;
  Eigen::Vector3i lo_, hi_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

struct CloudMetrics {
  double accuracy = 0.0;
  double completeness = 0.0;
  double overall = 0.0;
};

namespace detail {

// Cell edge giving a few points per occupied cell.
inline double grid_cell(std::span<const Eigen::Vector3d> pts) {
  Eigen::Vector3d lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Eigen::Vector3d ext = (hi - lo).cwiseMax(1e-9);
  const double area = ext.x() * ext.y() + ext.y() * ext.z() + ext.x() * ext.z();
  const double cell = std::sqrt(4.0 * area / static_cast<double>(pts.size()));
  return std::max(cell, 1e-9 * std::max(1.0, ext.maxCoeff()));
}

inline double mean_capped_distance(std::span<const Eigen::Vector3d> from,
                                   const PointGrid& to, double cap, int threads) {
  std::vector<double> d(from.size());
  parallel_for(0, static_cast<int>(from.size()), threads,
               [&](int i) { d[i] = to.nearest(from[i], cap); });
  double sum = 0.0;
  for (double v : d) sum += v;
  return sum / static_cast<double>(d.size());
}

}  // namespace detail

// Accuracy (recon -> gt), completeness (gt -> recon) and their mean, with
// every nearest-neighbour distance capped at dist_cap.
inline CloudMetrics cloud_metrics(const PointCloud& recon, const PointCloud& gt,
                                  double dist_cap, int threads = 1) {
  if (recon.empty() || gt.empty()) throw UsageError("cloud metrics: empty cloud");
  if (!(dist_cap > 0.0) || !std::isfinite(dist_cap)) {
    throw UsageError("cloud metrics: dist_cap must be positive and finite");
  }
  const PointGrid gt_grid(gt.points, detail::grid_cell(gt.points));
  const PointGrid recon_grid(recon.points, detail::grid_cell(recon.points));
  CloudMetrics m;
  m.accuracy = detail::mean_capped_distance(recon.points, gt_grid, dist_cap, threads);
  m.completeness = detail::mean_capped_distance(gt.points, recon_grid, dist_cap, threads);
  m.overall = 0.5 * (m.accuracy + m.completeness);
  return m;
}

}  // namespace mvster

#endif  // MVSTER_FUSION_METRICS_HPP
