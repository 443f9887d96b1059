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

#ifndef MVSTER_FEATURE_PYRAMID_HPP
#define MVSTER_FEATURE_PYRAMID_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mvster/errors.hpp"
#include "mvster/grid.hpp"
#include "mvster/nn.hpp"
#include "mvster/parallel.hpp"
#include "mvster/weight_bundle.hpp"

namespace mvster {

// H x W x 3 image with values in [0, 1].
using Image = Grid<double>;
// H_k x W_k x C_k feature map.
using FeatureMap = Grid<double>;

inline constexpr int kPyramidLevels = 4;
inline constexpr std::array<int, kPyramidLevels> kPyramidChannels{8, 16, 32, 64};

// levels[k] has resolution H / 2^k and kPyramidChannels[k] channels.
struct FeaturePyramid {
  std::vector<FeatureMap> levels;
};

// Bilinear blend of the four texels around `coord`. Coordinates outside
// [0, W-1] x [0, H-1] (beyond the tolerance) write zeros and return false.
inline bool bilinear_sample(const FeatureMap& fm, const Eigen::Vector2d& coord,
                            std::span<double> out) {
  const double xmax = fm.width() - 1.0, ymax = fm.height() - 1.0;
  const double tol = kSampleBoundaryTolerance;
  if (!(coord.x() >= -tol && coord.y() >= -tol && coord.x() <= xmax + tol &&
        coord.y() <= ymax + tol)) {
    std::fill(out.begin(), out.end(), 0.0);
    return false;
  }
  const double x = std::clamp(coord.x(), 0.0, xmax), y = std::clamp(coord.y(), 0.0, ymax);
  const int x0 = std::min(static_cast<int>(x), fm.width() - 1);
  const int y0 = std::min(static_cast<int>(y), fm.height() - 1);
  const int x1 = std::min(x0 + 1, fm.width() - 1);
  const int y1 = std::min(y0 + 1, fm.height() - 1);
  const double ax = x - x0, ay = y - y0;
  const double w00 = (1.0 - ax) * (1.0 - ay), w01 = ax * (1.0 - ay);
  const double w10 = (1.0 - ax) * ay, w11 = ax * ay;
  const auto p00 = fm.pixel(y0, x0), p01 = fm.pixel(y0, x1);
  const auto p10 = fm.pixel(y1, x0), p11 = fm.pixel(y1, x1);
  for (int c = 0; c < fm.channels(); ++c) {
    out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
  }
  return true;
}

struct Sample {
  std::vector<double> values;
  bool valid = false;
};

inline Sample bilinear_sample(const FeatureMap& fm, const Eigen::Vector2d& coord) {
  Sample s;
  s.values.resize(fm.channels());
  s.valid = bilinear_sample(fm, coord, s.values);
  return s;
}

// Mean of the colour channels.
inline Grid<double> intensity(const Image& image) {
  Grid<double> out(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      double acc = 0.0;
      for (double v : image.pixel(y, x)) acc += v;
      out.at(y, x) = acc / image.channels();
    }
  }
  return out;
}

// Block average over factor x factor cells, per channel.
inline Grid<double> area_downsample(const Grid<double>& in, int factor) {
  if (factor < 1 || in.height() % factor != 0 || in.width() % factor != 0) {
    throw UsageError("area_downsample: size not divisible by " + std::to_string(factor));
  }
  Grid<double> out(in.height() / factor, in.width() / factor, in.channels());
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      for (int c = 0; c < in.channels(); ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            acc += in.at(y * factor + dy, x * factor + dx, c);
          }
        }
        out.at(y, x, c) = acc * norm;
      }
    }
  }
  return out;
}

// Gaussian low-pass of standard deviation `sigma` (input pixels) sampled at
// input pixels factor * i, so output pixel i is centred on input pixel
// factor * i as intrinsics scaled by exact division require. Borders mirror.
inline Grid<double> gaussian_downsample(const Grid<double>& in, int factor, double sigma) {
  if (factor < 1 || in.height() % factor != 0 || in.width() % factor != 0) {
    throw UsageError("gaussian_downsample: size not divisible by " + std::to_string(factor));
  }
  const int radius = sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma)) : 0;
  std::vector<double> taps(2 * radius + 1, 1.0);
  double total = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    if (radius > 0) taps[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
    total += taps[t + radius];
  }
  for (double& v : taps) v /= total;
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  const int C = in.channels();
  Grid<double> rows(in.height(), in.width() / factor, C);
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < rows.width(); ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += taps[t + radius] * in.at(y, mirror(factor * x + t, in.width()), c);
        }
        rows.at(y, x, c) = acc;
      }
    }
  }
  Grid<double> out(in.height() / factor, rows.width(), C);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += taps[t + radius] * rows.at(mirror(factor * y + t, in.height()), x, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

// Low-pass width of the descriptor pyramid, in pixels of the level.
inline constexpr double kDescriptorBlur = 0.8;

inline void check_pyramid_input(const Image& image) {
  if (image.channels() != 3) throw UsageError("feature extraction needs a 3-channel image");
  if (image.height() == 0 || image.width() == 0 || image.height() % 8 != 0 ||
      image.width() % 8 != 0) {
    throw UsageError("image size " + std::to_string(image.width()) + "x" +
                     std::to_string(image.height()) + " is not divisible by 8");
  }
}

// Oracle-bypass pyramid: level k holds the 2^k area-downsampled intensity
// replicated over kPyramidChannels[k] channels.
inline FeaturePyramid bypass_pyramid(const Image& image) {
  check_pyramid_input(image);
  const Grid<double> gray = intensity(image);
  FeaturePyramid pyr;
  for (int k = 0; k < kPyramidLevels; ++k) {
    const Grid<double> level = area_downsample(gray, 1 << k);
    FeatureMap fm(level.height(), level.width(), kPyramidChannels[k]);
    for (int y = 0; y < level.height(); ++y) {
      for (int x = 0; x < level.width(); ++x) {
        std::fill(fm.pixel(y, x).begin(), fm.pixel(y, x).end(), level.at(y, x));
      }
    }
    pyr.levels.push_back(std::move(fm));
  }
  return pyr;
}

// Integer offsets nearest to the origin (origin excluded), ordered by
// squared radius and then by angle.
inline std::vector<std::pair<int, int>> descriptor_taps(int count) {
  std::vector<std::pair<int, int>> taps;
  const int r = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count)))) + 1;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx != 0 || dy != 0) taps.emplace_back(dx, dy);
    }
  }
  std::stable_sort(taps.begin(), taps.end(), [](const auto& a, const auto& b) {
    const int ra = a.first * a.first + a.second * a.second;
    const int rb = b.first * b.first + b.second * b.second;
    if (ra != rb) return ra < rb;
    return std::atan2(a.second, a.first) < std::atan2(b.second, b.first);
  });
  taps.resize(count);
  return taps;
}

// Default gain of the oracle descriptors; inner products of matching
// descriptors equal gain^2 * C.
inline constexpr double kDescriptorGain = 2.0;

// Oracle descriptors: at every level, the zero-mean local intensity patch
// over descriptor_taps(C_k) of the bypass intensity, normalised to norm
// gain * sqrt(C_k). Inner products are then scaled normalised
// cross-correlations, insensitive to per-view gain and offset.
inline FeaturePyramid descriptor_pyramid(const Image& image,
                                         const std::array<double, kPyramidLevels>& gains) {
  check_pyramid_input(image);
  const Grid<double> gray = intensity(image);
  FeaturePyramid pyr;
  for (int k = 0; k < kPyramidLevels; ++k) {
    const Grid<double> level = gaussian_downsample(gray, 1 << k, kDescriptorBlur * (1 << k));
    const int c = kPyramidChannels[k];
    const auto taps = descriptor_taps(c);
    const int h = level.height(), w = level.width();
    auto reflect = [](int i, int n) {
      while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
      return i;
    };
    FeatureMap fm(h, w, c);
    const double target = gains[k] * std::sqrt(static_cast<double>(c));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        auto out = fm.pixel(y, x);
        double mean = 0.0;
        for (int i = 0; i < c; ++i) {
          out[i] = level.at(reflect(y + taps[i].second, h), reflect(x + taps[i].first, w));
          mean += out[i];
        }
        mean /= c;
        double norm2 = 0.0;
        for (double& v : out) {
          v -= mean;
          norm2 += v * v;
        }
        const double norm = std::sqrt(norm2);
        const double s = norm > 1e-9 ? target / norm : 0.0;
        for (double& v : out) v *= s;
      }
    }
    pyr.levels.push_back(std::move(fm));
  }
  return pyr;
}

inline FeaturePyramid descriptor_pyramid(const Image& image, double gain = kDescriptorGain) {
  return descriptor_pyramid(image, {gain, gain, gain, gain});
}

namespace detail {

// Nearest-neighbour 2x upsampling used by the top-down pathway.
inline Grid<double> upsample_nearest2(const Grid<double>& in) {
  Grid<double> out(in.height() * 2, in.width() * 2, in.channels());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const auto src = in.pixel(y / 2, x / 2);
      std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
    }
  }
  return out;
}

}  // namespace detail

// Forward pass of the feature pyramid network. Oracle-bypass bundles return
// bypass_pyramid(image).
inline FeaturePyramid extract_pyramid(const Image& image, const WeightBundle& weights,
                                      int threads = 1) {
  check_pyramid_input(image);
  if (weights.provenance() == WeightProvenance::kOracleBypass) {
    return bypass_pyramid(image);
  }
  weights.check_layout(fpn_layout());
  const auto& L = weights.layers();
  // Bottom-up path. Stage s starts at layer index first[s].
  constexpr std::array<int, 4> first{0, 4, 9, 14};
  constexpr std::array<int, 4> conv_count{2, 3, 3, 3};
  std::array<Grid<double>, 4> bottom;
  Grid<double> x = image;
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < conv_count[s]; ++i) x = nn::conv2d(x, L[first[s] + i], threads);
    bottom[s] = x;
  }
  // Top-down path with nearest-neighbour upsampling of the lateral sum.
  FeaturePyramid pyr;
  pyr.levels.resize(4);
  Grid<double> intra;
  for (int s = 3; s >= 0; --s) {
    const int inner = first[s] + conv_count[s];
    Grid<double> lateral = nn::conv2d(bottom[s], L[inner], threads);
    if (s < 3) {
      const Grid<double> up = detail::upsample_nearest2(intra);
      for (std::size_t i = 0; i < lateral.size(); ++i) lateral.data()[i] += up.data()[i];
    }
    intra = std::move(lateral);
    pyr.levels[s] = nn::conv2d(intra, L[inner + 1], threads);
  }
  return pyr;
}

}  // namespace mvster

#endif  // MVSTER_FEATURE_PYRAMID_HPP
