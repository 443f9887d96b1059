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

#ifndef MVSTER_REGULARIZER_HPP
#define MVSTER_REGULARIZER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvster/core_geometry.hpp"
#include "mvster/epipolar_transformer.hpp"
#include "mvster/errors.hpp"
#include "mvster/grid.hpp"
#include "mvster/nn.hpp"
#include "mvster/parallel.hpp"
#include "mvster/weight_bundle.hpp"

namespace mvster {

// Fused costs of a whole stage: cost[((y * W + x) * G + g) * D + d], plus a
// per-bin flag telling whether any view supported the bin.
struct CostField {
  int height = 0, width = 0, groups = 0, depth = 0;
  std::vector<double> cost;
  std::vector<std::uint8_t> supported;  // (y * W + x) * D + d

  CostField() = default;
  CostField(int h, int w, int g, int d)
      : height(h), width(w), groups(g), depth(d),
        cost(static_cast<std::size_t>(h) * w * g * d, 0.0),
        supported(static_cast<std::size_t>(h) * w * d, 1) {}

  std::span<double> at(int y, int x) {
    return {cost.data() + (static_cast<std::size_t>(y) * width + x) * groups * depth,
            static_cast<std::size_t>(groups) * depth};
  }
  std::span<const double> at(int y, int x) const {
    return {cost.data() + (static_cast<std::size_t>(y) * width + x) * groups * depth,
            static_cast<std::size_t>(groups) * depth};
  }
  std::span<std::uint8_t> support(int y, int x) {
    return {supported.data() + (static_cast<std::size_t>(y) * width + x) * depth,
            static_cast<std::size_t>(depth)};
  }
  std::span<const std::uint8_t> support(int y, int x) const {
    return {supported.data() + (static_cast<std::size_t>(y) * width + x) * depth,
            static_cast<std::size_t>(depth)};
  }
};

struct ProbabilityVolume {
  int stage = 0;
  int height = 0, width = 0, depth = 0;
  std::vector<double> prob;  // (y * W + x) * D + d

  std::span<const double> at(int y, int x) const {
    return {prob.data() + (static_cast<std::size_t>(y) * width + x) * depth,
            static_cast<std::size_t>(depth)};
  }
  std::span<double> at(int y, int x) {
    return {prob.data() + (static_cast<std::size_t>(y) * width + x) * depth,
            static_cast<std::size_t>(depth)};
  }
};

enum class RegularizerMode { kReference, kLearned };

struct RegularizerOptions {
  RegularizerMode mode = RegularizerMode::kReference;
  double sigma = 1.0;                    // reference-mode blur
  const WeightBundle* weights = nullptr;  // learned mode
  int threads = 1;
};

// Normalised 3-tap Gaussian {a, b, a}.
inline std::array<double, 3> gaussian_taps(double sigma) {
  if (!(sigma > 0.0)) return {0.0, 1.0, 0.0};
  const double side = std::exp(-0.5 / (sigma * sigma));
  const double total = 1.0 + 2.0 * side;
  return {side / total, 1.0 / total, side / total};
}

// Mirror index with the edge sample repeated (x[-1] = x[0]); a symmetric
// kernel then preserves the total mass of the slice.
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

// Separable 3x3 Gaussian on one H x W slice (row-major), in place.
inline void blur_slice(std::span<double> slice, int height, int width, double sigma) {
  const auto k = gaussian_taps(sigma);
  std::vector<double> tmp(slice.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int t = -1; t <= 1; ++t) {
        acc += k[t + 1] * slice[static_cast<std::size_t>(y) * width + reflect_index(x + t, width)];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int t = -1; t <= 1; ++t) {
        acc += k[t + 1] * tmp[static_cast<std::size_t>(reflect_index(y + t, height)) * width + x];
      }
      slice[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
}

namespace detail {

// Cost-volume UNet forward pass; returns D x H x W x 1 logits.
inline nn::Volume unet_forward(const nn::Volume& input, const WeightBundle& w, int threads) {
  const auto& L = w.layers();
  using nn::apply;
  const nn::Volume c0 = apply(input, L[0], threads);
  const nn::Volume c2 = apply(apply(c0, L[1], threads), L[2], threads);
  const nn::Volume c4 = apply(apply(c2, L[5], threads), L[6], threads);
  const nn::Volume c6 = apply(apply(c4, L[8], threads), L[9], threads);
  nn::Volume x = apply(c6, L[10], threads);
  nn::add_inplace(x, c4);
  x = apply(x, L[7], threads);
  nn::add_inplace(x, c2);
  x = apply(x, L[3], threads);
  nn::add_inplace(x, c0);
  x = apply(x, L[4], threads);
  return apply(x, L[11], threads);
}

}  // namespace detail

// Turns a fused cost field into per-pixel distributions over depth bins.
// Unsupported bins receive zero probability (uniform if none is supported).
inline ProbabilityVolume regularize(const CostField& cost, const RegularizerOptions& opt,
                                    int stage = 0) {
  const int H = cost.height, W = cost.width, G = cost.groups, D = cost.depth;
  for (double v : cost.cost) {
    if (!std::isfinite(v)) throw UsageError("regularize: non-finite cost");
  }
  // Logits laid out (y * W + x) * D + d.
  std::vector<double> logits(static_cast<std::size_t>(H) * W * D, 0.0);
  if (opt.mode == RegularizerMode::kReference) {
    std::vector<std::vector<double>> slices(D, std::vector<double>(static_cast<std::size_t>(H) * W));
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const auto c = cost.at(y, x);
        for (int d = 0; d < D; ++d) {
          double acc = 0.0;
          for (int g = 0; g < G; ++g) acc += c[static_cast<std::size_t>(g) * D + d];
          slices[d][static_cast<std::size_t>(y) * W + x] = acc;
        }
      }
    }
    parallel_for(0, D, opt.threads, [&](int d) { blur_slice(slices[d], H, W, opt.sigma); });
    for (std::size_t p = 0; p < static_cast<std::size_t>(H) * W; ++p) {
      for (int d = 0; d < D; ++d) logits[p * D + d] = slices[d][p];
    }
  } else {
    if (opt.weights == nullptr) {
      throw ConfigError("learned regularizer requires a weight bundle");
    }
    opt.weights->check_layout(unet_layout(G));
    if (H % 8 != 0 || W % 8 != 0) {
      throw UsageError("learned regularizer needs stage resolution divisible by 8, got " +
                       std::to_string(W) + "x" + std::to_string(H));
    }
    nn::Volume in(D, H, W, G);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const auto c = cost.at(y, x);
        for (int d = 0; d < D; ++d) {
          for (int g = 0; g < G; ++g) in.at(d, y, x, g) = c[static_cast<std::size_t>(g) * D + d];
        }
      }
    }
    const nn::Volume out = detail::unet_forward(in, *opt.weights, opt.threads);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        for (int d = 0; d < D; ++d) {
          logits[(static_cast<std::size_t>(y) * W + x) * D + d] = out.at(d, y, x, 0);
        }
      }
    }
  }
  ProbabilityVolume pv;
  pv.stage = stage;
  pv.height = H;
  pv.width = W;
  pv.depth = D;
  pv.prob.resize(logits.size());
  parallel_for(0, H, opt.threads, [&](int y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * W + x) * D;
      masked_softmax(std::span<const double>(logits.data() + base, D), cost.support(y, x),
                     std::span<double>(pv.prob.data() + base, D));
    }
  });
  return pv;
}

enum class ReadoutRule { kExpectation, kArgmax };

struct ReadoutOptions {
  ReadoutRule rule = ReadoutRule::kExpectation;
  int confidence_window = 4;
};

struct DepthReadout {
  Grid<double> depth;
  Grid<double> confidence;
};

// Largest probability mass over min(window, D) consecutive bins.
inline double window_confidence(std::span<const double> p, int window) {
  const int D = static_cast<int>(p.size());
  const int w = std::clamp(window, 1, D);
  double run = 0.0;
  for (int j = 0; j < w; ++j) run += p[j];
  double best = run;
  for (int j = w; j < D; ++j) {
    run += p[j] - p[j - w];
    best = std::max(best, run);
  }
  return std::min(best, 1.0);
}

inline DepthReadout depth_readout(const ProbabilityVolume& pv, const DepthHypothesisSet& hyps,
                                  const ReadoutOptions& opt = {}) {
  if (pv.height != hyps.height || pv.width != hyps.width || pv.depth != hyps.count) {
    throw UsageError("depth_readout: probability/hypothesis shape mismatch");
  }
  DepthReadout r{Grid<double>(pv.height, pv.width), Grid<double>(pv.height, pv.width)};
  for (int y = 0; y < pv.height; ++y) {
    for (int x = 0; x < pv.width; ++x) {
      const auto p = pv.at(y, x);
      const auto d = hyps.at(y, x);
      double depth = 0.0;
      if (opt.rule == ReadoutRule::kExpectation) {
        for (int j = 0; j < pv.depth; ++j) depth += p[j] * d[j];
        depth = std::clamp(depth, d.front(), d.back());
      } else {
        const auto best = std::max_element(p.begin(), p.end());  // first maximum
        depth = d[static_cast<std::size_t>(best - p.begin())];
      }
      r.depth.at(y, x) = depth;
      r.confidence.at(y, x) = window_confidence(p, opt.confidence_window);
    }
  }
  return r;
}

}  // namespace mvster

#endif  // MVSTER_REGULARIZER_HPP
