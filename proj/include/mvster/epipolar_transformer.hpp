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

#ifndef MVSTER_EPIPOLAR_TRANSFORMER_HPP
#define MVSTER_EPIPOLAR_TRANSFORMER_HPP

// Parameter-free view aggregation along epipolar lines.
//
// For one reference pixel with query feature q (C channels) and, per source
// view i, keys v_i sampled at the D hypotheses:
//
//   w_i[d]   = softmax_d(<v_i[:, d], q> / (t_e * sqrt(C)))     attention
//   s_i[g,d] = (1 / G) <v_i^g[:, d], q^g>                      group correlation
//   c[g,d]   = sum_i w_i[d] s_i[g,d] / sum_i w_i[d]            fused cost
//
// Bins whose sample fell outside the source image or behind the camera are
// masked out of the softmax and carry zero keys.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mvster/errors.hpp"

namespace mvster {

inline constexpr double kDefaultTemperature = 2.0;

// Keys of one source view at one reference pixel: D columns of C channels,
// stored column-major (data[d * C + c]).
struct EpipolarKeys {
  int channels = 0;
  int depth = 0;
  std::vector<double> data;
  std::vector<std::uint8_t> valid;

  EpipolarKeys() = default;
  EpipolarKeys(int c, int d)
      : channels(c), depth(d), data(static_cast<std::size_t>(c) * d, 0.0), valid(d, 0) {}

  std::span<double> column(int d) {
    return {data.data() + static_cast<std::size_t>(d) * channels,
            static_cast<std::size_t>(channels)};
  }
  std::span<const double> column(int d) const {
    return {data.data() + static_cast<std::size_t>(d) * channels,
            static_cast<std::size_t>(channels)};
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Masked softmax over bins; invalid bins get exactly zero weight. Returns
// false (and writes a uniform distribution) when every bin is invalid.
inline bool masked_softmax(std::span<const double> logits,
                           std::span<const std::uint8_t> valid, std::span<double> out) {
  const std::size_t n = logits.size();
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (valid[j]) peak = std::max(peak, logits[j]);
  }
  if (peak == -std::numeric_limits<double>::infinity()) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(n));
    return false;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = valid[j] ? std::exp(logits[j] - peak) : 0.0;
    total += out[j];
  }
  for (double& v : out) v /= total;
  return true;
}

// In-place variant used by the pipeline; `logits` is scratch of size D.
inline bool attention_weights(std::span<const double> query, const EpipolarKeys& keys,
                              double temperature, std::span<double> logits,
                              std::span<double> out) {
  const double scale = 1.0 / (temperature * std::sqrt(static_cast<double>(keys.channels)));
  for (int d = 0; d < keys.depth; ++d) {
    logits[d] = keys.valid[d] ? dot(keys.column(d), query) * scale : 0.0;
  }
  return masked_softmax(logits, keys.valid, out);
}

struct AttentionResult {
  std::vector<double> weights;
  bool all_invalid = false;
};

inline AttentionResult attention_weights(std::span<const double> query,
                                         const EpipolarKeys& keys,
                                         double temperature = kDefaultTemperature) {
  if (!(temperature > 0.0)) throw ConfigError("attention temperature must be positive");
  if (keys.channels <= 0 || static_cast<int>(query.size()) != keys.channels) {
    throw UsageError("attention_weights: query/key channel mismatch");
  }
  AttentionResult r;
  r.weights.resize(keys.depth);
  std::vector<double> logits(keys.depth);
  r.all_invalid = !attention_weights(query, keys, temperature, logits, r.weights);
  return r;
}

inline void check_groups(int channels, int groups) {
  if (groups <= 0 || channels % groups != 0) {
    throw ConfigError("group count " + std::to_string(groups) +
                      " does not divide channel count " + std::to_string(channels));
  }
}

// Writes s[g * D + d]; invalid bins yield zeros.
inline void group_correlation(std::span<const double> query, const EpipolarKeys& keys,
                              int groups, std::span<double> out) {
  const int per_group = keys.channels / groups;
  const double norm = 1.0 / groups;
  for (int d = 0; d < keys.depth; ++d) {
    const auto col = keys.column(d);
    for (int g = 0; g < groups; ++g) {
      double acc = 0.0;
      if (keys.valid[d]) {
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) acc += col[c] * query[c];
      }
      out[static_cast<std::size_t>(g) * keys.depth + d] = acc * norm;
    }
  }
}

inline std::vector<double> group_correlation(std::span<const double> query,
                                             const EpipolarKeys& keys, int groups) {
  check_groups(keys.channels, groups);
  if (static_cast<int>(query.size()) != keys.channels) {
    throw UsageError("group_correlation: query/key channel mismatch");
  }
  std::vector<double> out(static_cast<std::size_t>(groups) * keys.depth);
  group_correlation(query, keys, groups, out);
  return out;
}

// Per-bin weight sum below which a fused bin counts as unsupported.
inline constexpr double kMinFusionWeight = 1e-12;

struct FusedCost {
  int groups = 0;
  int depth = 0;
  std::vector<double> cost;          // cost[g * D + d]
  std::vector<std::uint8_t> supported;  // per bin
};

// Accumulates views in the order given; callers fix that order (ascending
// view id) so the result does not depend on scheduling.
inline FusedCost fuse_views(std::span<const std::vector<double>> values,
                            std::span<const std::vector<double>> weights, int groups) {
  if (values.empty()) throw UsageError("fuse_views: no views");
  if (values.size() != weights.size()) throw UsageError("fuse_views: view count mismatch");
  const int depth = static_cast<int>(weights[0].size());
  FusedCost f;
  f.groups = groups;
  f.depth = depth;
  f.cost.assign(static_cast<std::size_t>(groups) * depth, 0.0);
  f.supported.assign(depth, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (static_cast<int>(weights[i].size()) != depth ||
        values[i].size() != f.cost.size()) {
      throw UsageError("fuse_views: shape mismatch in view " + std::to_string(i));
    }
  }
  for (int d = 0; d < depth; ++d) {
    double wsum = 0.0;
    for (const auto& w : weights) wsum += w[d];
    if (wsum < kMinFusionWeight) continue;
    f.supported[d] = 1;
    for (int g = 0; g < groups; ++g) {
      double acc = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        acc += weights[i][d] * values[i][static_cast<std::size_t>(g) * depth + d];
      }
      f.cost[static_cast<std::size_t>(g) * depth + d] = acc / wsum;
    }
  }
  return f;
}

// The reference feature repeated along every depth bin.
inline EpipolarKeys broadcast_reference(std::span<const double> query, int depth) {
  EpipolarKeys v(static_cast<int>(query.size()), depth);
  for (int d = 0; d < depth; ++d) std::copy(query.begin(), query.end(), v.column(d).begin());
  std::fill(v.valid.begin(), v.valid.end(), 1);
  return v;
}

// Variance-fusion baseline: population variance over the N >= 2 volumes
// (reference broadcast first, then sources), per channel and bin. Output is
// laid out like EpipolarKeys (data[d * C + c]).
inline std::vector<double> variance_fusion(std::span<const EpipolarKeys> volumes) {
  if (volumes.size() < 2) throw UsageError("variance_fusion: needs at least two volumes");
  const int C = volumes[0].channels, D = volumes[0].depth;
  for (const auto& v : volumes) {
    if (v.channels != C || v.depth != D) throw UsageError("variance_fusion: shape mismatch");
  }
  const double n = static_cast<double>(volumes.size());
  std::vector<double> out(static_cast<std::size_t>(C) * D, 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    // Mean taken relative to the first volume so equal inputs give exact zeros.
    const double base = volumes[0].data[k];
    double shift = 0.0;
    for (const auto& v : volumes) shift += v.data[k] - base;
    const double mean = base + shift / n;
    double var = 0.0;
    for (const auto& v : volumes) var += (v.data[k] - mean) * (v.data[k] - mean);
    out[k] = var / n;
  }
  return out;
}

// Variance over the reference and the sources valid at each bin, written
// like EpipolarKeys (out[d * C + c]). Bins no source reaches stay zero and
// are flagged unsupported.
inline void masked_variance(std::span<const double> query, std::span<const EpipolarKeys> sources,
                            std::span<double> out, std::span<std::uint8_t> supported) {
  const int C = static_cast<int>(query.size());
  const int D = static_cast<int>(supported.size());
  for (int d = 0; d < D; ++d) {
    int n = 1;
    for (const auto& s : sources) n += s.valid[d] ? 1 : 0;
    supported[d] = n > 1 ? 1 : 0;
    for (int c = 0; c < C; ++c) {
      double v = 0.0;
      if (n > 1) {
        double shift = 0.0;
        for (const auto& s : sources) {
          if (s.valid[d]) shift += s.data[static_cast<std::size_t>(d) * C + c] - query[c];
        }
        const double mean = query[c] + shift / n;
        v = (query[c] - mean) * (query[c] - mean);
        for (const auto& s : sources) {
          if (!s.valid[d]) continue;
          const double e = s.data[static_cast<std::size_t>(d) * C + c] - mean;
          v += e * e;
        }
        v /= n;
      }
      out[static_cast<std::size_t>(d) * C + c] = v;
    }
  }
}

}  // namespace mvster

#endif  // MVSTER_EPIPOLAR_TRANSFORMER_HPP
