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

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mvster/epipolar_transformer.hpp"

namespace mvster {
namespace {

EpipolarKeys random_keys(std::mt19937_64& rng, int c, int d, double invalid_rate = 0.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EpipolarKeys k(c, d);
  for (int j = 0; j < d; ++j) {
    k.valid[j] = u(rng) >= invalid_rate;
    if (!k.valid[j]) continue;
    for (double& v : k.column(j)) v = n(rng);
  }
  return k;
}

std::vector<double> random_vector(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

TEST(AttentionWeights, IdenticalKeysAreUniform) {
  EpipolarKeys keys(3, 5);
  for (int d = 0; d < 5; ++d) {
    keys.valid[d] = 1;
    std::vector<double> col{0.3, -1.0, 2.0};
    std::copy(col.begin(), col.end(), keys.column(d).begin());
  }
  const std::vector<double> q{1.0, 2.0, 3.0};
  const auto r = attention_weights(q, keys);
  EXPECT_FALSE(r.all_invalid);
  for (double w : r.weights) EXPECT_NEAR(w, 0.2, 1e-15);
}

TEST(AttentionWeights, ScalarSoftmaxByHand) {
  const double te = 2.0;
  EpipolarKeys keys(1, 2);
  keys.valid = {1, 1};
  keys.data = {0.0, te};
  const auto r = attention_weights(std::vector<double>{1.0}, keys, te);
  const double e = std::exp(1.0);
  EXPECT_NEAR(r.weights[0], 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(r.weights[1], e / (1.0 + e), 1e-15);
}

TEST(AttentionWeights, DefaultTemperatureIsTwo) { EXPECT_EQ(kDefaultTemperature, 2.0); }

TEST(AttentionWeights, InvalidBinsGetZeroWeight) {
  EpipolarKeys keys(2, 4);
  keys.valid = {1, 0, 1, 0};
  keys.data = {1, 1, 0, 0, 2, 2, 0, 0};
  const auto r = attention_weights(std::vector<double>{1.0, 1.0}, keys, 1.0);
  EXPECT_EQ(r.weights[1], 0.0);
  EXPECT_EQ(r.weights[3], 0.0);
  EXPECT_NEAR(r.weights[0] + r.weights[2], 1.0, 1e-15);
  EXPECT_GT(r.weights[2], r.weights[0]);
}

TEST(AttentionWeights, AllInvalidIsUniformWithFlag) {
  EpipolarKeys keys(2, 4);
  const auto r = attention_weights(std::vector<double>{1.0, 1.0}, keys);
  EXPECT_TRUE(r.all_invalid);
  for (double w : r.weights) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(AttentionWeights, RejectsBadArguments) {
  EpipolarKeys keys(2, 4);
  EXPECT_THROW(attention_weights(std::vector<double>{1.0, 1.0}, keys, 0.0), ConfigError);
  EXPECT_THROW(attention_weights(std::vector<double>{1.0}, keys), UsageError);
}

TEST(AttentionWeights, SimplexProperty) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const auto keys = random_keys(rng, 8, 16, 0.3);
    const auto q = random_vector(rng, 8);
    const auto r = attention_weights(q, keys);
    double sum = 0.0;
    for (double w : r.weights) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(AttentionWeights, ArgmaxInvariantUnderQueryScaling) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> lambda(0.01, 100.0);
  for (int trial = 0; trial < 500; ++trial) {
    const auto keys = random_keys(rng, 8, 8, 0.2);
    auto q = random_vector(rng, 8);
    const auto a = attention_weights(q, keys).weights;
    const double s = lambda(rng);
    for (double& v : q) v *= s;
    const auto b = attention_weights(q, keys).weights;
    EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(),
              std::max_element(b.begin(), b.end()) - b.begin());
  }
}

TEST(GroupCorrelation, SingleGroupIsInnerProduct) {
  std::mt19937_64 rng(3);
  const auto keys = random_keys(rng, 6, 3);
  const auto q = random_vector(rng, 6);
  const auto s = group_correlation(q, keys, 1);
  for (int d = 0; d < 3; ++d) {
    double dot = 0.0;
    for (int c = 0; c < 6; ++c) dot += keys.column(d)[c] * q[c];
    EXPECT_NEAR(s[d], dot, 1e-12);
  }
}

TEST(GroupCorrelation, HandComputedExample) {
  EpipolarKeys keys(4, 1);
  keys.valid = {1};
  keys.data = {1, 2, 3, 4};
  const auto s = group_correlation(std::vector<double>{1, 1, 1, 1}, keys, 2);
  EXPECT_DOUBLE_EQ(s[0], 1.5);
  EXPECT_DOUBLE_EQ(s[1], 3.5);
}

TEST(GroupCorrelation, ZeroQueryAndInvalidBinsGiveZeros) {
  std::mt19937_64 rng(4);
  auto keys = random_keys(rng, 8, 4);
  for (double v : group_correlation(std::vector<double>(8, 0.0), keys, 4)) EXPECT_EQ(v, 0.0);
  keys.valid[2] = 0;
  const auto s = group_correlation(random_vector(rng, 8), keys, 2);
  EXPECT_EQ(s[0 * 4 + 2], 0.0);
  EXPECT_EQ(s[1 * 4 + 2], 0.0);
}

TEST(GroupCorrelation, RejectsNonDivisorGroups) {
  EpipolarKeys keys(8, 2);
  EXPECT_THROW(group_correlation(std::vector<double>(8, 1.0), keys, 3), ConfigError);
  EXPECT_THROW(group_correlation(std::vector<double>(8, 1.0), keys, 0), ConfigError);
}

TEST(GroupCorrelation, BruteForceOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> uc(1, 8), ud(1, 4);
  for (int trial = 0; trial < 500; ++trial) {
    const int C = uc(rng), D = ud(rng);
    std::vector<int> divisors;
    for (int g = 1; g <= C; ++g) {
      if (C % g == 0) divisors.push_back(g);
    }
    const int G = divisors[std::uniform_int_distribution<int>(0, divisors.size() - 1)(rng)];
    const auto keys = random_keys(rng, C, D, 0.2);
    const auto q = random_vector(rng, C);
    const auto s = group_correlation(q, keys, G);
    const int per = C / G;
    for (int g = 0; g < G; ++g) {
      for (int d = 0; d < D; ++d) {
        double acc = 0.0;
        if (keys.valid[d]) {
          for (int i = 0; i < per; ++i) acc += keys.data[d * C + g * per + i] * q[g * per + i];
        }
        EXPECT_NEAR(s[g * D + d], acc / G, 1e-12);
      }
    }
  }
}

TEST(FuseViews, SingleViewIsIdentity) {
  const std::vector<std::vector<double>> values{{1.0, -2.0, 3.0, 4.5}};
  const std::vector<std::vector<double>> weights{{0.3, 0.7}};
  const FusedCost f = fuse_views(values, weights, 2);
  EXPECT_EQ(f.cost, values[0]);
}

TEST(FuseViews, WeightedMeanByHand) {
  const std::vector<std::vector<double>> values{{2.0}, {6.0}};
  const std::vector<std::vector<double>> weights{{0.25}, {0.75}};
  EXPECT_DOUBLE_EQ(fuse_views(values, weights, 1).cost[0], 5.0);
  const std::vector<std::vector<double>> equal{{0.4}, {0.4}};
  EXPECT_DOUBLE_EQ(fuse_views(values, equal, 1).cost[0], 4.0);
}

TEST(FuseViews, UnsupportedBinIsZeroAndFlagged) {
  const std::vector<std::vector<double>> values{{1.0, 2.0}, {3.0, 4.0}};
  const std::vector<std::vector<double>> weights{{0.0, 0.5}, {0.0, 0.5}};
  const FusedCost f = fuse_views(values, weights, 1);
  EXPECT_EQ(f.supported[0], 0);
  EXPECT_EQ(f.cost[0], 0.0);
  EXPECT_EQ(f.supported[1], 1);
  EXPECT_DOUBLE_EQ(f.cost[1], 3.0);
}

TEST(FuseViews, RejectsEmptyAndMismatchedInput) {
  const std::vector<std::vector<double>> none;
  EXPECT_THROW(fuse_views(none, none, 1), UsageError);
  const std::vector<std::vector<double>> values{{1.0, 2.0}};
  const std::vector<std::vector<double>> weights{{1.0}, {1.0}};
  EXPECT_THROW(fuse_views(values, weights, 1), UsageError);
}

TEST(FuseViews, ConvexCombinationBound) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int views = 1 + trial % 5, G = 4, D = 8;
    std::vector<std::vector<double>> values, weights;
    for (int i = 0; i < views; ++i) {
      values.push_back(random_vector(rng, G * D));
      std::vector<double> w(D);
      for (double& x : w) x = u(rng) < 0.2 ? 0.0 : u(rng);
      weights.push_back(w);
    }
    const FusedCost f = fuse_views(values, weights, G);
    for (int g = 0; g < G; ++g) {
      for (int d = 0; d < D; ++d) {
        if (!f.supported[d]) continue;
        double lo = INFINITY, hi = -INFINITY;
        for (int i = 0; i < views; ++i) {
          if (weights[i][d] <= 0.0) continue;
          lo = std::min(lo, values[i][g * D + d]);
          hi = std::max(hi, values[i][g * D + d]);
        }
        const double c = f.cost[g * D + d];
        EXPECT_GE(c, lo - 1e-12);
        EXPECT_LE(c, hi + 1e-12);
      }
    }
  }
}

TEST(VarianceFusion, IdenticalVolumesGiveZero) {
  std::mt19937_64 rng(7);
  const auto k = random_keys(rng, 4, 3);
  const std::vector<EpipolarKeys> vols{k, k, k};
  for (double v : variance_fusion(vols)) EXPECT_EQ(v, 0.0);
}

TEST(VarianceFusion, TwoScalarsByHand) {
  EpipolarKeys a(1, 1), b(1, 1);
  a.data = {1.0};
  b.data = {3.0};
  const std::vector<EpipolarKeys> vols{a, b};
  EXPECT_DOUBLE_EQ(variance_fusion(vols)[0], 1.0);
}

TEST(VarianceFusion, TranslationInvariant) {
  std::mt19937_64 rng(8);
  std::vector<EpipolarKeys> vols{random_keys(rng, 4, 3), random_keys(rng, 4, 3),
                                 random_keys(rng, 4, 3)};
  const auto before = variance_fusion(vols);
  for (auto& v : vols) {
    for (double& x : v.data) x += 7.25;
  }
  const auto after = variance_fusion(vols);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-12);
}

TEST(VarianceFusion, NeedsTwoVolumes) {
  const std::vector<EpipolarKeys> one{EpipolarKeys(2, 2)};
  EXPECT_THROW(variance_fusion(one), UsageError);
}

TEST(MaskedVariance, MatchesVarianceWhenAllValid) {
  std::mt19937_64 rng(9);
  const int C = 4, D = 5;
  const auto q = random_vector(rng, C);
  const std::vector<EpipolarKeys> sources{random_keys(rng, C, D), random_keys(rng, C, D)};
  std::vector<double> out(C * D);
  std::vector<std::uint8_t> supported(D);
  masked_variance(q, sources, out, supported);
  const std::vector<EpipolarKeys> vols{broadcast_reference(q, D), sources[0], sources[1]};
  const auto expected = variance_fusion(vols);
  for (int i = 0; i < C * D; ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
  for (auto s : supported) EXPECT_EQ(s, 1);
}

TEST(MaskedVariance, BinsWithoutSourcesAreUnsupported) {
  const std::vector<double> q{1.0};
  EpipolarKeys s(1, 2);
  s.valid = {0, 1};
  s.data = {100.0, 3.0};
  const std::vector<EpipolarKeys> sources{s};
  std::vector<double> out(2);
  std::vector<std::uint8_t> supported(2);
  masked_variance(q, sources, out, supported);
  EXPECT_EQ(supported[0], 0);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 1.0);
}

}  // namespace
}  // namespace mvster
