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

#include "mvster/core_geometry.hpp"
#include "mvster/ot_depth.hpp"

namespace mvster {
namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, int n, double zero_rate = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> m(n);
  double total = 0.0;
  for (double& v : m) {
    v = u(rng) < zero_rate ? 0.0 : -std::log(1.0 - u(rng));
    total += v;
  }
  if (total == 0.0) {
    m[0] = 1.0;
    return m;
  }
  for (double& v : m) v /= total;
  return m;
}

std::vector<double> dtu_bins(int n) { return inverse_depth_samples({425.0, 935.0}, n); }

// Exact 1-D transport by the monotone (north-west corner) coupling of the
// sorted supports, an independent route to W1.
double monotone_coupling_w1(const std::vector<double>& bins, std::vector<double> p,
                            std::vector<double> q) {
  std::size_t i = 0, j = 0;
  double cost = 0.0;
  while (i < p.size() && j < q.size()) {
    const double m = std::min(p[i], q[j]);
    cost += m * std::abs(bins[i] - bins[j]);
    p[i] -= m;
    q[j] -= m;
    if (p[i] <= 1e-15) ++i;
    if (q[j] <= 1e-15) ++j;
  }
  return cost;
}

SinkhornOptions options_for(const DepthDistribution& p, double rel_eps = 0.01) {
  SinkhornOptions opt;
  opt.epsilon = rel_eps * p.span();
  return opt;
}

TEST(GtDistribution, OnBinIsOneHot) {
  const std::vector<double> bins{1.0, 2.0, 3.0};
  const auto q = gt_distribution(2.0, bins);
  ASSERT_TRUE(q);
  EXPECT_EQ(q->mass, (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(GtDistribution, LinearInterpolationByHand) {
  const std::vector<double> bins{1.0, 2.0};
  const auto q = gt_distribution(1.25, bins);
  ASSERT_TRUE(q);
  EXPECT_DOUBLE_EQ(q->mass[0], 0.75);
  EXPECT_DOUBLE_EQ(q->mass[1], 0.25);
}

TEST(GtDistribution, OutsideBinsClampsToEnds) {
  const std::vector<double> bins{1.0, 2.0, 4.0};
  EXPECT_EQ(gt_distribution(0.5, bins)->mass, (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(gt_distribution(9.0, bins)->mass, (std::vector<double>{0, 0, 1}));
}

TEST(GtDistribution, NonFiniteIsInvalidAndBadBinsThrow) {
  const std::vector<double> bins{1.0, 2.0};
  EXPECT_FALSE(gt_distribution(NAN, bins));
  EXPECT_FALSE(gt_distribution(INFINITY, bins));
  const std::vector<double> unsorted{2.0, 1.0};
  EXPECT_THROW(gt_distribution(1.5, unsorted), UsageError);
}

TEST(GtDistribution, PreservesExpectedDepth) {
  std::mt19937_64 rng(1);
  const auto bins = dtu_bins(8);
  std::uniform_real_distribution<double> u(425.0, 935.0);
  for (int i = 0; i < 200; ++i) {
    const double gt = u(rng);
    const auto q = gt_distribution(gt, bins);
    double mean = 0.0;
    for (int j = 0; j < 8; ++j) mean += q->mass[j] * bins[j];
    EXPECT_NEAR(mean, gt, 1e-9);
    q->validate();
  }
}

TEST(W1ClosedForm, IdenticalIsZero) {
  std::mt19937_64 rng(2);
  const DepthDistribution p{dtu_bins(8), random_simplex(rng, 8)};
  EXPECT_EQ(w1_closed_form(p, p), 0.0);
}

TEST(W1ClosedForm, PointMassesAreBinGap) {
  const auto bins = dtu_bins(6);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      DepthDistribution p{bins, std::vector<double>(6, 0.0)}, q = p;
      p.mass[i] = 1.0;
      q.mass[j] = 1.0;
      EXPECT_NEAR(w1_closed_form(p, q), std::abs(bins[i] - bins[j]), 1e-12);
    }
  }
}

TEST(W1ClosedForm, HandComputedExample) {
  const DepthDistribution p{{0, 1, 3}, {1, 0, 0}};
  const DepthDistribution q{{0, 1, 3}, {0, 0.5, 0.5}};
  EXPECT_DOUBLE_EQ(w1_closed_form(p, q), 2.0);
  EXPECT_DOUBLE_EQ(monotone_coupling_w1(p.bins, p.mass, q.mass), 2.0);
}

TEST(W1ClosedForm, MatchesMonotoneCoupling) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const int D = 2 + trial % 15;
    const auto bins = dtu_bins(D);
    const DepthDistribution p{bins, random_simplex(rng, D, 0.3)};
    const DepthDistribution q{bins, random_simplex(rng, D, 0.3)};
    EXPECT_NEAR(w1_closed_form(p, q), monotone_coupling_w1(bins, p.mass, q.mass), 1e-9);
  }
}

TEST(W1ClosedForm, SymmetricAndTriangle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const int D = 2 + trial % 7;
    const auto bins = dtu_bins(D);
    const DepthDistribution a{bins, random_simplex(rng, D)};
    const DepthDistribution b{bins, random_simplex(rng, D)};
    const DepthDistribution c{bins, random_simplex(rng, D)};
    EXPECT_NEAR(w1_closed_form(a, b), w1_closed_form(b, a), 1e-12);
    EXPECT_LE(w1_closed_form(a, c), w1_closed_form(a, b) + w1_closed_form(b, c) + 1e-9);
  }
}

TEST(W1ClosedForm, MismatchedBinsThrow) {
  const DepthDistribution p{{1, 2}, {1, 0}};
  const DepthDistribution q{{1, 3}, {1, 0}};
  EXPECT_THROW(w1_closed_form(p, q), UsageError);
}

TEST(Sinkhorn, IdenticalPointMassesHaveZeroCost) {
  const auto bins = dtu_bins(8);
  DepthDistribution p{bins, std::vector<double>(8, 0.0)};
  p.mass[3] = 1.0;
  const SinkhornResult r = sinkhorn_w1(p, p, options_for(p));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.distance, 0.0, 1e-12);
  EXPECT_NEAR(r.plan[3 * 8 + 3], 1.0, 1e-12);
}

TEST(Sinkhorn, AgreesWithClosedFormOnDtuBins) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto bins = dtu_bins(16);
    const DepthDistribution p{bins, random_simplex(rng, 16)};
    const DepthDistribution q{bins, random_simplex(rng, 16)};
    const SinkhornResult r = sinkhorn_w1(p, q, options_for(p));
    ASSERT_TRUE(r.converged);
    EXPECT_LE(std::abs(r.distance - w1_closed_form(p, q)), 1e-3 * p.span());
  }
}

TEST(Sinkhorn, MarginalsWithinTolerance) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int D = 2 + trial % 15;
    const auto bins = dtu_bins(D);
    const DepthDistribution p{bins, random_simplex(rng, D, 0.2)};
    const DepthDistribution q{bins, random_simplex(rng, D, 0.2)};
    SinkhornOptions opt = options_for(p);
    opt.tolerance = 1e-9;
    const SinkhornResult r = sinkhorn_w1(p, q, opt);
    ASSERT_TRUE(r.converged);
    double row = 0.0, col = 0.0;
    for (int i = 0; i < D; ++i) {
      double rs = 0.0, cs = 0.0;
      for (int j = 0; j < D; ++j) {
        EXPECT_GE(r.plan[i * D + j], 0.0);
        rs += r.plan[i * D + j];
        cs += r.plan[j * D + i];
      }
      row += std::abs(rs - q.mass[i]);
      col += std::abs(cs - p.mass[i]);
    }
    EXPECT_LE(row, opt.tolerance + 1e-12);
    EXPECT_LE(col, opt.tolerance + 1e-12);
  }
}

TEST(Sinkhorn, CostDecreasesTowardClosedFormAsEpsilonShrinks) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto bins = dtu_bins(12);
    const DepthDistribution p{bins, random_simplex(rng, 12)};
    const DepthDistribution q{bins, random_simplex(rng, 12)};
    const double exact = w1_closed_form(p, q);
    double previous = INFINITY;
    for (double rel : {0.5, 0.2, 0.1, 0.05, 0.02, 0.01}) {
      SinkhornOptions opt = options_for(p, rel);
      opt.tolerance = 1e-12;
      const SinkhornResult r = sinkhorn_w1(p, q, opt);
      ASSERT_TRUE(r.converged);
      EXPECT_LE(r.distance, previous + 1e-9);
      EXPECT_GE(r.distance, exact - 1e-9);
      previous = r.distance;
    }
  }
}

TEST(Sinkhorn, ConfigurationAndConvergenceFlags) {
  const DepthDistribution p{{1, 2, 3}, {0.2, 0.3, 0.5}};
  const DepthDistribution q{{1, 2, 3}, {0.6, 0.3, 0.1}};
  SinkhornOptions opt;
  opt.epsilon = 0.0;
  EXPECT_THROW(sinkhorn_w1(p, q, opt), ConfigError);
  opt.epsilon = 1e-3;
  opt.max_iterations = 2;
  const SinkhornResult r = sinkhorn_w1(p, q, opt);
  EXPECT_FALSE(r.converged);
  EXPECT_TRUE(std::isfinite(r.distance));
}

TEST(OtLossGradient, VanishesAtTarget) {
  std::mt19937_64 rng(8);
  const auto bins = dtu_bins(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mass = random_simplex(rng, 8);
    std::vector<double> logits(8);
    for (int j = 0; j < 8; ++j) logits[j] = std::log(mass[j]);
    const DepthDistribution q{bins, softmax(logits)};
    SinkhornOptions opt = options_for(q);
    opt.tolerance = 1e-13;
    const OtGradient g = ot_loss_gradient(logits, q, opt);
    ASSERT_TRUE(g.converged);
    double mean = 0.0, inf = 0.0;
    for (double v : g.grad_mass) {
      mean += v;
      inf = std::max(inf, std::abs(v));
    }
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_LE(inf, 1e-6);
    EXPECT_NEAR(g.value, 0.0, 1e-6);
  }
}

TEST(OtLossGradient, InvariantToLogitShift) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto bins = dtu_bins(8);
  const DepthDistribution q = *gt_distribution(612.0, bins);
  SinkhornOptions opt = options_for(q);
  opt.tolerance = 1e-13;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> z(8);
    for (double& v : z) v = n(rng);
    std::vector<double> shifted = z;
    for (double& v : shifted) v += 3.75;
    const OtGradient a = ot_loss_gradient(z, q, opt);
    const OtGradient b = ot_loss_gradient(shifted, q, opt);
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(a.grad_logits[j], b.grad_logits[j], 1e-10);
  }
}

TEST(OtLossGradient, MatchesCentralDifferences) {
  const GradcheckReport r = gradcheck_suite(25, 99);
  EXPECT_EQ(r.instances, 25);
  EXPECT_EQ(r.non_converged, 0);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(CrossEntropy, OneHotMatchIsZero) {
  const DepthDistribution p{{1, 2, 3}, {0, 1, 0}};
  EXPECT_EQ(cross_entropy_loss(p, p), 0.0);
}

// GT one-hot at bin 2 of 8; both predictions keep 0.4 on the GT bin and
// move the remaining 0.6 to an adjacent (case 2) or far (case 1) bin.
TEST(CrossEntropy, EqualForBothCasesWhileW1Orders) {
  const auto bins = dtu_bins(8);
  DepthDistribution gt{bins, std::vector<double>(8, 0.0)};
  gt.mass[2] = 1.0;
  DepthDistribution case1 = gt, case2 = gt;
  case1.mass = {0, 0, 0.4, 0, 0, 0, 0, 0.6};
  case2.mass = {0, 0, 0.4, 0.6, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(cross_entropy_loss(case1, gt), cross_entropy_loss(case2, gt));
  EXPECT_GT(w1_closed_form(case1, gt), w1_closed_form(case2, gt));
  const auto s1 = sinkhorn_w1(case1, gt, options_for(gt));
  const auto s2 = sinkhorn_w1(case2, gt, options_for(gt));
  EXPECT_GT(s1.distance, s2.distance);
}

TEST(CrossEntropy, DistanceAwarenessProperty) {
  const auto bins = dtu_bins(8);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int g = 0; g < 8; ++g) {
    DepthDistribution gt{bins, std::vector<double>(8, 0.0)};
    gt.mass[g] = 1.0;
    const double keep = u(rng);
    double previous_w1 = -1.0, ce = NAN;
    // Place the remaining mass k bins away, k growing, on one side.
    const int dir = g < 4 ? 1 : -1;
    for (int k = 1; g + dir * k >= 0 && g + dir * k < 8; ++k) {
      DepthDistribution p{bins, std::vector<double>(8, 0.0)};
      p.mass[g] = keep;
      p.mass[g + dir * k] = 1.0 - keep;
      const double w1 = w1_closed_form(p, gt);
      EXPECT_GT(w1, previous_w1);
      const double c = cross_entropy_loss(p, gt);
      if (!std::isnan(ce)) EXPECT_DOUBLE_EQ(c, ce);
      ce = c;
      previous_w1 = w1;
    }
  }
}

TEST(L1DepthLoss, HandExample) { EXPECT_DOUBLE_EQ(l1_depth_loss(5.0, 3.5), 1.5); }

class TotalLossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    hyps = init_inverse_depth_hypotheses({425, 935}, 8, 2, 2);
    pv.height = pv.width = 2;
    pv.depth = 8;
    pv.prob.assign(32, 0.0);
    std::mt19937_64 rng(11);
    for (int p = 0; p < 4; ++p) {
      const auto m = random_simplex(rng, 8);
      std::copy(m.begin(), m.end(), pv.prob.begin() + p * 8);
    }
    gt = Grid<double>(2, 2, 1, 600.0);
    gt.at(1, 0) = 800.0;
    valid = Grid<unsigned char>(2, 2, 1, 1);
    valid.at(1, 1) = 0;
  }

  double direct_ot_sum() const {
    double sum = 0.0;
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) {
        if (!valid.at(y, x)) continue;
        const auto bins = hyps.at(y, x);
        const auto q = *gt_distribution(gt.at(y, x), bins);
        const auto prob = pv.at(y, x);
        const DepthDistribution p{q.bins, std::vector<double>(prob.begin(), prob.end())};
        sum += sinkhorn_w1(p, q, options_for(p)).distance;
      }
    }
    return sum;
  }

  DepthHypothesisSet hyps;
  ProbabilityVolume pv;
  Grid<double> gt;
  Grid<unsigned char> valid;
};

TEST_F(TotalLossTest, DefaultMonoWeight) { EXPECT_EQ(kDefaultMonoWeight, 0.0003); }

TEST_F(TotalLossTest, WithoutMonoIsPureTransportSum) {
  const StageLossInput s{&pv, &hyps, &gt, &valid, nullptr};
  const TotalLoss l = total_loss(std::span(&s, 1));
  EXPECT_EQ(l.valid_pixels, 3);
  EXPECT_FALSE(l.empty);
  EXPECT_TRUE(l.converged);
  EXPECT_NEAR(l.value, direct_ot_sum(), 1e-12);
}

TEST_F(TotalLossTest, MonoTermAddsWeightedL1) {
  Grid<double> mono(2, 2, 1, 610.0);
  const StageLossInput s{&pv, &hyps, &gt, &valid, &mono};
  const TotalLoss l = total_loss(std::span(&s, 1));
  const double l1 = 10.0 + 10.0 + 190.0;
  EXPECT_NEAR(l.value, direct_ot_sum() + 3e-4 * l1, 1e-12);
}

TEST_F(TotalLossTest, MatchingOneHotIsZero) {
  DepthHypothesisSet one = init_inverse_depth_hypotheses({425, 935}, 8, 1, 1);
  ProbabilityVolume p;
  p.height = p.width = 1;
  p.depth = 8;
  p.prob.assign(8, 0.0);
  p.prob[5] = 1.0;
  Grid<double> g(1, 1, 1, one.values[5]);
  Grid<unsigned char> v(1, 1, 1, 1);
  const StageLossInput s{&p, &one, &g, &v, nullptr};
  EXPECT_NEAR(total_loss(std::span(&s, 1)).value, 0.0, 1e-12);
}

TEST_F(TotalLossTest, EmptyValidSetIsFlagged) {
  valid = Grid<unsigned char>(2, 2, 1, 0);
  const StageLossInput s{&pv, &hyps, &gt, &valid, nullptr};
  const TotalLoss l = total_loss(std::span(&s, 1));
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(l.value, 0.0);
}

TEST_F(TotalLossTest, MisalignedInputsThrow) {
  Grid<double> small(1, 2, 1, 600.0);
  const StageLossInput s{&pv, &hyps, &small, &valid, nullptr};
  EXPECT_THROW(total_loss(std::span(&s, 1)), UsageError);
}

}  // namespace
}  // namespace mvster
