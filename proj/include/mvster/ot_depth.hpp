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

#ifndef MVSTER_OT_DEPTH_HPP
#define MVSTER_OT_DEPTH_HPP

// Depth-aware classification losses over per-pixel depth distributions.
//
// The Wasserstein-1 distance between a predicted distribution P and a
// ground-truth distribution Q on the same depth bins is evaluated exactly in
// closed form (integrated CDF difference) and approximately with a
// log-domain, epsilon-annealed Sinkhorn solver. The solver regularises with
// KL(gamma | Q x P), so the transport plan is
//
//   gamma[x][y] = Q[x] P[y] exp((f[x] + g[y] - |b_x - b_y|) / eps)
//
// with row marginals Q and column marginals P.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvster/core_geometry.hpp"
#include "mvster/errors.hpp"
#include "mvster/grid.hpp"
#include "mvster/regularizer.hpp"

namespace mvster {

struct DepthDistribution {
  std::vector<double> bins;  // strictly increasing depths
  std::vector<double> mass;  // on the simplex

  int size() const { return static_cast<int>(bins.size()); }
  double span() const { return bins.back() - bins.front(); }

  void validate(double tol = 1e-9) const {
    if (bins.empty() || bins.size() != mass.size()) {
      throw UsageError("depth distribution: bins/mass size mismatch");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < bins.size(); ++j) {
      if (j > 0 && !(bins[j] > bins[j - 1])) {
        throw UsageError("depth distribution: bins must be strictly increasing");
      }
      if (!(mass[j] >= 0.0)) throw UsageError("depth distribution: negative mass");
      total += mass[j];
    }
    if (std::abs(total - 1.0) > tol) {
      throw UsageError("depth distribution: mass sums to " + std::to_string(total));
    }
  }
};

// Two-bin linear interpolation of a ground-truth depth; depths outside the
// bins collapse onto the nearest end bin. Non-finite depths yield nullopt.
inline std::optional<DepthDistribution> gt_distribution(double gt_depth,
                                                        std::span<const double> bins) {
  if (!std::isfinite(gt_depth)) return std::nullopt;
  for (std::size_t j = 1; j < bins.size(); ++j) {
    if (!(bins[j] > bins[j - 1])) {
      throw UsageError("gt_distribution: bins must be strictly increasing");
    }
  }
  DepthDistribution q{std::vector<double>(bins.begin(), bins.end()),
                      std::vector<double>(bins.size(), 0.0)};
  const int D = static_cast<int>(bins.size());
  if (gt_depth <= bins.front()) {
    q.mass.front() = 1.0;
  } else if (gt_depth >= bins.back()) {
    q.mass.back() = 1.0;
  } else {
    const int hi = static_cast<int>(std::upper_bound(bins.begin(), bins.end(), gt_depth) - bins.begin());
    const int lo = hi - 1;
    const double t = (gt_depth - bins[lo]) / (bins[hi] - bins[lo]);
    q.mass[lo] = 1.0 - t;
    if (hi < D) q.mass[hi] = t;
  }
  return q;
}

inline void check_same_bins(const DepthDistribution& p, const DepthDistribution& q) {
  if (p.bins != q.bins) throw UsageError("distributions are defined on different bins");
}

// Exact 1-D Wasserstein-1 distance: sum_j |CDF_P(j) - CDF_Q(j)| (b_{j+1} - b_j).
inline double w1_closed_form(const DepthDistribution& p, const DepthDistribution& q) {
  check_same_bins(p, q);
  double cdf_p = 0.0, cdf_q = 0.0, out = 0.0;
  for (int j = 0; j + 1 < p.size(); ++j) {
    cdf_p += p.mass[j];
    cdf_q += q.mass[j];
    out += std::abs(cdf_p - cdf_q) * (p.bins[j + 1] - p.bins[j]);
  }
  return out;
}

struct SinkhornOptions {
  double epsilon = 0.0;       // target regularisation (depth units), > 0
  int max_iterations = 200000;  // total over all annealing levels
  double tolerance = 1e-9;     // L1 violation of the row marginal
  double anneal_factor = 0.5;  // geometric schedule from the bin span down to epsilon
};

struct SinkhornResult {
  double distance = 0.0;   // sum gamma * cost (entropy term excluded)
  double objective = 0.0;  // entropic dual objective
  std::vector<double> plan;  // plan[x * D + y], rows follow Q, columns follow P
  std::vector<double> potential_q;  // f, paired with Q
  std::vector<double> potential_p;  // g, paired with P
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : v) peak = std::max(peak, x);
  if (peak == -std::numeric_limits<double>::infinity()) return peak;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - peak);
  return peak + std::log(acc);
}

inline double safe_log(double v) {
  return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

inline SinkhornResult sinkhorn_self(const DepthDistribution& p, const SinkhornOptions& opt);

// Entropic optimal transport between P and Q on shared bins with ground
// cost |x - y|. Identical marginals are handed to sinkhorn_self, since
// alternating updates stall on them.
//
// Log-stabilised scaling iterations: the potentials (f, g) are kept in the
// log domain and absorbed into the Gibbs kernel whenever the multiplicative
// scalings (u, v) drift beyond exp(+-kAbsorbThreshold), and at every change
// of epsilon. Epsilon is annealed geometrically from the bin span down to the
// target with warm-started potentials.
inline SinkhornResult sinkhorn_w1(const DepthDistribution& p, const DepthDistribution& q,
                                  const SinkhornOptions& opt) {
  constexpr double kAbsorbThreshold = 30.0;
  if (!(opt.epsilon > 0.0)) throw ConfigError("sinkhorn: epsilon must be positive");
  if (!(opt.anneal_factor > 0.0 && opt.anneal_factor < 1.0)) {
    throw ConfigError("sinkhorn: anneal factor must lie in (0, 1)");
  }
  check_same_bins(p, q);
  if (p.mass == q.mass) return sinkhorn_self(p, opt);
  const int D = p.size();
  const std::size_t DD = static_cast<std::size_t>(D) * D;
  std::vector<double> cost(DD);
  for (int x = 0; x < D; ++x) {
    for (int y = 0; y < D; ++y) cost[x * D + y] = std::abs(p.bins[x] - p.bins[y]);
  }
  SinkhornResult r;
  auto& F = r.potential_q;
  auto& G = r.potential_p;
  F.assign(D, 0.0);
  G.assign(D, 0.0);
  std::vector<double> u(D, 1.0), v(D, 1.0), kernel(DD), kv(D), scratch(D);

  // Exact log-domain half-steps, used when the kernel underflows a whole row
  // or column.
  auto log_update_f = [&](double eps) {
    for (int x = 0; x < D; ++x) {
      for (int y = 0; y < D; ++y) {
        scratch[y] = detail::safe_log(p.mass[y]) + (G[y] - cost[x * D + y]) / eps;
      }
      F[x] = -eps * detail::log_sum_exp(scratch);
    }
  };
  auto log_update_g = [&](double eps) {
    for (int y = 0; y < D; ++y) {
      for (int x = 0; x < D; ++x) {
        scratch[x] = detail::safe_log(q.mass[x]) + (F[x] - cost[x * D + y]) / eps;
      }
      G[y] = -eps * detail::log_sum_exp(scratch);
    }
  };
  auto absorb = [&](double eps) {
    for (int j = 0; j < D; ++j) {
      F[j] += eps * std::log(u[j]);
      G[j] += eps * std::log(v[j]);
      u[j] = v[j] = 1.0;
    }
  };
  auto build_kernel = [&](double eps) {
    for (int x = 0; x < D; ++x) {
      for (int y = 0; y < D; ++y) {
        kernel[x * D + y] =
            (q.mass[x] > 0.0 && p.mass[y] > 0.0)
                ? q.mass[x] * p.mass[y] * std::exp((F[x] + G[y] - cost[x * D + y]) / eps)
                : 0.0;
      }
    }
  };

  double eps = std::max(opt.epsilon, p.span());
  int used = 0;
  while (true) {
    const bool final_level = eps <= opt.epsilon;
    const double level_tol = final_level ? opt.tolerance : std::max(opt.tolerance, 1e-3);
    bool level_done = false;
    bool have_v = false;
    log_update_f(eps);
    log_update_g(eps);
    build_kernel(eps);
    while (used < opt.max_iterations) {
      bool degenerate = false;
      for (int x = 0; x < D; ++x) {
        double acc = 0.0;
        for (int y = 0; y < D; ++y) acc += kernel[x * D + y] * v[y];
        kv[x] = acc;
        if (q.mass[x] > 0.0 && !(acc > 0.0 && std::isfinite(acc))) degenerate = true;
      }
      if (degenerate) {
        absorb(eps);
        log_update_f(eps);
        log_update_g(eps);
        build_kernel(eps);
        have_v = false;
        ++used;
        continue;
      }
      if (have_v) {
        // Row sums of the current plan are u[x] * kv[x].
        double res = 0.0;
        for (int x = 0; x < D; ++x) {
          if (q.mass[x] > 0.0) res += std::abs(u[x] * kv[x] - q.mass[x]);
        }
        r.residual = res;
        if (res <= level_tol) {
          level_done = true;
          break;
        }
      }
      for (int x = 0; x < D; ++x) {
        if (q.mass[x] > 0.0) u[x] = q.mass[x] / kv[x];
      }
      bool col_degenerate = false;
      for (int y = 0; y < D; ++y) {
        if (p.mass[y] == 0.0) continue;
        double acc = 0.0;
        for (int x = 0; x < D; ++x) acc += kernel[x * D + y] * u[x];
        if (!(acc > 0.0 && std::isfinite(acc))) {
          col_degenerate = true;
          break;
        }
        v[y] = p.mass[y] / acc;
      }
      ++used;
      if (col_degenerate) {
        absorb(eps);
        log_update_g(eps);
        build_kernel(eps);
        have_v = false;
        continue;
      }
      have_v = true;
      double drift = 0.0;
      for (int j = 0; j < D; ++j) {
        drift = std::max({drift, std::abs(std::log(u[j])), std::abs(std::log(v[j]))});
      }
      if (drift > kAbsorbThreshold) {
        absorb(eps);
        build_kernel(eps);
      }
    }
    absorb(eps);
    if (final_level) {
      r.converged = level_done;
      break;
    }
    if (!level_done) break;  // budget exhausted before the target epsilon
    eps = std::max(opt.epsilon, eps * opt.anneal_factor);
  }
  r.iterations = used;

  r.plan.assign(DD, 0.0);
  double plan_mass = 0.0;
  for (int x = 0; x < D; ++x) {
    for (int y = 0; y < D; ++y) {
      if (q.mass[x] == 0.0 || p.mass[y] == 0.0) continue;
      const double val =
          q.mass[x] * p.mass[y] * std::exp((F[x] + G[y] - cost[x * D + y]) / eps);
      r.plan[x * D + y] = val;
      r.distance += val * cost[x * D + y];
      plan_mass += val;
    }
  }
  double dual = -eps * (plan_mass - 1.0);
  for (int j = 0; j < D; ++j) {
    if (q.mass[j] > 0.0) dual += F[j] * q.mass[j];
    if (p.mass[j] > 0.0) dual += G[j] * p.mass[j];
  }
  r.objective = dual;
  return r;
}

// Self-transport OT(P, P) via the symmetric averaged fixed point
//   f <- (f + T(f)) / 2,   T(f)[x] = -eps log sum_y P[y] exp((f[y] - c(x, y)) / eps),
// which converges in a few dozen steps where alternating updates oscillate.
// The single potential f plays the role of both f and g in SinkhornResult.
inline SinkhornResult sinkhorn_self(const DepthDistribution& p, const SinkhornOptions& opt) {
  if (!(opt.epsilon > 0.0)) throw ConfigError("sinkhorn: epsilon must be positive");
  const int D = p.size();
  std::vector<double> cost(static_cast<std::size_t>(D) * D), log_p(D), scratch(D), next(D);
  for (int x = 0; x < D; ++x) {
    log_p[x] = detail::safe_log(p.mass[x]);
    for (int y = 0; y < D; ++y) cost[x * D + y] = std::abs(p.bins[x] - p.bins[y]);
  }
  SinkhornResult r;
  std::vector<double> f(D, 0.0);
  auto transform = [&](double eps, std::vector<double>& out) {
    for (int x = 0; x < D; ++x) {
      for (int y = 0; y < D; ++y) scratch[y] = log_p[y] + (f[y] - cost[x * D + y]) / eps;
      out[x] = -eps * detail::log_sum_exp(scratch);
    }
  };
  double eps = std::max(opt.epsilon, p.span());
  int used = 0;
  while (true) {
    const bool final_level = eps <= opt.epsilon;
    const double level_tol = final_level ? opt.tolerance : std::max(opt.tolerance, 1e-3);
    bool level_done = false;
    while (used < opt.max_iterations) {
      transform(eps, next);
      ++used;
      // Row sums of the plan built from f are P[x] exp((f[x] - T(f)[x]) / eps).
      double res = 0.0;
      for (int x = 0; x < D; ++x) {
        if (p.mass[x] > 0.0) res += p.mass[x] * std::abs(std::expm1((f[x] - next[x]) / eps));
      }
      r.residual = res;
      if (res <= level_tol) {
        level_done = true;
        break;
      }
      for (int x = 0; x < D; ++x) f[x] = 0.5 * (f[x] + next[x]);
    }
    if (final_level) {
      r.converged = level_done;
      break;
    }
    if (!level_done) break;
    eps = std::max(opt.epsilon, eps * opt.anneal_factor);
  }
  r.iterations = used;
  r.plan.assign(static_cast<std::size_t>(D) * D, 0.0);
  double plan_mass = 0.0;
  for (int x = 0; x < D; ++x) {
    for (int y = 0; y < D; ++y) {
      if (p.mass[x] == 0.0 || p.mass[y] == 0.0) continue;
      const double val = p.mass[x] * p.mass[y] * std::exp((f[x] + f[y] - cost[x * D + y]) / eps);
      r.plan[x * D + y] = val;
      r.distance += val * cost[x * D + y];
      plan_mass += val;
    }
  }
  double dual = -eps * (plan_mass - 1.0);
  for (int j = 0; j < D; ++j) {
    if (p.mass[j] > 0.0) dual += 2.0 * f[j] * p.mass[j];
  }
  r.objective = dual;
  r.potential_q = f;
  r.potential_p = f;
  return r;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - peak);
    total += out[j];
  }
  for (double& v : out) v /= total;
  return out;
}

struct OtGradient {
  double value = 0.0;               // debiased entropic divergence
  std::vector<double> grad_mass;    // d value / dP, centred
  std::vector<double> grad_logits;  // chained through the softmax
  bool converged = false;
};

// Debiased entropic divergence
//   S(P, Q) = OT(P, Q) - OT(P, P) / 2 - OT(Q, Q) / 2
// with P = softmax(logits). Its gradient in P is g_PQ - (f_PP + g_PP) / 2,
// read off the dual potentials (envelope theorem). S(P, P) = 0 and the
// gradient vanishes at P = Q.
inline OtGradient ot_loss_gradient(std::span<const double> logits,
                                   const DepthDistribution& q, const SinkhornOptions& opt) {
  if (static_cast<int>(logits.size()) != q.size()) {
    throw UsageError("ot_loss_gradient: logits/bins size mismatch");
  }
  const DepthDistribution p{q.bins, softmax(logits)};
  const SinkhornResult pq = sinkhorn_w1(p, q, opt);
  const SinkhornResult pp = sinkhorn_self(p, opt);
  const SinkhornResult qq = sinkhorn_self(q, opt);
  OtGradient out;
  out.converged = pq.converged && pp.converged && qq.converged;
  out.value = pq.objective - 0.5 * pp.objective - 0.5 * qq.objective;
  const int D = q.size();
  out.grad_mass.resize(D);
  double mean = 0.0;
  for (int j = 0; j < D; ++j) {
    out.grad_mass[j] = pq.potential_p[j] - 0.5 * (pp.potential_q[j] + pp.potential_p[j]);
    mean += out.grad_mass[j];
  }
  mean /= D;
  double expected = 0.0;
  for (int j = 0; j < D; ++j) {
    out.grad_mass[j] -= mean;
    expected += p.mass[j] * out.grad_mass[j];
  }
  out.grad_logits.resize(D);
  for (int j = 0; j < D; ++j) out.grad_logits[j] = p.mass[j] * (out.grad_mass[j] - expected);
  return out;
}

// Divergence value only, for finite-difference checks.
inline double ot_loss_value(std::span<const double> logits, const DepthDistribution& q,
                            const SinkhornOptions& opt) {
  const DepthDistribution p{q.bins, softmax(logits)};
  return sinkhorn_w1(p, q, opt).objective - 0.5 * sinkhorn_self(p, opt).objective -
         0.5 * sinkhorn_self(q, opt).objective;
}

// Sinkhorn epsilon for the loss, relative to the per-pixel bin span.
inline constexpr double kDefaultRelativeEpsilon = 0.01;

struct GradcheckReport {
  int instances = 0;
  double max_relative_error = 0.0;  // max |fd - analytic|_inf / |fd|_inf over instances
  int non_converged = 0;
};

// Analytic logit gradients of the divergence against central differences
// with step `h` on seeded instances: D inverse-depth bins over
// [d_min, d_max], a uniformly drawn ground-truth depth and standard normal
// logits.
inline GradcheckReport gradcheck_suite(int instances = 200, std::uint64_t seed = 7, int bins = 8,
                                       double h = 1e-5, double d_min = 425.0,
                                       double d_max = 935.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> b(bins);
  for (int j = 0; j < bins; ++j) {
    b[j] = 1.0 / (1.0 / d_max + (bins - 1 - j) / (bins - 1.0) * (1.0 / d_min - 1.0 / d_max));
  }
  SinkhornOptions opt;
  opt.epsilon = kDefaultRelativeEpsilon * (b.back() - b.front());
  opt.tolerance = 1e-13;
  opt.max_iterations = 1000000;
  GradcheckReport report;
  for (int t = 0; t < instances; ++t) {
    const DepthDistribution q = *gt_distribution(d_min + uniform(rng) * (d_max - d_min), b);
    std::vector<double> z(bins);
    for (double& v : z) v = normal(rng);
    const OtGradient g = ot_loss_gradient(z, q, opt);
    if (!g.converged) ++report.non_converged;
    double diff = 0.0, scale = 0.0;
    for (int k = 0; k < bins; ++k) {
      std::vector<double> zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      const double fd = (ot_loss_value(zp, q, opt) - ot_loss_value(zm, q, opt)) / (2.0 * h);
      diff = std::max(diff, std::abs(fd - g.grad_logits[k]));
      scale = std::max(scale, std::abs(fd));
    }
    report.max_relative_error = std::max(report.max_relative_error, scale > 0.0 ? diff / scale : diff);
    ++report.instances;
  }
  return report;
}

inline constexpr double kMinProbability = 1e-12;

inline double cross_entropy_loss(const DepthDistribution& p, const DepthDistribution& q) {
  check_same_bins(p, q);
  double out = 0.0;
  for (int j = 0; j < p.size(); ++j) {
    if (q.mass[j] > 0.0) out -= q.mass[j] * std::log(std::max(p.mass[j], kMinProbability));
  }
  return out;
}

inline double l1_depth_loss(double pred_depth, double gt_depth) {
  return std::abs(pred_depth - gt_depth);
}

inline constexpr double kDefaultMonoWeight = 3e-4;

struct StageLossInput {
  const ProbabilityVolume* prob = nullptr;
  const DepthHypothesisSet* hypotheses = nullptr;
  const Grid<double>* gt_depth = nullptr;
  const Grid<unsigned char>* valid = nullptr;
  const Grid<double>* mono_depth = nullptr;  // optional
};

struct TotalLoss {
  double value = 0.0;
  long long valid_pixels = 0;
  bool empty = false;       // no valid pixel anywhere; value is 0
  bool converged = true;    // every Sinkhorn solve converged
};

// Sum over stages and valid pixels of the Sinkhorn transport distance to
// the ground-truth distribution, plus lambda * |mono - gt| where a
// monocular depth map is supplied. Pixels are visited in row-major order.
inline TotalLoss total_loss(std::span<const StageLossInput> stages,
                            double mono_weight = kDefaultMonoWeight,
                            double relative_epsilon = kDefaultRelativeEpsilon) {
  TotalLoss out;
  for (const auto& s : stages) {
    if (!s.prob || !s.hypotheses || !s.gt_depth || !s.valid) {
      throw UsageError("total_loss: missing stage input");
    }
    const auto& pv = *s.prob;
    if (pv.height != s.gt_depth->height() || pv.width != s.gt_depth->width() ||
        pv.height != s.valid->height() || pv.width != s.valid->width() ||
        pv.height != s.hypotheses->height || pv.width != s.hypotheses->width ||
        pv.depth != s.hypotheses->count ||
        (s.mono_depth && (s.mono_depth->height() != pv.height ||
                          s.mono_depth->width() != pv.width))) {
      throw UsageError("total_loss: stage inputs are not aligned");
    }
    for (int y = 0; y < pv.height; ++y) {
      for (int x = 0; x < pv.width; ++x) {
        if (!s.valid->at(y, x)) continue;
        const double gt = s.gt_depth->at(y, x);
        const auto bins = s.hypotheses->at(y, x);
        const auto q = gt_distribution(gt, bins);
        if (!q) continue;
        const auto prob = pv.at(y, x);
        const DepthDistribution p{q->bins, std::vector<double>(prob.begin(), prob.end())};
        SinkhornOptions opt;
        opt.epsilon = relative_epsilon * std::max(p.span(), 1e-12);
        const SinkhornResult r = sinkhorn_w1(p, *q, opt);
        out.converged = out.converged && r.converged;
        out.value += r.distance;
        if (s.mono_depth) out.value += mono_weight * l1_depth_loss(s.mono_depth->at(y, x), gt);
        ++out.valid_pixels;
      }
    }
  }
  out.empty = out.valid_pixels == 0;
  return out;
}

}  // namespace mvster

#endif  // MVSTER_OT_DEPTH_HPP
