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

#ifndef MVSTER_CASCADE_PIPELINE_HPP
#define MVSTER_CASCADE_PIPELINE_HPP

// Four-stage coarse-to-fine depth estimation. Stage k runs at 1/2^(3-k) of
// the input resolution on pyramid level 3-k (64, 32, 16, 8 channels).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvster/core_geometry.hpp"
#include "mvster/epipolar_transformer.hpp"
#include "mvster/errors.hpp"
#include "mvster/feature_pyramid.hpp"
#include "mvster/grid.hpp"
#include "mvster/io/kv_config.hpp"
#include "mvster/parallel.hpp"
#include "mvster/regularizer.hpp"
#include "mvster/weight_bundle.hpp"

namespace mvster {

inline constexpr int kStageCount = 4;

enum class FusionMode { kEpipolar, kVariance };
enum class FeatureMode { kDescriptor, kBypass, kNetwork };

struct PipelineConfig {
  std::array<int, kStageCount> depth_counts{8, 8, 4, 4};
  std::array<int, kStageCount> groups{8, 8, 4, 4};
  double temperature = kDefaultTemperature;
  FusionMode fusion = FusionMode::kEpipolar;
  RegularizerMode regularizer = RegularizerMode::kReference;
  double blur_sigma = 1.0;
  double d_min = 425.0;
  double d_max = 935.0;
  bool double_first_stage = false;
  FeatureMode features = FeatureMode::kDescriptor;
  // Oracle descriptor gain per stage, coarse to fine.
  std::array<double, kStageCount> descriptor_gains{kDescriptorGain, kDescriptorGain,
                                                   kDescriptorGain, kDescriptorGain};
  ReadoutRule readout = ReadoutRule::kExpectation;
  int confidence_window = 4;
  int stages = kStageCount;  // run stages 0 .. stages-1
  std::uint64_t seed = 0;    // seeded-random weights when no file is given
  std::string fpn_weights;   // optional weight bundle paths
  std::array<std::string, kStageCount> unet_weights;

  DepthRange range() const { return {d_min, d_max}; }

  int depth_count(int stage) const {
    return stage == 0 && double_first_stage ? 2 * depth_counts[0] : depth_counts[stage];
  }

  static int level_of(int stage) { return kStageCount - 1 - stage; }
  static int scale_of(int stage) { return 1 << level_of(stage); }

  void validate() const {
    range().validate();
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (stages < 1 || stages > kStageCount) throw ConfigError("stages must be in 1..4");
    if (confidence_window < 1) throw ConfigError("confidence_window must be >= 1");
    for (double g : descriptor_gains) {
      if (!(g > 0.0)) throw ConfigError("descriptor_gains must be positive");
    }
    if (!(blur_sigma >= 0.0)) throw ConfigError("blur_sigma must be non-negative");
    for (int k = 0; k < kStageCount; ++k) {
      if (depth_count(k) < 2) {
        throw ConfigError("stage " + std::to_string(k) + ": hypothesis count must be >= 2");
      }
      check_groups(kPyramidChannels[level_of(k)], groups[k]);
    }
  }
};

namespace detail {

template <typename Enum, std::size_t N>
Enum parse_enum(const io::KeyValueFile& kv, const std::string& key, Enum fallback,
                const std::array<std::pair<const char*, Enum>, N>& names) {
  if (!kv.has(key)) return fallback;
  const std::string& v = kv.get(key);
  std::string allowed;
  for (const auto& [name, value] : names) {
    if (v == name) return value;
    allowed += allowed.empty() ? name : std::string("|") + name;
  }
  throw ConfigError("key '" + key + "': expected " + allowed + ", got '" + v + "'");
}

template <typename Enum, std::size_t N>
const char* enum_name(Enum value, const std::array<std::pair<const char*, Enum>, N>& names) {
  for (const auto& [name, v] : names) {
    if (v == value) return name;
  }
  return "?";
}

inline constexpr std::array<std::pair<const char*, FusionMode>, 2> kFusionNames{
    {{"epipolar", FusionMode::kEpipolar}, {"variance", FusionMode::kVariance}}};
inline constexpr std::array<std::pair<const char*, RegularizerMode>, 2> kRegularizerNames{
    {{"reference", RegularizerMode::kReference}, {"learned", RegularizerMode::kLearned}}};
inline constexpr std::array<std::pair<const char*, FeatureMode>, 3> kFeatureNames{
    {{"descriptor", FeatureMode::kDescriptor},
     {"bypass", FeatureMode::kBypass},
     {"network", FeatureMode::kNetwork}}};
inline constexpr std::array<std::pair<const char*, ReadoutRule>, 2> kReadoutNames{
    {{"expectation", ReadoutRule::kExpectation}, {"argmax", ReadoutRule::kArgmax}}};

inline std::array<int, kStageCount> get_stage_ints(const io::KeyValueFile& kv,
                                                   const std::string& key,
                                                   std::array<int, kStageCount> fallback) {
  if (!kv.has(key)) return fallback;
  const auto v = kv.get_ints(key);
  if (v.size() != kStageCount) throw ConfigError("key '" + key + "': expected four integers");
  std::copy(v.begin(), v.end(), fallback.begin());
  return fallback;
}

}  // namespace detail

inline FusionMode parse_fusion_mode(const std::string& name) {
  io::KeyValueFile kv;
  kv.set("fusion", name);
  return detail::parse_enum(kv, "fusion", FusionMode::kEpipolar, detail::kFusionNames);
}

inline const char* to_string(FusionMode m) { return detail::enum_name(m, detail::kFusionNames); }

// Every key is optional; absent keys keep the defaults above.
inline PipelineConfig pipeline_config_from(const io::KeyValueFile& kv) {
  static const std::vector<std::string> known{
      "depth_counts", "groups",  "temperature", "fusion",   "regularizer",
      "blur_sigma",   "d_min",   "d_max",       "double_first_stage",
      "features",     "descriptor_gains",        "readout",  "confidence_window",
      "stages",       "seed",    "fpn_weights", "unet_weights.0", "unet_weights.1",
      "unet_weights.2", "unet_weights.3"};
  for (const auto& key : kv.keys()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown pipeline key '" + key + "'");
    }
  }
  PipelineConfig c;
  c.depth_counts = detail::get_stage_ints(kv, "depth_counts", c.depth_counts);
  c.groups = detail::get_stage_ints(kv, "groups", c.groups);
  c.temperature = kv.get_double_or("temperature", c.temperature);
  c.fusion = detail::parse_enum(kv, "fusion", c.fusion, detail::kFusionNames);
  c.regularizer = detail::parse_enum(kv, "regularizer", c.regularizer, detail::kRegularizerNames);
  c.blur_sigma = kv.get_double_or("blur_sigma", c.blur_sigma);
  c.d_min = kv.get_double_or("d_min", c.d_min);
  c.d_max = kv.get_double_or("d_max", c.d_max);
  c.double_first_stage = kv.get_bool_or("double_first_stage", c.double_first_stage);
  c.features = detail::parse_enum(kv, "features", c.features, detail::kFeatureNames);
  if (kv.has("descriptor_gains")) {
    const auto g = kv.get_doubles("descriptor_gains");
    if (g.size() != kStageCount) throw ConfigError("key 'descriptor_gains': expected four numbers");
    std::copy(g.begin(), g.end(), c.descriptor_gains.begin());
  }
  c.readout = detail::parse_enum(kv, "readout", c.readout, detail::kReadoutNames);
  c.confidence_window = static_cast<int>(kv.get_int_or("confidence_window", c.confidence_window));
  c.stages = static_cast<int>(kv.get_int_or("stages", c.stages));
  const long long seed = kv.get_int_or("seed", 0);
  if (seed < 0) throw ConfigError("seed must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  c.fpn_weights = kv.get_or("fpn_weights", "");
  for (int k = 0; k < kStageCount; ++k) {
    c.unet_weights[k] = kv.get_or("unet_weights." + std::to_string(k), "");
  }
  c.validate();
  return c;
}

// Full configuration, every key written, for run manifests.
inline io::KeyValueFile pipeline_config_to(const PipelineConfig& c) {
  using io::format_exact;
  io::KeyValueFile kv;
  auto ints = [](const std::array<int, kStageCount>& a) {
    std::string s;
    for (int v : a) s += (s.empty() ? "" : " ") + std::to_string(v);
    return s;
  };
  kv.set("depth_counts", ints(c.depth_counts));
  kv.set("groups", ints(c.groups));
  kv.set("temperature", format_exact(c.temperature));
  kv.set("fusion", detail::enum_name(c.fusion, detail::kFusionNames));
  kv.set("regularizer", detail::enum_name(c.regularizer, detail::kRegularizerNames));
  kv.set("blur_sigma", format_exact(c.blur_sigma));
  kv.set("d_min", format_exact(c.d_min));
  kv.set("d_max", format_exact(c.d_max));
  kv.set("double_first_stage", c.double_first_stage ? "true" : "false");
  kv.set("features", detail::enum_name(c.features, detail::kFeatureNames));
  {
    std::string g;
    for (double v : c.descriptor_gains) g += (g.empty() ? "" : " ") + format_exact(v);
    kv.set("descriptor_gains", g);
  }
  kv.set("readout", detail::enum_name(c.readout, detail::kReadoutNames));
  kv.set("confidence_window", std::to_string(c.confidence_window));
  kv.set("stages", std::to_string(c.stages));
  kv.set("seed", std::to_string(c.seed));
  if (!c.fpn_weights.empty()) kv.set("fpn_weights", c.fpn_weights);
  for (int k = 0; k < kStageCount; ++k) {
    if (!c.unet_weights[k].empty()) kv.set("unet_weights." + std::to_string(k), c.unet_weights[k]);
  }
  return kv;
}

// Weights used by a run: the feature network (network features only) and
// one cost regularisation network per stage (learned regulariser only).
struct PipelineWeights {
  std::optional<WeightBundle> fpn;
  std::array<std::optional<WeightBundle>, kStageCount> unet;

  static PipelineWeights for_config(const PipelineConfig& c) {
    PipelineWeights w;
    if (c.features == FeatureMode::kNetwork) {
      w.fpn = c.fpn_weights.empty() ? WeightBundle::seeded_random(fpn_layout(), c.seed)
                                    : WeightBundle::load(c.fpn_weights, fpn_layout());
    }
    if (c.regularizer == RegularizerMode::kLearned) {
      for (int k = 0; k < kStageCount; ++k) {
        const auto layout = unet_layout(c.groups[k]);
        w.unet[k] = c.unet_weights[k].empty()
                        ? WeightBundle::seeded_random(layout, c.seed + 1 + k)
                        : WeightBundle::load(c.unet_weights[k], layout);
      }
    }
    return w;
  }
};

struct DepthMap {
  int stage = 0;
  Grid<double> depth;
  Grid<unsigned char> valid;
  Grid<double> confidence;
  double inverse_span = 0.0;  // inverse-depth span of the stage's hypotheses
  int hypotheses = 0;

  int height() const { return depth.height(); }
  int width() const { return depth.width(); }
};

struct View {
  int id = 0;
  Image image;
  CameraModel camera;
};

struct StageOutput {
  DepthMap depth;
  ProbabilityVolume probability;
  DepthHypothesisSet hypotheses;
};

// Previous-stage depth at twice its resolution. Fine pixel (x, y) maps to
// coarse (x / 2, y / 2) because intrinsics scale by exact division.
// Bilinear when all four neighbours are valid, otherwise the nearest valid
// neighbour.
inline std::pair<Grid<double>, Grid<unsigned char>> upsample_depth(const DepthMap& prev) {
  const int h = prev.height(), w = prev.width();
  Grid<double> depth(2 * h, 2 * w);
  Grid<unsigned char> valid(2 * h, 2 * w);
  for (int y = 0; y < 2 * h; ++y) {
    for (int x = 0; x < 2 * w; ++x) {
      const double cx = std::min(x / 2.0, w - 1.0), cy = std::min(y / 2.0, h - 1.0);
      const int x0 = static_cast<int>(cx), y0 = static_cast<int>(cy);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = cx - x0, ay = cy - y0;
      const std::array<std::pair<int, int>, 4> nb{{{y0, x0}, {y0, x1}, {y1, x0}, {y1, x1}}};
      const std::array<double, 4> wt{(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      bool all = true;
      for (const auto& [ny, nx] : nb) all = all && prev.valid.at(ny, nx);
      if (all) {
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) acc += wt[i] * prev.depth.at(nb[i].first, nb[i].second);
        depth.at(y, x) = acc;
        valid.at(y, x) = 1;
        continue;
      }
      double best = 2.0;
      for (const auto& [ny, nx] : nb) {
        if (!prev.valid.at(ny, nx)) continue;
        const double dist = (ny - cy) * (ny - cy) + (nx - cx) * (nx - cx);
        if (dist < best) {
          best = dist;
          depth.at(y, x) = prev.depth.at(ny, nx);
          valid.at(y, x) = 1;
        }
      }
    }
  }
  return {std::move(depth), std::move(valid)};
}

// One cascade stage. Cameras must already be scaled to the stage resolution
// and sources ordered by ascending view id.
inline StageOutput run_stage(int k, const FeatureMap& ref_features,
                             std::span<const FeatureMap* const> src_features,
                             const CameraModel& ref_camera,
                             std::span<const CameraModel> src_cameras, const DepthMap* prev,
                             const PipelineConfig& cfg, const PipelineWeights& weights,
                             int threads = 1) {
  cfg.validate();
  if (k < 0 || k >= kStageCount) throw UsageError("run_stage: stage index out of range");
  const int H = ref_features.height(), W = ref_features.width(), C = ref_features.channels();
  if (ref_camera.width() != W || ref_camera.height() != H) {
    throw UsageError("run_stage: reference camera does not match feature resolution");
  }
  if (src_features.empty() || src_features.size() != src_cameras.size()) {
    throw UsageError("run_stage: need matching, non-empty source features and cameras");
  }
  for (std::size_t i = 0; i < src_features.size(); ++i) {
    const FeatureMap& f = *src_features[i];
    if (f.channels() != C || f.width() != src_cameras[i].width() ||
        f.height() != src_cameras[i].height()) {
      throw UsageError("run_stage: source " + std::to_string(i) +
                       " features do not match its camera or the reference channels");
    }
  }
  const int D = cfg.depth_count(k), G = cfg.groups[k];
  check_groups(C, G);
  const DepthRange range = cfg.range();

  StageOutput out;
  if (k == 0) {
    if (prev != nullptr) throw UsageError("run_stage: stage 0 takes no previous depth");
    out.hypotheses = init_inverse_depth_hypotheses(range, D, W, H);
  } else {
    if (prev == nullptr) throw UsageError("run_stage: stage > 0 needs the previous depth");
    if (2 * prev->width() != W || 2 * prev->height() != H) {
      throw UsageError("run_stage: previous depth is " + std::to_string(prev->width()) + "x" +
                       std::to_string(prev->height()) + ", expected half of " +
                       std::to_string(W) + "x" + std::to_string(H));
    }
    const auto [up_depth, up_valid] = upsample_depth(*prev);
    const double span = next_inverse_range(prev->inverse_span, prev->hypotheses);
    out.hypotheses = refine_hypotheses(up_depth, up_valid, D, span, range, k);
  }

  std::vector<PairWarp> warps;
  for (const auto& cam : src_cameras) warps.emplace_back(ref_camera, cam);
  const std::size_t n_src = warps.size();
  CostField cost(H, W, G, D);
  parallel_for(0, H, threads, [&](int y) {
    std::vector<EpipolarKeys> keys(n_src, EpipolarKeys(C, D));
    std::vector<std::vector<double>> values(n_src, std::vector<double>(static_cast<std::size_t>(G) * D));
    std::vector<std::vector<double>> attn(n_src, std::vector<double>(D));
    std::vector<double> logits(D), variance(static_cast<std::size_t>(C) * D);
    for (int x = 0; x < W; ++x) {
      const auto query = ref_features.pixel(y, x);
      const auto hyps = out.hypotheses.at(y, x);
      const Eigen::Vector2d p(x, y);
      for (std::size_t i = 0; i < n_src; ++i) {
        for (int d = 0; d < D; ++d) {
          const WarpResult wr = warps[i](p, hyps[d]);
          keys[i].valid[d] =
              wr.in_front && bilinear_sample(*src_features[i], wr.coord, keys[i].column(d)) ? 1 : 0;
          if (!keys[i].valid[d]) std::fill(keys[i].column(d).begin(), keys[i].column(d).end(), 0.0);
        }
      }
      auto c_out = cost.at(y, x);
      auto support = cost.support(y, x);
      if (cfg.fusion == FusionMode::kEpipolar) {
        for (std::size_t i = 0; i < n_src; ++i) {
          // A view that misses every bin takes no part in the fusion.
          if (!attention_weights(query, keys[i], cfg.temperature, logits, attn[i])) {
            std::fill(attn[i].begin(), attn[i].end(), 0.0);
          }
          group_correlation(query, keys[i], G, values[i]);
        }
        const FusedCost fused = fuse_views(values, attn, G);
        std::copy(fused.cost.begin(), fused.cost.end(), c_out.begin());
        std::copy(fused.supported.begin(), fused.supported.end(), support.begin());
      } else {
        masked_variance(query, keys, variance, support);
        // Low variance means a good match; negate so larger is better, with
        // the same 1/G grouping as the correlation cost.
        const int per_group = C / G;
        for (int g = 0; g < G; ++g) {
          for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
              acc += variance[static_cast<std::size_t>(d) * C + c];
            }
            c_out[static_cast<std::size_t>(g) * D + d] = -acc / G;
          }
        }
      }
    }
  });

  RegularizerOptions ropt;
  ropt.mode = cfg.regularizer;
  ropt.sigma = cfg.blur_sigma;
  ropt.threads = threads;
  if (cfg.regularizer == RegularizerMode::kLearned) {
    if (!weights.unet[k]) throw ConfigError("learned regulariser needs stage weights");
    ropt.weights = &*weights.unet[k];
  }
  out.probability = regularize(cost, ropt, k);
  ReadoutOptions read;
  read.rule = cfg.readout;
  read.confidence_window = cfg.confidence_window;
  DepthReadout r = depth_readout(out.probability, out.hypotheses, read);

  out.depth.stage = k;
  out.depth.depth = std::move(r.depth);
  out.depth.confidence = std::move(r.confidence);
  out.depth.valid = Grid<unsigned char>(H, W);
  out.depth.inverse_span = out.hypotheses.inverse_span;
  out.depth.hypotheses = D;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto s = cost.support(y, x);
      const bool any = std::any_of(s.begin(), s.end(), [](std::uint8_t v) { return v != 0; });
      out.depth.valid.at(y, x) = any ? 1 : 0;
      if (!any) out.depth.confidence.at(y, x) = 0.0;
    }
  }
  return out;
}

struct PipelineResult {
  std::vector<StageOutput> stages;
  double feature_seconds = 0.0;       // wall time of feature extraction
  std::vector<double> stage_seconds;  // wall time of each stage
  const DepthMap& final_depth() const { return stages.back().depth; }
};

inline FeaturePyramid build_pyramid(const Image& image, const PipelineConfig& cfg,
                                    const PipelineWeights& weights, int threads) {
  switch (cfg.features) {
    case FeatureMode::kDescriptor:
    {
      std::array<double, kPyramidLevels> by_level{};
      for (int k = 0; k < kStageCount; ++k) {
        by_level[PipelineConfig::level_of(k)] = cfg.descriptor_gains[k];
      }
      return descriptor_pyramid(image, by_level);
    }
    case FeatureMode::kBypass:
      return bypass_pyramid(image);
    case FeatureMode::kNetwork:
      if (!weights.fpn) throw ConfigError("network features need a weight bundle");
      return extract_pyramid(image, *weights.fpn, threads);
  }
  throw ConfigError("unknown feature mode");
}

// Runs stages 0 .. cfg.stages - 1 for `ref` against `sources`. Sources are
// processed in ascending id order regardless of the order given.
inline PipelineResult run_pipeline(const View& ref, std::vector<View> sources,
                                   const PipelineConfig& cfg, const PipelineWeights& weights,
                                   int threads = 1) {
  cfg.validate();
  if (sources.empty()) throw UsageError("run_pipeline: need at least two views");
  std::stable_sort(sources.begin(), sources.end(),
                   [](const View& a, const View& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].id == ref.id || (i > 0 && sources[i].id == sources[i - 1].id)) {
      throw UsageError("run_pipeline: duplicate view id " + std::to_string(sources[i].id));
    }
  }
  auto check_view = [](const View& v) {
    check_pyramid_input(v.image);
    if (v.camera.width() != v.image.width() || v.camera.height() != v.image.height()) {
      throw UsageError("view " + std::to_string(v.id) + ": camera size does not match image");
    }
  };
  check_view(ref);
  for (const auto& s : sources) check_view(s);

  using Clock = std::chrono::steady_clock;
  auto seconds_since = [](Clock::time_point t) {
    return std::chrono::duration<double>(Clock::now() - t).count();
  };
  PipelineResult result;
  auto start = Clock::now();
  const FeaturePyramid ref_pyr = build_pyramid(ref.image, cfg, weights, threads);
  std::vector<FeaturePyramid> src_pyr;
  for (const auto& s : sources) src_pyr.push_back(build_pyramid(s.image, cfg, weights, threads));
  result.feature_seconds = seconds_since(start);

  for (int k = 0; k < cfg.stages; ++k) {
    start = Clock::now();
    const int level = PipelineConfig::level_of(k);
    const int scale = PipelineConfig::scale_of(k);
    std::vector<const FeatureMap*> feats;
    std::vector<CameraModel> cams;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      feats.push_back(&src_pyr[i].levels[level]);
      cams.push_back(sources[i].camera.downscaled(scale));
    }
    const DepthMap* prev = k == 0 ? nullptr : &result.stages.back().depth;
    result.stages.push_back(run_stage(k, ref_pyr.levels[level], feats,
                                      ref.camera.downscaled(scale), cams, prev, cfg, weights,
                                      threads));
    result.stage_seconds.push_back(seconds_since(start));
  }
  return result;
}

}  // namespace mvster

#endif  // MVSTER_CASCADE_PIPELINE_HPP
