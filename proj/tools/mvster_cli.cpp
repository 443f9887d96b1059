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

// Command-line front end: synth, estimate, fuse, eval, gradcheck, bench.
// Failures print one line "mvster: error: <kind>: <message>" on stderr and
// exit with status 2; everything the failed command had written is removed.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvster/mvster.hpp"

namespace fs = std::filesystem;
using namespace mvster;

namespace {

constexpr double kGradcheckTolerance = 1e-4;

struct Common {
  std::string config;
  std::string views;
  std::string output;
  std::string fusion;
  int stages = 0;
  int threads = 0;
  long long seed = -1;

  int thread_count() const { return threads > 0 ? threads : default_thread_count(); }
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

void print_kv(const io::KeyValueFile& kv) { std::cout << kv.to_string(); }

std::string fmt(double v) { return io::format_exact(v); }

// Pipeline configuration: file, then command-line overrides. The depth
// range falls back to the reference camera file when the config omits it.
PipelineConfig pipeline_config(const Common& c, const io::CameraFile* ref_cam) {
  io::KeyValueFile kv = c.config.empty() ? io::KeyValueFile{} : io::KeyValueFile::load(c.config);
  if (ref_cam) {
    if (!kv.has("d_min")) kv.set("d_min", fmt(ref_cam->d_min));
    if (!kv.has("d_max")) {
      const double d_max = ref_cam->d_max > 0.0
                               ? ref_cam->d_max
                               : ref_cam->d_min + ref_cam->d_interval *
                                                      ((ref_cam->d_count > 0 ? ref_cam->d_count : 192) - 1);
      kv.set("d_max", fmt(d_max));
    }
  }
  if (!c.fusion.empty()) kv.set("fusion", c.fusion);
  if (c.stages > 0) kv.set("stages", std::to_string(c.stages));
  if (c.seed >= 0) kv.set("seed", std::to_string(c.seed));
  return pipeline_config_from(kv);
}

void finish(io::OutputTransaction& tx, io::RunManifest& m) {
  m.output_dir = tx.dir().string();
  m.artifacts = tx.names();
  m.artifacts.push_back(io::kManifestName);
  tx.write(io::kManifestName, m.to_kv().to_string());
  tx.commit();
}

std::vector<int> parse_ids(const std::string& text, const std::vector<int>& available) {
  if (text.empty() || text == "all") return available;
  std::vector<int> ids;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const int id = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      ids.push_back(id);
    } catch (const std::exception&) {
      throw UsageError("bad view id '" + item + "'");
    }
    if (std::find(available.begin(), available.end(), ids.back()) == available.end()) {
      throw UsageError("view " + item + " is not in the view set");
    }
    pos = comma + 1;
  }
  return ids;
}

// ---------------------------------------------------------------- synth

int run_synth(const Common& c) {
  if (c.output.empty()) throw UsageError("synth: --output is required");
  const SceneSpec spec = c.config.empty()
                             ? three_plane_scene(c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 1)
                             : scene_from_config(io::KeyValueFile::load(c.config));
  spec.validate();
  io::RunManifest m;
  m.command = "synth";
  m.config_path = c.config;
  m.check_inputs();
  m.config = scene_to_config(spec);

  io::OutputTransaction tx(c.output);
  tx.write("scene.cfg", m.config.to_string());
  const int threads = c.thread_count();
  for (int v = 0; v < spec.views; ++v) {
    const RenderedView r = render(spec, v, threads);
    io::pfm_write_color(tx.path(io::image_name(v)), r.image);
    io::CameraFile cam;
    cam.camera = r.camera;
    cam.d_min = spec.d_min;
    cam.d_count = 192;
    cam.d_max = spec.d_max;
    cam.d_interval = (spec.d_max - spec.d_min) / (cam.d_count - 1);
    io::camera_write(tx.path(io::camera_name(v)), cam);
    io::pfm_write(tx.path(io::gt_depth_name(v)), r.depth);
  }
  finish(tx, m);
  std::cout << "synth: wrote " << spec.views << " views to " << c.output << "\n";
  return 0;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
  std::string refs;
};

Grid<double> masked(const Grid<double>& g, const Grid<unsigned char>& valid) {
  Grid<double> out = g;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!valid.data()[i]) out.data()[i] = 0.0;
  }
  return out;
}

int run_estimate(const Common& c, const EstimateArgs& a) {
  if (c.views.empty() || c.output.empty()) throw UsageError("estimate: --views and --output are required");
  io::RunManifest m;
  m.command = "estimate";
  m.inputs.push_back(c.views);
  m.config_path = c.config;
  m.check_inputs();
  const std::vector<int> all = io::list_view_ids(c.views);
  if (all.size() < 2) throw UsageError("estimate: the view set needs at least two views");
  const std::vector<int> refs = parse_ids(a.refs, all);

  std::vector<io::LoadedView> views;
  for (int id : all) views.push_back(io::load_view(c.views, id));
  for (int id : all) {
    m.inputs.push_back((fs::path(c.views) / io::image_name(id)).string());
    m.inputs.push_back((fs::path(c.views) / io::camera_name(id)).string());
  }
  const PipelineConfig cfg = pipeline_config(c, &views.front().camera_file);
  const PipelineWeights weights = PipelineWeights::for_config(cfg);
  m.config = pipeline_config_to(cfg);
  const int threads = c.thread_count();

  io::OutputTransaction tx(c.output);
  io::KeyValueFile metrics;
  bool have_metrics = false;
  for (int ref_id : refs) {
    const auto ref_it = std::find(all.begin(), all.end(), ref_id);
    const io::LoadedView& ref = views[ref_it - all.begin()];
    std::vector<View> sources;
    for (const auto& v : views) {
      if (v.view.id != ref_id) sources.push_back(v.view);
    }
    const PipelineResult result = run_pipeline(ref.view, sources, cfg, weights, threads);
    const std::string stem = io::view_stem(ref_id);
    for (const StageOutput& s : result.stages) {
      const std::string tag = stem + "_stage" + std::to_string(s.depth.stage);
      io::pfm_write(tx.path("stages/" + tag + "_depth.pfm"), masked(s.depth.depth, s.depth.valid));
      io::pfm_write(tx.path("stages/" + tag + "_conf.pfm"),
                    masked(s.depth.confidence, s.depth.valid));
      if (ref.gt_depth) {
        const int f = PipelineConfig::scale_of(s.depth.stage);
        const Grid<double> gt = decimate(*ref.gt_depth, f);
        Grid<unsigned char> both = io::positive_mask(gt);
        for (std::size_t i = 0; i < both.size(); ++i) both.data()[i] &= s.depth.valid.data()[i];
        const std::string key = "view." + stem + ".stage." + std::to_string(s.depth.stage);
        try {
          const DepthMetrics dm = depth_metrics(s.depth.depth, gt, both);
          metrics.set(key + ".epe", fmt(dm.epe));
          metrics.set(key + ".e1", fmt(dm.e1));
          metrics.set(key + ".e3", fmt(dm.e3));
          metrics.set(key + ".pixels", std::to_string(dm.count));
        } catch (const UsageError&) {
          metrics.set(key + ".pixels", "0");
        }
        have_metrics = true;
      }
    }
    const DepthMap& fin = result.final_depth();
    if (fin.width() == ref.view.image.width()) {
      io::pfm_write(tx.path("depth/" + stem + ".pfm"), masked(fin.depth, fin.valid));
      io::pfm_write(tx.path("confidence/" + stem + ".pfm"), masked(fin.confidence, fin.valid));
    }
  }
  if (have_metrics) {
    metrics.set("fusion", to_string(cfg.fusion));
    tx.write("metrics.txt", metrics.to_string());
    print_kv(metrics);
  }
  finish(tx, m);
  return 0;
}

// ---------------------------------------------------------------- fuse

struct FuseArgs {
  std::string depths;
  ConsistencyOptions consistency;
  double confidence = kPhotometricThreshold;
  bool ascii = false;
};

int run_fuse(const Common& c, const FuseArgs& a) {
  if (c.views.empty() || a.depths.empty() || c.output.empty()) {
    throw UsageError("fuse: --views, --depths and --output are required");
  }
  io::RunManifest m;
  m.command = "fuse";
  m.inputs = {c.views, a.depths};
  m.check_inputs();
  std::vector<ViewDepth> views;
  std::vector<Grid<double>> colors;
  std::vector<Mask> photometric;
  for (int id : io::list_view_ids(c.views)) {
    const fs::path depth_path = fs::path(a.depths) / "depth" / (io::view_stem(id) + ".pfm");
    std::error_code ec;
    if (!fs::exists(depth_path, ec)) continue;
    const io::LoadedView lv = io::load_view(c.views, id);
    ViewDepth vd;
    vd.depth = io::pfm_read(depth_path.string());
    vd.valid = io::positive_mask(vd.depth);
    vd.camera = lv.view.camera;
    const fs::path conf_path = fs::path(a.depths) / "confidence" / (io::view_stem(id) + ".pfm");
    if (fs::exists(conf_path, ec)) {
      photometric.push_back(photometric_filter(io::pfm_read(conf_path.string()), a.confidence, &vd.valid));
      m.inputs.push_back(conf_path.string());
    } else {
      photometric.push_back(vd.valid);
    }
    m.inputs.push_back(depth_path.string());
    views.push_back(std::move(vd));
    colors.push_back(lv.view.image);
  }
  if (views.empty()) throw UsageError("fuse: no depth maps found under '" + a.depths + "/depth'");
  m.config.set("min_consistent", std::to_string(a.consistency.min_consistent));
  m.config.set("reproj_px_tol", fmt(a.consistency.reproj_px_tol));
  m.config.set("rel_depth_tol", fmt(a.consistency.rel_depth_tol));
  m.config.set("confidence", fmt(a.confidence));
  m.config.set("ply_format", a.ascii ? "ascii" : "binary_little_endian");

  const GeometricFilterResult geo = geometric_filter(views, a.consistency, c.thread_count());
  if (geo.too_few_views) {
    std::cerr << "mvster: warning: " << views.size() << " depth maps but min_consistent is "
              << a.consistency.min_consistent << "; every pixel is filtered\n";
  }
  std::vector<Mask> masks;
  for (std::size_t i = 0; i < views.size(); ++i) masks.push_back(mask_and(geo.masks[i], photometric[i]));
  const PointCloud cloud = fuse_point_cloud(views, masks, a.consistency, colors);

  io::OutputTransaction tx(c.output);
  io::ply_write(tx.path("cloud.ply"), cloud,
                a.ascii ? io::PlyFormat::kAscii : io::PlyFormat::kBinaryLittleEndian);
  finish(tx, m);
  std::cout << "points = " << cloud.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred, gt, cloud, gt_cloud;
  double dist_cap = 20.0;
};

int run_eval(const Common& c, const EvalArgs& a) {
  const bool depth = !a.pred.empty() || !a.gt.empty();
  const bool cloud = !a.cloud.empty() || !a.gt_cloud.empty();
  if (depth == cloud) throw UsageError("eval: give either --pred/--gt or --cloud/--gt-cloud");
  io::RunManifest m;
  m.command = "eval";
  io::KeyValueFile out;
  if (depth) {
    if (a.pred.empty() || a.gt.empty()) throw UsageError("eval: --pred and --gt are both required");
    m.inputs = {a.pred, a.gt};
    m.check_inputs();
    const Grid<double> pred = io::pfm_read(a.pred);
    const Grid<double> gt = io::pfm_read(a.gt);
    if (!pred.same_shape(gt)) throw UsageError("eval: prediction and ground truth differ in size");
    Mask valid = io::positive_mask(gt);
    const Mask pv = io::positive_mask(pred);
    for (std::size_t i = 0; i < valid.size(); ++i) valid.data()[i] &= pv.data()[i];
    const DepthMetrics dm = depth_metrics(pred, gt, valid);
    out.set("epe", fmt(dm.epe));
    out.set("e1", fmt(dm.e1));
    out.set("e3", fmt(dm.e3));
    out.set("pixels", std::to_string(dm.count));
  } else {
    if (a.cloud.empty() || a.gt_cloud.empty()) {
      throw UsageError("eval: --cloud and --gt-cloud are both required");
    }
    m.inputs = {a.cloud, a.gt_cloud};
    m.check_inputs();
    m.config.set("dist_cap", fmt(a.dist_cap));
    const CloudMetrics cm =
        cloud_metrics(io::ply_read(a.cloud), io::ply_read(a.gt_cloud), a.dist_cap, c.thread_count());
    out.set("accuracy", fmt(cm.accuracy));
    out.set("completeness", fmt(cm.completeness));
    out.set("overall", fmt(cm.overall));
  }
  if (!c.output.empty()) {
    io::OutputTransaction tx(c.output);
    tx.write("metrics.txt", out.to_string());
    finish(tx, m);
  }
  print_kv(out);
  return 0;
}

// ---------------------------------------------------------------- gradcheck

int run_gradcheck(const Common& c, int instances) {
  const GradcheckReport r =
      gradcheck_suite(instances, c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : 7);
  std::cout << "instances = " << r.instances << "\nmax_relative_error = "
            << fmt(r.max_relative_error) << "\nnon_converged = " << r.non_converged << "\n";
  if (r.max_relative_error > kGradcheckTolerance) {
    std::cerr << "mvster: error: gradcheck: max relative error " << r.max_relative_error
              << " exceeds " << kGradcheckTolerance << "\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------- bench

int run_bench(const Common& c, int repetitions, const std::string& ref_text) {
  if (c.views.empty()) throw UsageError("bench: --views is required");
  if (repetitions < 1) throw UsageError("bench: --repetitions must be >= 1");
  const std::vector<int> all = io::list_view_ids(c.views);
  if (all.size() < 2) throw UsageError("bench: the view set needs at least two views");
  const int ref_id = ref_text.empty() ? all.front() : parse_ids(ref_text, all).front();
  std::vector<View> sources;
  std::optional<io::LoadedView> ref;
  for (int id : all) {
    io::LoadedView v = io::load_view(c.views, id);
    if (id == ref_id) {
      ref = std::move(v);
    } else {
      sources.push_back(std::move(v.view));
    }
  }
  const PipelineConfig cfg = pipeline_config(c, &ref->camera_file);
  const PipelineWeights weights = PipelineWeights::for_config(cfg);
  std::vector<double> features;
  std::vector<std::vector<double>> stages(cfg.stages);
  std::vector<double> totals;
  for (int r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineResult res = run_pipeline(ref->view, sources, cfg, weights, c.thread_count());
    totals.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    features.push_back(res.feature_seconds);
    for (int k = 0; k < cfg.stages; ++k) stages[k].push_back(res.stage_seconds[k]);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  std::printf("repetitions = %d\nthreads = %d\n", repetitions, c.thread_count());
  std::printf("features_seconds = %.6f\n", median(features));
  for (int k = 0; k < cfg.stages; ++k) std::printf("stage%d_seconds = %.6f\n", k, median(stages[k]));
  std::printf("total_seconds = %.6f\n", median(totals));
  return 0;
}

void add_common(CLI::App* app, Common& c, bool views, bool pipeline) {
  app->add_option("--config", c.config, "configuration file (key = value)");
  if (views) app->add_option("--views", c.views, "view set directory");
  app->add_option("--output", c.output, "output directory");
  if (pipeline) {
    app->add_option("--fusion", c.fusion, "view fusion: epipolar or variance")
        ->check(CLI::IsMember({"epipolar", "variance"}));
    app->add_option("--stages", c.stages, "number of cascade stages to run (1-4)")
        ->check(CLI::Range(1, kStageCount));
  }
  app->add_option("--threads", c.threads, "worker threads (default: $MVSTER_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--seed", c.seed, "random seed")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvster: multi-view stereo depth estimation with epipolar attention"};
  app.require_subcommand(1);
  Common common;
  EstimateArgs est;
  FuseArgs fuse;
  EvalArgs eval;
  int instances = 200;
  int repetitions = 3;
  std::string bench_ref;

  auto* synth = app.add_subcommand("synth", "render a synthetic scene to a view set");
  add_common(synth, common, false, false);
  synth->add_option("--spec", common.config, "scene specification file (same as --config)");

  auto* estimate = app.add_subcommand("estimate", "estimate depth maps for a view set");
  add_common(estimate, common, true, true);
  estimate->add_option("--ref", est.refs, "reference view ids, comma separated, or 'all'");

  auto* fuse_cmd = app.add_subcommand("fuse", "filter depth maps and fuse them into a point cloud");
  add_common(fuse_cmd, common, true, false);
  fuse_cmd->add_option("--depths", fuse.depths, "output directory of 'estimate'");
  fuse_cmd->add_option("--min-consistent", fuse.consistency.min_consistent, "views that must agree")
      ->check(CLI::NonNegativeNumber);
  fuse_cmd->add_option("--reproj-tol", fuse.consistency.reproj_px_tol, "reprojection tolerance (px)");
  fuse_cmd->add_option("--rel-depth-tol", fuse.consistency.rel_depth_tol, "relative depth tolerance");
  fuse_cmd->add_option("--confidence", fuse.confidence, "photometric confidence threshold");
  fuse_cmd->add_flag("--ascii", fuse.ascii, "write ASCII instead of binary PLY");

  auto* eval_cmd = app.add_subcommand("eval", "depth or point-cloud metrics");
  add_common(eval_cmd, common, false, false);
  eval_cmd->add_option("--pred", eval.pred, "predicted depth map (PFM)");
  eval_cmd->add_option("--gt", eval.gt, "ground-truth depth map (PFM)");
  eval_cmd->add_option("--cloud", eval.cloud, "reconstructed point cloud (PLY)");
  eval_cmd->add_option("--gt-cloud", eval.gt_cloud, "ground-truth point cloud (PLY)");
  eval_cmd->add_option("--dist-cap", eval.dist_cap, "distance cap for cloud metrics");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the transport loss gradient");
  add_common(grad, common, false, false);
  grad->add_option("--instances", instances, "number of seeded instances")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "time every pipeline stage");
  add_common(bench, common, true, true);
  bench->add_option("--repetitions", repetitions, "repetitions per measurement");
  bench->add_option("--ref", bench_ref, "reference view id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mvster: error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*synth) return run_synth(common);
    if (*estimate) return run_estimate(common, est);
    if (*fuse_cmd) return run_fuse(common, fuse);
    if (*eval_cmd) return run_eval(common, eval);
    if (*grad) return run_gradcheck(common, instances);
    if (*bench) return run_bench(common, repetitions, bench_ref);
  } catch (const Error& e) {
    std::cerr << "mvster: error: " << e.kind() << ": " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mvster: error: internal: " << one_line(e.what()) << "\n";
    return 2;
  }
  return 2;
}
