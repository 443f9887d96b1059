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

#ifndef MVSTER_IO_DATASET_HPP
#define MVSTER_IO_DATASET_HPP

// On-disk view set:
//
//   <root>/images/<id>.pfm        color image, three-channel PFM in [0, 1]
//   <root>/cams/<id>_cam.txt      camera text file
//   <root>/depths_gt/<id>.pfm     optional ground-truth depth, 0 = invalid
//
// <id> is the view index zero-padded to eight digits.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvster/cascade_pipeline.hpp"
#include "mvster/errors.hpp"
#include "mvster/io/camera_io.hpp"
#include "mvster/io/pfm.hpp"

namespace mvster::io {

inline std::string view_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08d", id);
  return buf;
}

inline std::string image_name(int id) { return "images/" + view_stem(id) + ".pfm"; }
inline std::string camera_name(int id) { return "cams/" + view_stem(id) + "_cam.txt"; }
inline std::string gt_depth_name(int id) { return "depths_gt/" + view_stem(id) + ".pfm"; }

// View ids with a camera file under <root>/cams, ascending.
inline std::vector<int> list_view_ids(const std::string& root) {
  const std::filesystem::path cams = std::filesystem::path(root) / "cams";
  std::error_code ec;
  if (!std::filesystem::is_directory(cams, ec)) {
    throw IoError("view set '" + root + "' has no cams directory");
  }
  std::vector<int> ids;
  for (const auto& entry : std::filesystem::directory_iterator(cams)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = "_cam.txt";
    if (name.size() != 8 + suffix.size() || name.compare(8, suffix.size(), suffix) != 0) continue;
    if (!std::all_of(name.begin(), name.begin() + 8, [](char c) { return c >= '0' && c <= '9'; })) {
      continue;
    }
    ids.push_back(std::stoi(name.substr(0, 8)));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw IoError("view set '" + root + "' contains no cameras");
  return ids;
}

struct LoadedView {
  View view;
  CameraFile camera_file;
  std::optional<Grid<double>> gt_depth;
};

inline LoadedView load_view(const std::string& root, int id) {
  const std::filesystem::path base(root);
  LoadedView out;
  out.view.id = id;
  out.view.image = pfm_read_color((base / image_name(id)).string());
  out.camera_file = camera_read((base / camera_name(id)).string(), out.view.image.width(),
                                out.view.image.height());
  out.view.camera = out.camera_file.camera;
  const std::filesystem::path gt = base / gt_depth_name(id);
  std::error_code ec;
  if (std::filesystem::exists(gt, ec)) {
    out.gt_depth = pfm_read(gt.string());
    if (out.gt_depth->width() != out.view.image.width() ||
        out.gt_depth->height() != out.view.image.height()) {
      throw FormatError("ground-truth depth of view " + std::to_string(id) +
                            " does not match its image size",
                        0);
    }
  }
  return out;
}

inline Grid<unsigned char> positive_mask(const Grid<double>& depth) {
  Grid<unsigned char> m(depth.height(), depth.width(), 1, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = depth.data()[i] > 0.0;
  return m;
}

}  // namespace mvster::io

#endif  // MVSTER_IO_DATASET_HPP
