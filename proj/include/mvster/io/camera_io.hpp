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

#ifndef MVSTER_IO_CAMERA_IO_HPP
#define MVSTER_IO_CAMERA_IO_HPP

// Camera text files in the MVSNet layout:
//
//   extrinsic
//   r00 r01 r02 t0
//   r10 r11 r12 t1
//   r20 r21 r22 t2
//   0 0 0 1
//
//   intrinsic
//   fx 0 cx
//   0 fy cy
//   0 0 1
//
//   d_min d_interval [d_count [d_max]]
//
// The extrinsic maps world to camera coordinates. Image size is not part of
// the file and comes from the matching image.

#include <Eigen/Core>

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "mvster/core_geometry.hpp"
#include "mvster/errors.hpp"
#include "mvster/io/files.hpp"
#include "mvster/io/kv_config.hpp"

namespace mvster::io {

struct CameraFile {
  CameraModel camera;
  double d_min = 0.0;
  double d_interval = 0.0;
  int d_count = 0;     // 0 when absent
  double d_max = 0.0;  // 0 when absent
};

inline std::string camera_encode(const CameraFile& f) {
  const CameraModel& c = f.camera;
  std::string out = "extrinsic\n";
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) out += format_exact(c.rotation()(r, k)) + " ";
    out += format_exact(c.translation()(r)) + "\n";
  }
  out += "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) out += format_exact(c.intrinsics()(r, k)) + (k < 2 ? " " : "\n");
  }
  out += "\n" + format_exact(f.d_min) + " " + format_exact(f.d_interval);
  if (f.d_count > 0) out += " " + std::to_string(f.d_count) + " " + format_exact(f.d_max);
  out += "\n";
  return out;
}

inline CameraFile camera_decode(std::string_view text, int width, int height) {
  struct Token {
    std::string_view text;
    std::size_t offset;
  };
  std::vector<Token> tokens;
  for (std::size_t i = 0; i < text.size();) {
    while (i < text.size() && std::string_view(" \t\r\n").find(text[i]) != std::string_view::npos) ++i;
    const std::size_t s = i;
    while (i < text.size() && std::string_view(" \t\r\n").find(text[i]) == std::string_view::npos) ++i;
    if (i > s) tokens.push_back({text.substr(s, i - s), s});
  }
  std::size_t k = 0;
  auto expect = [&](std::string_view word) {
    if (k >= tokens.size() || tokens[k].text != word) {
      throw FormatError("camera: expected '" + std::string(word) + "'",
                        k < tokens.size() ? tokens[k].offset : text.size());
    }
    ++k;
  };
  auto number = [&]() {
    if (k >= tokens.size()) throw FormatError("camera: truncated file", text.size());
    const Token& t = tokens[k++];
    double v = 0.0;
    const auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || p != t.text.data() + t.text.size() || !std::isfinite(v)) {
      throw FormatError("camera: bad number '" + std::string(t.text) + "'", t.offset);
    }
    return v;
  };
  expect("extrinsic");
  Eigen::Matrix4d E;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) E(r, c) = number();
  }
  expect("intrinsic");
  Eigen::Matrix3d K;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) K(r, c) = number();
  }
  CameraFile f;
  f.d_min = number();
  f.d_interval = number();
  if (k < tokens.size()) {
    const double count = number();
    if (count < 0 || count != std::floor(count)) {
      throw FormatError("camera: bad depth count", tokens[k - 1].offset);
    }
    f.d_count = static_cast<int>(count);
    if (k < tokens.size()) f.d_max = number();
  }
  if (k != tokens.size()) throw FormatError("camera: trailing tokens", tokens[k].offset);
  if (E.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) {
    throw FormatError("camera: extrinsic bottom row must be 0 0 0 1", 0);
  }
  try {
    f.camera = CameraModel(K, E.topLeftCorner<3, 3>(), E.topRightCorner<3, 1>(), width, height);
  } catch (const Error& e) {
    throw ConfigError(std::string("camera: ") + e.what());
  }
  return f;
}

inline void camera_write(const std::string& path, const CameraFile& f) {
  write_file(path, camera_encode(f));
}

inline CameraFile camera_read(const std::string& path, int width, int height) {
  return camera_decode(read_file(path), width, height);
}

}  // namespace mvster::io

#endif  // MVSTER_IO_CAMERA_IO_HPP
