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

#ifndef MVSTER_IO_PLY_HPP
#define MVSTER_IO_PLY_HPP

// Point clouds as PLY. The writer emits exactly this header (the color
// properties only when the cloud has colors):
//
//   ply
//   format binary_little_endian 1.0      (or: format ascii 1.0)
//   element vertex <N>
//   property float x
//   property float y
//   property float z
//   property uchar red
//   property uchar green
//   property uchar blue
//   end_header
//
// Binary records are packed (12 or 15 bytes). ASCII records print the
// shortest decimal that reads back to the same float. The reader accepts
// this layout plus `comment` and `obj_info` lines.

#include <bit>
#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mvster/errors.hpp"
#include "mvster/fusion_metrics.hpp"
#include "mvster/io/files.hpp"

namespace mvster::io {

enum class PlyFormat { kAscii, kBinaryLittleEndian };

inline std::string ply_encode(const PointCloud& cloud, PlyFormat format) {
  cloud.validate();
  const bool rgb = cloud.has_colors();
  std::string out = "ply\nformat ";
  out += format == PlyFormat::kAscii ? "ascii" : "binary_little_endian";
  out += " 1.0\nelement vertex " + std::to_string(cloud.size()) +
         "\nproperty float x\nproperty float y\nproperty float z\n";
  if (rgb) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  char buf[64];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const float v = static_cast<float>(cloud.points[i][a]);
      if (format == PlyFormat::kAscii) {
        const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        if (a > 0) out += ' ';
        out.append(buf, p);
      } else {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) out += static_cast<char>((bits >> (8 * b)) & 0xFF);
      }
    }
    if (rgb) {
      for (int c = 0; c < 3; ++c) {
        if (format == PlyFormat::kAscii) {
          out += ' ';
          out += std::to_string(cloud.colors[i][c]);
        } else {
          out += static_cast<char>(cloud.colors[i][c]);
        }
      }
    }
    if (format == PlyFormat::kAscii) out += '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t s = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > s) out.push_back(line.substr(s, i - s));
  }
  return out;
}

}  // namespace detail

inline PointCloud ply_decode(std::string_view bytes, PlyFormat* format_out = nullptr) {
  std::size_t pos = 0;
  auto next_line = [&](std::size_t& at) {
    at = pos;
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw FormatError("ply: truncated header", bytes.size());
    std::string_view line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  std::size_t at = 0;
  if (detail::split_ws(next_line(at)) != std::vector<std::string_view>{"ply"}) {
    throw FormatError("ply: missing 'ply' magic", 0);
  }
  PlyFormat format = PlyFormat::kAscii;
  bool have_format = false;
  long long count = -1;
  std::vector<std::string> props;
  for (;;) {
    const auto t = detail::split_ws(next_line(at));
    if (t.empty() || t[0] == "comment" || t[0] == "obj_info") continue;
    if (t[0] == "end_header") break;
    if (t[0] == "format") {
      if (t.size() != 3 || t[2] != "1.0") throw FormatError("ply: bad format line", at);
      if (t[1] == "ascii") {
        format = PlyFormat::kAscii;
      } else if (t[1] == "binary_little_endian") {
        format = PlyFormat::kBinaryLittleEndian;
      } else {
        throw FormatError("ply: unsupported format '" + std::string(t[1]) + "'", at);
      }
      have_format = true;
    } else if (t[0] == "element") {
      if (t.size() != 3 || t[1] != "vertex" || count >= 0) {
        throw FormatError("ply: only a single vertex element is supported", at);
      }
      const auto [p, ec] = std::from_chars(t[2].data(), t[2].data() + t[2].size(), count);
      if (ec != std::errc() || p != t[2].data() + t[2].size() || count < 0) {
        throw FormatError("ply: bad vertex count", at);
      }
    } else if (t[0] == "property") {
      if (t.size() != 3) throw FormatError("ply: bad property line", at);
      props.push_back(std::string(t[1]) + " " + std::string(t[2]));
    } else {
      throw FormatError("ply: unexpected header line", at);
    }
  }
  if (!have_format || count < 0) throw FormatError("ply: incomplete header", pos);
  const std::vector<std::string> xyz{"float x", "float y", "float z"};
  const std::vector<std::string> xyzrgb{"float x",     "float y",       "float z",
                                        "uchar red",   "uchar green",   "uchar blue"};
  const bool rgb = props == xyzrgb;
  if (!rgb && props != xyz) {
    throw FormatError("ply: vertex properties must be float x y z [uchar red green blue]", pos);
  }
  PointCloud cloud;
  cloud.points.resize(static_cast<std::size_t>(count));
  if (rgb) cloud.colors.resize(static_cast<std::size_t>(count));
  if (format == PlyFormat::kBinaryLittleEndian) {
    const std::size_t stride = rgb ? 15 : 12;
    const std::size_t need = stride * static_cast<std::size_t>(count);
    if (bytes.size() - pos < need) throw FormatError("ply: truncated payload", bytes.size());
    if (bytes.size() - pos > need) throw FormatError("ply: trailing bytes after payload", pos + need);
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (long long i = 0; i < count; ++i) {
      for (int a = 0; a < 3; ++a) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(src[b]) << (8 * b);
        src += 4;
        cloud.points[i][a] = std::bit_cast<float>(bits);
      }
      if (rgb) {
        for (int c = 0; c < 3; ++c) cloud.colors[i][c] = *src++;
      }
    }
  } else {
    for (long long i = 0; i < count; ++i) {
      const auto t = detail::split_ws(next_line(at));
      if (t.size() != (rgb ? 6u : 3u)) throw FormatError("ply: bad vertex record", at);
      for (int a = 0; a < 3; ++a) {
        float v = 0;
        const auto [p, ec] = std::from_chars(t[a].data(), t[a].data() + t[a].size(), v);
        if (ec != std::errc() || p != t[a].data() + t[a].size()) {
          throw FormatError("ply: bad coordinate", at);
        }
        cloud.points[i][a] = v;
      }
      for (int c = 0; rgb && c < 3; ++c) {
        unsigned v = 0;
        const auto [p, ec] = std::from_chars(t[3 + c].data(), t[3 + c].data() + t[3 + c].size(), v);
        if (ec != std::errc() || p != t[3 + c].data() + t[3 + c].size() || v > 255) {
          throw FormatError("ply: bad color", at);
        }
        cloud.colors[i][c] = static_cast<std::uint8_t>(v);
      }
    }
    if (pos != bytes.size()) throw FormatError("ply: trailing data after vertices", pos);
  }
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw FormatError("ply: non-finite coordinate", pos);
  }
  if (format_out) *format_out = format;
  return cloud;
}

inline void ply_write(const std::string& path, const PointCloud& cloud,
                      PlyFormat format = PlyFormat::kBinaryLittleEndian) {
  write_file(path, ply_encode(cloud, format));
}

inline PointCloud ply_read(const std::string& path) { return ply_decode(read_file(path)); }

}  // namespace mvster::io

#endif  // MVSTER_IO_PLY_HPP
