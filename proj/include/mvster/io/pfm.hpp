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

#ifndef MVSTER_IO_PFM_HPP
#define MVSTER_IO_PFM_HPP

// Portable float map. Writers emit
//
//   "Pf\n" (one channel) or "PF\n" (three channels)
//   "<width> <height>\n"
//   "-1.0\n"                   negative scale = little-endian payload
//   rows of 32-bit floats, bottom row first
//
// Readers accept any positive or negative scale and whitespace-separated
// header tokens followed by a single whitespace byte.

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "mvster/errors.hpp"
#include "mvster/grid.hpp"
#include "mvster/io/files.hpp"

namespace mvster::io {

namespace detail {

inline std::string pfm_encode(const Grid<double>& map, const char* magic) {
  for (double v : map.data()) {
    if (!std::isfinite(static_cast<float>(v))) {
      throw UsageError("pfm: refusing to write a non-finite value");
    }
  }
  std::string out = std::string(magic) + "\n" + std::to_string(map.width()) + " " +
                    std::to_string(map.height()) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + map.size() * 4);
  char* dst = out.data() + header;
  for (int y = map.height() - 1; y >= 0; --y) {
    for (int x = 0; x < map.width(); ++x) {
      for (int c = 0; c < map.channels(); ++c) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(map.at(y, x, c)));
        for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xFF);
      }
    }
  }
  return out;
}

class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  std::string_view token() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw FormatError("pfm: truncated header", start);
    return bytes_.substr(start, pos_ - start);
  }

  long long integer() {
    const std::size_t at = skip();
    const std::string_view t = token();
    long long v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || v <= 0 || v > (1 << 24)) {
      throw FormatError("pfm: bad dimension '" + std::string(t) + "'", at);
    }
    return v;
  }

  double real() {
    const std::size_t at = skip();
    const std::string_view t = token();
    double v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v) || v == 0.0) {
      throw FormatError("pfm: bad scale '" + std::string(t) + "'", at);
    }
    return v;
  }

  // Consumes the single whitespace byte that ends the header.
  std::size_t end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError("pfm: header not terminated by whitespace", pos_);
    }
    return ++pos_;
  }

  std::size_t pos() const noexcept { return pos_; }

 private:
  std::size_t skip() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    return pos_;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline Grid<double> pfm_decode(std::string_view bytes, int channels) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != 'f' && bytes[1] != 'F')) {
    throw FormatError("pfm: missing 'Pf'/'PF' magic", 0);
  }
  const int found = bytes[1] == 'f' ? 1 : 3;
  if (found != channels) {
    throw FormatError(channels == 1 ? "pfm: 'PF' (color) file where a one-channel depth map is required"
                                    : "pfm: 'Pf' (one-channel) file where a color image is required",
                      0);
  }
  if (bytes.size() < 3 || !std::isspace(static_cast<unsigned char>(bytes[2]))) {
    throw FormatError("pfm: malformed magic line", 2);
  }
  HeaderReader h(bytes, 3);
  const long long width = h.integer();
  const long long height = h.integer();
  const double scale = h.real();
  const std::size_t start = h.end_header();
  const std::size_t need = static_cast<std::size_t>(width * height * channels) * 4;
  if (bytes.size() - start < need) {
    throw FormatError("pfm: truncated payload, expected " + std::to_string(need) + " bytes", bytes.size());
  }
  if (bytes.size() - start > need) {
    throw FormatError("pfm: trailing bytes after payload", start + need);
  }
  const bool little = scale < 0.0;
  Grid<double> map(static_cast<int>(height), static_cast<int>(width), channels);
  const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (int y = map.height() - 1; y >= 0; --y) {
    for (int x = 0; x < map.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          const int shift = little ? 8 * b : 8 * (3 - b);
          bits |= static_cast<std::uint32_t>(src[b]) << shift;
        }
        src += 4;
        map.at(y, x, c) = std::bit_cast<float>(bits);
      }
    }
  }
  return map;
}

}  // namespace detail

// One-channel depth or confidence map. Values are stored as float32.
inline std::string pfm_encode(const Grid<double>& map) {
  if (map.channels() != 1) throw UsageError("pfm: depth maps have one channel");
  return detail::pfm_encode(map, "Pf");
}
inline Grid<double> pfm_decode(std::string_view bytes) { return detail::pfm_decode(bytes, 1); }

inline void pfm_write(const std::string& path, const Grid<double>& map) {
  write_file(path, pfm_encode(map));
}
inline Grid<double> pfm_read(const std::string& path) { return pfm_decode(read_file(path)); }

// Three-channel color image.
inline std::string pfm_encode_color(const Grid<double>& image) {
  if (image.channels() != 3) throw UsageError("pfm: color images have three channels");
  return detail::pfm_encode(image, "PF");
}
inline Grid<double> pfm_decode_color(std::string_view bytes) {
  return detail::pfm_decode(bytes, 3);
}
inline void pfm_write_color(const std::string& path, const Grid<double>& image) {
  write_file(path, pfm_encode_color(image));
}
inline Grid<double> pfm_read_color(const std::string& path) {
  return pfm_decode_color(read_file(path));
}

}  // namespace mvster::io

#endif  // MVSTER_IO_PFM_HPP
