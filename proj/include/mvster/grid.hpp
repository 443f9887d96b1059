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

#ifndef MVSTER_GRID_HPP
#define MVSTER_GRID_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mvster/errors.hpp"

namespace mvster {

// Samplers accept continuous coordinates this far outside [0, W-1] x
// [0, H-1] and clamp them, absorbing reprojection round-off at the border.
inline constexpr double kSampleBoundaryTolerance = 1e-9;

// Dense row-major H x W x C array with interleaved channels.
template <typename T>
class Grid {
 public:
  Grid() = default;

  Grid(int height, int width, int channels = 1, T fill = T{})
      : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 1) {
      throw UsageError("Grid: invalid shape");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(int y, int x, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  T& at(int y, int x, int c = 0) noexcept { return data_[index(y, x, c)]; }
  const T& at(int y, int x, int c = 0) const noexcept {
    return data_[index(y, x, c)];
  }

  std::span<T> pixel(int y, int x) noexcept {
    return {data_.data() + index(y, x), static_cast<std::size_t>(channels_)};
  }
  std::span<const T> pixel(int y, int x) const noexcept {
    return {data_.data() + index(y, x), static_cast<std::size_t>(channels_)};
  }

  bool contains(int y, int x) const noexcept {
    return y >= 0 && y < height_ && x >= 0 && x < width_;
  }

  bool same_shape(const Grid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const Grid<T>& grid) {
  for (const T& v : grid.data()) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

}  // namespace mvster

#endif  // MVSTER_GRID_HPP
