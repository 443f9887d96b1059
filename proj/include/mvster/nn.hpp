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

#ifndef MVSTER_NN_HPP
#define MVSTER_NN_HPP

// Inference-only convolution layers shared by the feature pyramid and the
// learned cost-volume regularizer. Kernels are stored [out][in][kd][kh][kw]
// for every layer kind, including transposed convolutions.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mvster/errors.hpp"
#include "mvster/grid.hpp"
#include "mvster/parallel.hpp"

namespace mvster::nn {

enum class LayerKind : std::uint32_t { kConv2d = 0, kConv3d = 1, kDeconv3d = 2 };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kConv3d: return "conv3d";
    case LayerKind::kDeconv3d: return "deconv3d";
  }
  return "unknown";
}

struct LayerShape {
  LayerKind kind = LayerKind::kConv2d;
  int out_channels = 0;
  int in_channels = 0;
  int kernel_depth = 1;
  int kernel_height = 1;
  int kernel_width = 1;
  int stride = 1;          // spatial only; the depth axis is never strided
  bool bn_relu = true;     // followed by batch norm + ReLU

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel_depth *
           kernel_height * kernel_width;
  }
  bool operator==(const LayerShape&) const = default;

  std::string describe() const {
    std::ostringstream ss;
    ss << to_string(kind) << " " << in_channels << "->" << out_channels << " k"
       << kernel_height << "x" << kernel_width << "x" << kernel_depth << " s"
       << stride << (bn_relu ? " bn+relu" : "");
    return ss.str();
  }
};

struct BatchNorm {
  std::vector<float> gamma, beta, mean, var;
  float eps = 1e-5f;
};

// One layer with its raw parameters and the folded per-channel affine
// (scale * conv_without_bias + shift) used at inference.
struct Layer {
  std::string name;
  LayerShape shape;
  std::vector<float> weights;
  std::vector<float> bias;
  BatchNorm bn;  // empty unless shape.bn_relu

  std::vector<double> scale;
  std::vector<double> shift;

  void fold() {
    const int n = shape.out_channels;
    scale.assign(n, 1.0);
    shift.assign(n, 0.0);
    for (int o = 0; o < n; ++o) {
      const double b = bias.empty() ? 0.0 : bias[o];
      if (shape.bn_relu) {
        const double s = bn.gamma[o] / std::sqrt(static_cast<double>(bn.var[o]) + bn.eps);
        scale[o] = s;
        shift[o] = bn.beta[o] + (b - bn.mean[o]) * s;
      } else {
        shift[o] = b;
      }
    }
  }
};

// Channel-interleaved D x H x W x C volume.
struct Volume {
  int depth = 0, height = 0, width = 0, channels = 0;
  std::vector<double> data;

  Volume() = default;
  Volume(int d, int h, int w, int c)
      : depth(d), height(h), width(w), channels(c),
        data(static_cast<std::size_t>(d) * h * w * c, 0.0) {}

  std::size_t index(int z, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(z) * height + y) * width + x) * channels + ch;
  }
  double& at(int z, int y, int x, int ch) { return data[index(z, y, x, ch)]; }
  double at(int z, int y, int x, int ch) const { return data[index(z, y, x, ch)]; }
};

inline double activate(const Layer& layer, int o, double acc) {
  const double v = layer.scale[o] * acc + layer.shift[o];
  return layer.shape.bn_relu ? (v > 0.0 ? v : 0.0) : v;
}

// Zero-padded 2-D convolution, padding k/2, output size ceil(in / stride).
inline Grid<double> conv2d(const Grid<double>& in, const Layer& layer, int threads = 1) {
  const LayerShape& s = layer.shape;
  if (in.channels() != s.in_channels) {
    throw UsageError("conv2d '" + layer.name + "': input has " +
                     std::to_string(in.channels()) + " channels, expected " +
                     std::to_string(s.in_channels));
  }
  const int kh = s.kernel_height, kw = s.kernel_width;
  const int ph = kh / 2, pw = kw / 2;
  const int out_h = (in.height() + s.stride - 1) / s.stride;
  const int out_w = (in.width() + s.stride - 1) / s.stride;
  Grid<double> out(out_h, out_w, s.out_channels);
  parallel_for(0, out_h, threads, [&](int y) {
    for (int x = 0; x < out_w; ++x) {
      for (int o = 0; o < s.out_channels; ++o) {
        double acc = 0.0;
        const float* w_o = layer.weights.data() + static_cast<std::size_t>(o) * s.in_channels * kh * kw;
        for (int i = 0; i < s.in_channels; ++i) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = y * s.stride + ky - ph;
            if (iy < 0 || iy >= in.height()) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = x * s.stride + kx - pw;
              if (ix < 0 || ix >= in.width()) continue;
              acc += w_o[(i * kh + ky) * kw + kx] * in.at(iy, ix, i);
            }
          }
        }
        out.at(y, x, o) = activate(layer, o, acc);
      }
    }
  });
  return out;
}

// 3-D convolution over (depth, height, width); spatial stride only.
inline Volume conv3d(const Volume& in, const Layer& layer, int threads = 1) {
  const LayerShape& s = layer.shape;
  if (in.channels != s.in_channels) {
    throw UsageError("conv3d '" + layer.name + "': channel mismatch");
  }
  const int kd = s.kernel_depth, kh = s.kernel_height, kw = s.kernel_width;
  const int pd = kd / 2, ph = kh / 2, pw = kw / 2;
  const int out_h = (in.height + s.stride - 1) / s.stride;
  const int out_w = (in.width + s.stride - 1) / s.stride;
  Volume out(in.depth, out_h, out_w, s.out_channels);
  parallel_for(0, in.depth * out_h, threads, [&](int zy) {
    const int z = zy / out_h, y = zy % out_h;
    for (int x = 0; x < out_w; ++x) {
      for (int o = 0; o < s.out_channels; ++o) {
        double acc = 0.0;
        for (int i = 0; i < s.in_channels; ++i) {
          for (int kz = 0; kz < kd; ++kz) {
            const int iz = z + kz - pd;
            if (iz < 0 || iz >= in.depth) continue;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = y * s.stride + ky - ph;
              if (iy < 0 || iy >= in.height) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = x * s.stride + kx - pw;
                if (ix < 0 || ix >= in.width) continue;
                const std::size_t wi =
                    ((((static_cast<std::size_t>(o) * s.in_channels + i) * kd + kz) * kh + ky) * kw + kx);
                acc += layer.weights[wi] * in.at(iz, iy, ix, i);
              }
            }
          }
        }
        out.at(z, y, x, o) = activate(layer, o, acc);
      }
    }
  });
  return out;
}

// Transposed 3-D convolution (padding k/2, output padding stride-1), so a
// stride-2 layer exactly doubles height and width.
inline Volume deconv3d(const Volume& in, const Layer& layer, int threads = 1) {
  const LayerShape& s = layer.shape;
  if (in.channels != s.in_channels) {
    throw UsageError("deconv3d '" + layer.name + "': channel mismatch");
  }
  const int kd = s.kernel_depth, kh = s.kernel_height, kw = s.kernel_width;
  const int pd = kd / 2, ph = kh / 2, pw = kw / 2;
  const int out_h = in.height * s.stride;
  const int out_w = in.width * s.stride;
  Volume out(in.depth, out_h, out_w, s.out_channels);
  parallel_for(0, in.depth * out_h, threads, [&](int zy) {
    const int z = zy / out_h, y = zy % out_h;
    for (int x = 0; x < out_w; ++x) {
      for (int o = 0; o < s.out_channels; ++o) {
        double acc = 0.0;
        for (int i = 0; i < s.in_channels; ++i) {
          for (int kz = 0; kz < kd; ++kz) {
            const int iz = z + pd - kz;
            if (iz < 0 || iz >= in.depth) continue;
            for (int ky = 0; ky < kh; ++ky) {
              const int ny = y + ph - ky;
              if (ny < 0 || ny % s.stride != 0) continue;
              const int iy = ny / s.stride;
              if (iy >= in.height) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int nx = x + pw - kx;
                if (nx < 0 || nx % s.stride != 0) continue;
                const int ix = nx / s.stride;
                if (ix >= in.width) continue;
                const std::size_t wi =
                    ((((static_cast<std::size_t>(o) * s.in_channels + i) * kd + kz) * kh + ky) * kw + kx);
                acc += layer.weights[wi] * in.at(iz, iy, ix, i);
              }
            }
          }
        }
        out.at(z, y, x, o) = activate(layer, o, acc);
      }
    }
  });
  return out;
}

inline Volume apply(const Volume& in, const Layer& layer, int threads = 1) {
  switch (layer.shape.kind) {
    case LayerKind::kConv3d: return conv3d(in, layer, threads);
    case LayerKind::kDeconv3d: return deconv3d(in, layer, threads);
    case LayerKind::kConv2d: break;
  }
  throw UsageError("layer '" + layer.name + "' is not a 3-D layer");
}

inline void add_inplace(Volume& dst, const Volume& src) {
  if (dst.data.size() != src.data.size()) throw UsageError("volume add: shape mismatch");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace mvster::nn

#endif  // MVSTER_NN_HPP
