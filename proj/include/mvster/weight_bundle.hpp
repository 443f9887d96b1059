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

#ifndef MVSTER_WEIGHT_BUNDLE_HPP
#define MVSTER_WEIGHT_BUNDLE_HPP

// Portable weight bundles for the feature pyramid and the learned
// regularizer.
//
// Binary layout (all integers uint32, all reals float32, little-endian):
//
//   "MVWB" | version (=1) | layer_count
//   per layer:
//     kind out_channels in_channels kernel_depth kernel_height kernel_width
//     stride flags(bit0: batch norm + ReLU)
//   per layer, in the same order:
//     weights[out*in*kd*kh*kw]  ([out][in][kd][kh][kw])
//     bias[out]
//     if bn: gamma[out] beta[out] running_mean[out] running_var[out] eps
//   crc32 of every preceding byte (zlib polynomial)

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "mvster/errors.hpp"
#include "mvster/nn.hpp"

namespace mvster {

static_assert(std::endian::native == std::endian::little,
              "weight bundles assume a little-endian host");

enum class WeightProvenance { kLoadedFile, kSeededRandom, kOracleBypass };

inline const char* to_string(WeightProvenance p) {
  switch (p) {
    case WeightProvenance::kLoadedFile: return "loaded-file";
    case WeightProvenance::kSeededRandom: return "seeded-random";
    case WeightProvenance::kOracleBypass: return "oracle-bypass";
  }
  return "unknown";
}

struct NamedShape {
  std::string name;
  nn::LayerShape shape;
};

// Feature pyramid: four stages of convolutions followed by a 1x1 inner
// (lateral, 64 channels) and a 1x1 output layer each. Inner and output
// layers carry no batch norm or activation.
inline std::vector<NamedShape> fpn_layout() {
  using nn::LayerKind;
  std::vector<NamedShape> layers;
  const std::array<int, 4> channels{8, 16, 32, 64};
  int in = 3;
  for (int stage = 0; stage < 4; ++stage) {
    const int c = channels[stage];
    const std::string prefix = "fpn.stage" + std::to_string(stage + 1);
    if (stage == 0) {
      layers.push_back({prefix + ".conv0", {LayerKind::kConv2d, c, in, 1, 3, 3, 1, true}});
      layers.push_back({prefix + ".conv1", {LayerKind::kConv2d, c, c, 1, 3, 3, 1, true}});
    } else {
      layers.push_back({prefix + ".conv0", {LayerKind::kConv2d, c, in, 1, 5, 5, 2, true}});
      layers.push_back({prefix + ".conv1", {LayerKind::kConv2d, c, c, 1, 3, 3, 1, true}});
      layers.push_back({prefix + ".conv2", {LayerKind::kConv2d, c, c, 1, 3, 3, 1, true}});
    }
    layers.push_back({prefix + ".inner", {LayerKind::kConv2d, 64, c, 1, 1, 1, 1, false}});
    layers.push_back({prefix + ".output", {LayerKind::kConv2d, c, 64, 1, 1, 1, 1, false}});
    in = c;
  }
  return layers;
}

// Cost-volume UNet for a G-group input. 3x3x1 kernels act on height and
// width only; the trailing 1x1x1 head maps the 8 output channels to one
// logit per depth bin.
inline std::vector<NamedShape> unet_layout(int groups) {
  using nn::LayerKind;
  return {
      {"unet.stage1.conv0", {LayerKind::kConv3d, 8, groups, 1, 3, 3, 1, true}},
      {"unet.stage1.conv1", {LayerKind::kConv3d, 16, 8, 1, 3, 3, 2, true}},
      {"unet.stage1.conv2", {LayerKind::kConv3d, 16, 16, 3, 3, 3, 1, true}},
      {"unet.stage1.inner", {LayerKind::kDeconv3d, 8, 16, 1, 3, 3, 2, true}},
      {"unet.stage1.output", {LayerKind::kDeconv3d, 8, 8, 3, 3, 3, 1, false}},
      {"unet.stage2.conv0", {LayerKind::kConv3d, 32, 16, 1, 3, 3, 2, true}},
      {"unet.stage2.conv1", {LayerKind::kConv3d, 32, 32, 3, 3, 3, 1, true}},
      {"unet.stage2.inner", {LayerKind::kDeconv3d, 16, 32, 1, 3, 3, 2, true}},
      {"unet.stage3.conv0", {LayerKind::kConv3d, 64, 32, 1, 3, 3, 2, true}},
      {"unet.stage3.conv1", {LayerKind::kConv3d, 64, 64, 3, 3, 3, 1, true}},
      {"unet.stage3.inner", {LayerKind::kDeconv3d, 32, 64, 1, 3, 3, 2, true}},
      {"unet.prob", {LayerKind::kConv3d, 1, 8, 1, 1, 1, 1, false}},
  };
}

class WeightBundle {
 public:
  WeightBundle() = default;

  static WeightBundle oracle_bypass() {
    WeightBundle b;
    b.provenance_ = WeightProvenance::kOracleBypass;
    return b;
  }

  // Deterministic He-uniform weights and mild batch-norm statistics.
  static WeightBundle seeded_random(const std::vector<NamedShape>& layout,
                                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double lo, double hi) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      return static_cast<float>(lo + (hi - lo) * u);
    };
    WeightBundle b;
    b.provenance_ = WeightProvenance::kSeededRandom;
    for (const auto& [name, shape] : layout) {
      nn::Layer layer;
      layer.name = name;
      layer.shape = shape;
      const double fan_in = static_cast<double>(shape.in_channels) *
                            shape.kernel_depth * shape.kernel_height * shape.kernel_width;
      const double a = std::sqrt(6.0 / fan_in);
      layer.weights.resize(shape.weight_count());
      for (auto& w : layer.weights) w = uniform(-a, a);
      layer.bias.resize(shape.out_channels);
      for (auto& v : layer.bias) v = uniform(-0.05, 0.05);
      if (shape.bn_relu) {
        const int n = shape.out_channels;
        layer.bn.gamma.resize(n);
        layer.bn.beta.resize(n);
        layer.bn.mean.resize(n);
        layer.bn.var.resize(n);
        for (int o = 0; o < n; ++o) {
          layer.bn.gamma[o] = uniform(0.8, 1.2);
          layer.bn.beta[o] = uniform(-0.1, 0.1);
          layer.bn.mean[o] = uniform(-0.1, 0.1);
          layer.bn.var[o] = uniform(0.5, 1.5);
        }
      }
      layer.fold();
      b.layers_.push_back(std::move(layer));
    }
    return b;
  }

  static WeightBundle from_layers(std::vector<nn::Layer> layers,
                                  WeightProvenance provenance) {
    WeightBundle b;
    b.provenance_ = provenance;
    b.layers_ = std::move(layers);
    for (auto& l : b.layers_) l.fold();
    return b;
  }

  WeightProvenance provenance() const noexcept { return provenance_; }
  const std::vector<nn::Layer>& layers() const noexcept { return layers_; }
  const nn::Layer& layer(std::size_t i) const { return layers_.at(i); }

  // Throws LoadError naming the first layer that disagrees with `layout`.
  void check_layout(const std::vector<NamedShape>& layout) const {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (i >= layers_.size()) {
        throw LoadError("layer " + std::to_string(i) + " (" + layout[i].name +
                        "): missing from bundle");
      }
      if (!(layers_[i].shape == layout[i].shape)) {
        throw LoadError("layer " + std::to_string(i) + " (" + layout[i].name +
                        "): expected " + layout[i].shape.describe() + ", got " +
                        layers_[i].shape.describe());
      }
    }
    if (layers_.size() != layout.size()) {
      throw LoadError("layer " + std::to_string(layout.size()) +
                      ": unexpected extra layer (bundle has " +
                      std::to_string(layers_.size()) + ")");
    }
  }

  std::string serialize() const {
    std::string out = "MVWB";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(layers_.size()));
    for (const auto& l : layers_) {
      const auto& s = l.shape;
      for (std::uint32_t v : {static_cast<std::uint32_t>(s.kind),
                              static_cast<std::uint32_t>(s.out_channels),
                              static_cast<std::uint32_t>(s.in_channels),
                              static_cast<std::uint32_t>(s.kernel_depth),
                              static_cast<std::uint32_t>(s.kernel_height),
                              static_cast<std::uint32_t>(s.kernel_width),
                              static_cast<std::uint32_t>(s.stride),
                              static_cast<std::uint32_t>(s.bn_relu ? 1 : 0)}) {
        put_u32(out, v);
      }
    }
    for (const auto& l : layers_) {
      put_floats(out, l.weights);
      put_floats(out, l.bias);
      if (l.shape.bn_relu) {
        put_floats(out, l.bn.gamma);
        put_floats(out, l.bn.beta);
        put_floats(out, l.bn.mean);
        put_floats(out, l.bn.var);
        put_floats(out, std::vector<float>{l.bn.eps});
      }
    }
    put_u32(out, checksum(out));
    return out;
  }

  static WeightBundle deserialize(const std::string& bytes) {
    Reader r{bytes, 0};
    if (bytes.size() < 4 || bytes.compare(0, 4, "MVWB") != 0) {
      throw FormatError("weight bundle: bad magic", 0);
    }
    r.pos = 4;
    if (bytes.size() < 8) throw FormatError("weight bundle: truncated header", bytes.size());
    const std::uint32_t version = r.u32();
    if (version != 1) {
      throw FormatError("weight bundle: unsupported version " + std::to_string(version), 4);
    }
    const std::uint32_t count = r.u32();
    if (count > 4096) throw FormatError("weight bundle: implausible layer count", 8);
    std::vector<nn::Layer> layers(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      auto& s = layers[i].shape;
      const std::size_t at = r.pos;
      const std::uint32_t kind = r.u32();
      if (kind > 2) throw FormatError("weight bundle: unknown layer kind", at);
      s.kind = static_cast<nn::LayerKind>(kind);
      s.out_channels = static_cast<int>(r.u32());
      s.in_channels = static_cast<int>(r.u32());
      s.kernel_depth = static_cast<int>(r.u32());
      s.kernel_height = static_cast<int>(r.u32());
      s.kernel_width = static_cast<int>(r.u32());
      s.stride = static_cast<int>(r.u32());
      s.bn_relu = (r.u32() & 1u) != 0;
      if (s.out_channels <= 0 || s.in_channels <= 0 || s.kernel_depth <= 0 ||
          s.kernel_height <= 0 || s.kernel_width <= 0 || s.stride <= 0 ||
          s.weight_count() > (1u << 26)) {
        throw FormatError("weight bundle: invalid shape for layer " + std::to_string(i), at);
      }
      layers[i].name = "layer" + std::to_string(i);
    }
    for (auto& l : layers) {
      const int n = l.shape.out_channels;
      l.weights = r.floats(l.shape.weight_count());
      l.bias = r.floats(n);
      if (l.shape.bn_relu) {
        l.bn.gamma = r.floats(n);
        l.bn.beta = r.floats(n);
        l.bn.mean = r.floats(n);
        l.bn.var = r.floats(n);
        l.bn.eps = r.floats(1)[0];
      }
    }
    const std::size_t body_end = r.pos;
    const std::uint32_t stored = r.u32();
    if (r.pos != bytes.size()) {
      throw FormatError("weight bundle: trailing bytes", r.pos);
    }
    if (stored != checksum(bytes.substr(0, body_end))) {
      throw FormatError("weight bundle: checksum mismatch", body_end);
    }
    return from_layers(std::move(layers), WeightProvenance::kLoadedFile);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  // Loads and checks the bundle against `layout`, naming layers after it.
  static WeightBundle load(const std::string& path,
                           const std::vector<NamedShape>& layout) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    WeightBundle b = deserialize(ss.str());
    b.check_layout(layout);
    for (std::size_t i = 0; i < layout.size(); ++i) b.layers_[i].name = layout[i].name;
    return b;
  }

  static std::uint32_t checksum(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
  }

 private:
  struct Reader {
    const std::string& bytes;
    std::size_t pos;

    std::uint32_t u32() {
      if (pos + 4 > bytes.size()) throw FormatError("weight bundle: truncated", pos);
      std::uint32_t v;
      std::memcpy(&v, bytes.data() + pos, 4);
      pos += 4;
      return v;
    }
    std::vector<float> floats(std::size_t n) {
      if (pos + 4 * n > bytes.size()) throw FormatError("weight bundle: truncated payload", pos);
      std::vector<float> v(n);
      std::memcpy(v.data(), bytes.data() + pos, 4 * n);
      pos += 4 * n;
      return v;
    }
  };

  static void put_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
  }
  static void put_floats(std::string& out, const std::vector<float>& v) {
    out.append(reinterpret_cast<const char*>(v.data()), 4 * v.size());
  }

  WeightProvenance provenance_ = WeightProvenance::kSeededRandom;
  std::vector<nn::Layer> layers_;
};

}  // namespace mvster

#endif  // MVSTER_WEIGHT_BUNDLE_HPP
