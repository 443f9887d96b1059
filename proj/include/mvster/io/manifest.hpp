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

#ifndef MVSTER_IO_MANIFEST_HPP
#define MVSTER_IO_MANIFEST_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "mvster/errors.hpp"
#include "mvster/io/kv_config.hpp"

namespace mvster::io {

inline constexpr const char* kManifestFormat = "mvster-run/1";
inline constexpr const char* kManifestName = "manifest.txt";

// Record of one command-line run: what went in, the exact configuration
// used and every artifact written.
struct RunManifest {
  std::string command;
  std::vector<std::string> inputs;
  std::string config_path;  // empty when defaults were used
  std::string output_dir;
  std::vector<std::string> artifacts;
  KeyValueFile config;

  // Fails before anything is written when an input is missing.
  void check_inputs() const {
    std::vector<std::string> all = inputs;
    if (!config_path.empty()) all.push_back(config_path);
    for (const auto& p : all) {
      std::error_code ec;
      if (!std::filesystem::exists(p, ec)) throw IoError("input '" + p + "' does not exist");
    }
  }

  KeyValueFile to_kv() const {
    KeyValueFile kv;
    kv.set("format", kManifestFormat);
    kv.set("command", command);
    for (std::size_t i = 0; i < inputs.size(); ++i) kv.set("input." + pad(i), inputs[i]);
    if (!config_path.empty()) kv.set("config_path", config_path);
    kv.set("output_dir", output_dir);
    for (std::size_t i = 0; i < artifacts.size(); ++i) kv.set("artifact." + pad(i), artifacts[i]);
    for (const auto& key : config.keys()) kv.set("config." + key, config.get(key));
    return kv;
  }

  static RunManifest from_kv(const KeyValueFile& kv) {
    if (kv.get_or("format", "") != kManifestFormat) {
      throw ConfigError("manifest: unsupported format tag '" + kv.get_or("format", "") + "'");
    }
    RunManifest m;
    m.command = kv.get("command");
    m.config_path = kv.get_or("config_path", "");
    m.output_dir = kv.get("output_dir");
    for (const auto& k : kv.keys_with_prefix("input.")) m.inputs.push_back(kv.get(k));
    for (const auto& k : kv.keys_with_prefix("artifact.")) m.artifacts.push_back(kv.get(k));
    for (const auto& k : kv.keys_with_prefix("config.")) m.config.set(k.substr(7), kv.get(k));
    return m;
  }

 private:
  // Zero-padded so lexicographic key order is list order.
  static std::string pad(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
  }
};

}  // namespace mvster::io

#endif  // MVSTER_IO_MANIFEST_HPP
