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

#ifndef MVSTER_IO_KV_CONFIG_HPP
#define MVSTER_IO_KV_CONFIG_HPP

// Flat key-value text used for pipeline configs, scene specs and run
// manifests:
//
//   # comment
//   key = value
//   list_key = 1.0 2.0 3.0
//
// Keys are unique; blank lines and `#` comments are ignored. Values keep
// their internal whitespace and are trimmed at both ends.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mvster/errors.hpp"

namespace mvster::io {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(std::string_view text) {
    KeyValueFile kv;
    std::size_t offset = 0;
    int line_no = 0;
    while (offset <= text.size()) {
      const std::size_t nl = text.find('\n', offset);
      const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
      std::string_view line = text.substr(offset, end - offset);
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) {
        line = line.substr(0, hash);
      }
      line = detail::trim(line);
      if (!line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
          throw FormatError("line " + std::to_string(line_no) +
                                ": expected 'key = value'",
                            offset);
        }
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string value(detail::trim(line.substr(eq + 1)));
        if (key.empty()) {
          throw FormatError("line " + std::to_string(line_no) + ": empty key",
                            offset);
        }
        if (kv.values_.count(key)) {
          throw FormatError("line " + std::to_string(line_no) +
                                ": duplicate key '" + key + "'",
                            offset);
        }
        kv.values_[key] = value;
      }
      if (nl == std::string_view::npos) break;
      offset = nl + 1;
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, std::string value) {
    values_[key] = std::move(value);
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  double get_double(const std::string& key) const {
    return parse_double(key, get(key));
  }
  double get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long long get_int(const std::string& key) const {
    const std::string& v = get(key);
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
  }
  long long get_int_or(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  bool get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    std::istringstream ss(get(key));
    std::string token;
    while (ss >> token) out.push_back(parse_double(key, token));
    return out;
  }

  std::vector<int> get_ints(const std::string& key) const {
    std::vector<int> out;
    for (double v : get_doubles(key)) {
      if (v != static_cast<int>(v)) {
        throw ConfigError("key '" + key + "': expected integers");
      }
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  // Keys sharing `prefix` (e.g. "plane." -> "plane.0", "plane.1"), sorted.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

  // Sorted by key, one "key = value" per line.
  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static double parse_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

// Formats a double so that parsing it back yields the same value.
inline std::string format_exact(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace mvster::io

#endif  // MVSTER_IO_KV_CONFIG_HPP
