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

#ifndef MVSTER_ERRORS_HPP
#define MVSTER_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvster {

// Base class of every error thrown by the library. `kind()` is a short
// machine-parsable tag used by the command-line front end.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Invalid configuration values (hypothesis counts, group sizes, epsilon...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

// API misuse: shape mismatches, empty inputs, wrong call order.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage", message) {}
};

// Malformed or truncated files. Carries the byte offset of the problem.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error("format", message + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Weight bundles whose layers disagree with the expected architecture.
class LoadError : public Error {
 public:
  explicit LoadError(const std::string& message) : Error("load", message) {}
};

// Filesystem problems (missing inputs, unwritable outputs).
class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace mvster

#endif  // MVSTER_ERRORS_HPP
