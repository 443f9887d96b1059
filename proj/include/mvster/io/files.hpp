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

#ifndef MVSTER_IO_FILES_HPP
#define MVSTER_IO_FILES_HPP

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mvster/errors.hpp"

namespace mvster::io {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Output files of one command. Everything written through the transaction
// is deleted again unless commit() is reached, and so is the output
// directory when the transaction created it.
class OutputTransaction {
 public:
  explicit OutputTransaction(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (!std::filesystem::exists(dir_, ec)) {
      if (!std::filesystem::create_directories(dir_, ec) || ec) {
        throw IoError("cannot create output directory '" + dir_.string() + "'");
      }
      created_dir_ = true;
    } else if (!std::filesystem::is_directory(dir_, ec)) {
      throw IoError("output path '" + dir_.string() + "' is not a directory");
    }
  }

  OutputTransaction(const OutputTransaction&) = delete;
  OutputTransaction& operator=(const OutputTransaction&) = delete;

  ~OutputTransaction() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = written_.rbegin(); it != written_.rend(); ++it) {
      std::filesystem::remove(*it, ec);
    }
    if (created_dir_) std::filesystem::remove_all(dir_, ec);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  // Path of `name` inside the output directory, registered for cleanup.
  std::string path(const std::string& name) {
    const std::filesystem::path p = dir_ / name;
    if (p.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(p.parent_path(), ec);
    }
    written_.push_back(p);
    names_.push_back(name);
    return p.string();
  }

  void write(const std::string& name, std::string_view bytes) { write_file(path(name), bytes); }

  const std::vector<std::string>& names() const noexcept { return names_; }

  void commit() noexcept { committed_ = true; }

 private:
  std::filesystem::path dir_;
  bool created_dir_ = false;
  bool committed_ = false;
  std::vector<std::filesystem::path> written_;
  std::vector<std::string> names_;
};

}  // namespace mvster::io

#endif  // MVSTER_IO_FILES_HPP
