// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace ubt {

std::string fnv1a_hex(std::string_view bytes);
std::string hash_file(const std::filesystem::path& path);

// Run bookkeeping: the config hash plus a content hash per artifact. The
// manifest file itself is rewritten on every update; artifacts are not.
struct RunManifest {
  std::string config_hash;
  std::map<std::string, std::string> artifacts;  // relative path -> hash

  void record(const std::filesystem::path& dir, const std::string& relpath);

  // True when every listed artifact exists under `dir` with a matching hash.
  bool verify(const std::filesystem::path& dir, std::string* first_bad) const;

  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

}  // namespace ubt
