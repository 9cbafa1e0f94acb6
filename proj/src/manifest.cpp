// SPDX-License-Identifier: Apache-2.0
#include "ubt/manifest.hpp"

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ubt/errors.hpp"

namespace ubt {

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot hash missing file: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return fnv1a_hex(buf.str());
}

void RunManifest::record(const std::filesystem::path& dir,
                         const std::string& relpath) {
  artifacts[relpath] = hash_file(dir / relpath);
}

bool RunManifest::verify(const std::filesystem::path& dir,
                         std::string* first_bad) const {
  for (const auto& [rel, hash] : artifacts) {
    const std::filesystem::path p = dir / rel;
    if (!std::filesystem::exists(p) || hash_file(p) != hash) {
      if (first_bad != nullptr) *first_bad = rel;
      return false;
    }
  }
  return true;
}

void RunManifest::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  os << "config_hash " << config_hash << "\n";
  for (const auto& [rel, hash] : artifacts) {
    os << "artifact " << hash << " " << rel << "\n";
  }
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest: " + path.string());
  RunManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config_hash") {
      ls >> m.config_hash;
    } else if (tag == "artifact") {
      std::string hash, rel;
      ls >> hash;
      std::getline(ls, rel);
      if (!rel.empty() && rel.front() == ' ') rel.erase(0, 1);
      if (hash.empty() || rel.empty()) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) +
                          ": malformed artifact line");
      }
      m.artifacts[rel] = hash;
    } else {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": unknown manifest tag '" + tag + "'");
    }
  }
  return m;
}

}  // namespace ubt
