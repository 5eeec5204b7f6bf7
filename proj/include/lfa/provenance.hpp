#pragma once

// Git-style content hashes: a file hashes as SHA-1("blob <size>\0" + bytes),
// a set of inputs as SHA-1 over "<hash> <name>\n" lines sorted by name.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lfa/error.hpp"

namespace lfa::provenance {

inline std::string sha1_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1)
    throw RuntimeFailure("SHA-1 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::string blob_hash(std::string_view content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data.append(content);
  return sha1_hex(data);
}

inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read '" + path.string() + "' for hashing");
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return blob_hash(content);
}

struct HashEntry {
  std::string name;
  std::string hash;
};

/// Every regular file under `path` (or `path` itself), named relative to
/// `label`.
inline std::vector<HashEntry> hash_tree(const std::filesystem::path& path, const std::string& label) {
  namespace fs = std::filesystem;
  std::vector<HashEntry> out;
  if (fs::is_regular_file(path)) {
    out.push_back({label, file_hash(path)});
  } else if (fs::is_directory(path)) {
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file())
        out.push_back({label + "/" + fs::relative(e.path(), path).generic_string(), file_hash(e.path())});
  } else {
    throw IngestionError("input '" + path.string() + "' does not exist");
  }
  return out;
}

inline std::string combine(std::vector<HashEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const HashEntry& a, const HashEntry& b) { return a.name < b.name; });
  std::string listing;
  for (const auto& e : entries) listing += e.hash + " " + e.name + "\n";
  return sha1_hex(listing);
}

}  // namespace lfa::provenance
