#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace preflab {

/// 64-bit FNV-1a. Stable across platforms; used for feature hashing and
/// input digests in run manifests.
constexpr std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::uint64_t h);

/// Digest of a file's bytes ("fnv1a64:<hex>"); throws if unreadable.
std::string file_digest(const std::filesystem::path& path);

}  // namespace preflab
