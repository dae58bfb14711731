#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace cape {

inline uint64_t fnv1a64(std::span<const std::byte> bytes, uint64_t h = 0xcbf29ce484222325ull) {
  for (std::byte b : bytes) {
    h ^= static_cast<uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(std::as_bytes(std::span(s.data(), s.size())));
}

std::string to_hex(uint64_t v);

/// FNV-1a over the raw bytes of a file.
uint64_t digest_file(const std::filesystem::path& p);

} // namespace cape
