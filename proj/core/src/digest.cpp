#include "cape/digest.hpp"

#include <cstdio>
#include <vector>

#include "cape/common.hpp"

namespace cape {

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t digest_file(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.string().c_str(), "rb");
  require(f != nullptr, "io: cannot open " + p.string());
  uint64_t h = 0xcbf29ce484222325ull;
  std::vector<std::byte> buf(1 << 16);
  size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), f)) > 0)
    h = fnv1a64(std::span(buf.data(), got), h);
  std::fclose(f);
  return h;
}

} // namespace cape
