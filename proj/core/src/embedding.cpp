#include "cape/embedding.hpp"

#include <cstdio>
#include <cstring>

#include "cape/common.hpp"

namespace cape {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, size_t& pos) {
  require(pos + sizeof(T) <= in.size(), "truncated: embedding cache body");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

} // namespace

std::unordered_map<uint64_t, size_t> EmbeddingSet::index() const {
  std::unordered_map<uint64_t, size_t> map;
  map.reserve(record_ids.size());
  for (size_t i = 0; i < record_ids.size(); ++i) map.emplace(record_ids[i], i);
  return map;
}

void EmbeddingSet::append(const EmbeddingSet& other) {
  if (size() == 0) {
    *this = other;
    return;
  }
  require(dim == other.dim, "embedding: dimension mismatch on append");
  const Eigen::Index old_n = values.cols();
  values.conservativeResize(dim, old_n + other.values.cols());
  values.rightCols(other.values.cols()) = other.values;
  record_ids.insert(record_ids.end(), other.record_ids.begin(), other.record_ids.end());
  cohort_ids.insert(cohort_ids.end(), other.cohort_ids.begin(), other.cohort_ids.end());
  ages.insert(ages.end(), other.ages.begin(), other.ages.end());
  sexes.insert(sexes.end(), other.sexes.begin(), other.sexes.end());
}

void save_emb1(const EmbeddingSet& set, const std::filesystem::path& path) {
  require(set.record_ids.size() == set.cohort_ids.size() && set.record_ids.size() == set.ages.size() &&
              set.record_ids.size() == set.sexes.size() &&
              static_cast<Eigen::Index>(set.record_ids.size()) == set.values.cols() &&
              static_cast<Eigen::Index>(set.dim) == set.values.rows(),
          "embedding: inconsistent set");
  std::string out;
  out.append(kMagic, 4);
  put(out, kVersion);
  put(out, set.dim);
  put(out, static_cast<uint64_t>(set.size()));
  for (size_t i = 0; i < set.size(); ++i) {
    put(out, set.record_ids[i]);
    put(out, set.cohort_ids[i]);
    put(out, set.ages[i]);
    put(out, set.sexes[i]);
    for (uint32_t d = 0; d < set.dim; ++d) put(out, set.values(d, static_cast<Eigen::Index>(i)));
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  std::FILE* f = std::fopen(tmp.string().c_str(), "wb");
  require(f != nullptr, "io: cannot create " + tmp.string());
  bool ok = std::fwrite(out.data(), 1, out.size(), f) == out.size();
  ok = std::fclose(f) == 0 && ok;
  require(ok, "io: write failed for " + tmp.string());
  std::filesystem::rename(tmp, path);
}

EmbeddingSet load_emb1(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  require(f != nullptr, "missing-file: cannot open embedding cache " + path.string());
  std::string in;
  char buf[1 << 16];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) in.append(buf, got);
  std::fclose(f);

  require(in.size() >= 20, "truncated: embedding cache header in " + path.string());
  require(std::memcmp(in.data(), kMagic, 4) == 0, "bad-magic: not an EMB1 cache: " + path.string());
  size_t pos = 4;
  const uint32_t version = get<uint32_t>(in, pos);
  require(version == kVersion, "version-mismatch: embedding cache version " + std::to_string(version));

  EmbeddingSet set;
  set.dim = get<uint32_t>(in, pos);
  const uint64_t count = get<uint64_t>(in, pos);
  set.record_ids.resize(count);
  set.cohort_ids.resize(count);
  set.ages.resize(count);
  set.sexes.resize(count);
  set.values.resize(set.dim, static_cast<Eigen::Index>(count));
  for (uint64_t i = 0; i < count; ++i) {
    set.record_ids[i] = get<uint64_t>(in, pos);
    set.cohort_ids[i] = get<uint16_t>(in, pos);
    set.ages[i] = get<float>(in, pos);
    set.sexes[i] = get<uint8_t>(in, pos);
    for (uint32_t d = 0; d < set.dim; ++d) set.values(d, static_cast<Eigen::Index>(i)) = get<float>(in, pos);
  }
  return set;
}

} // namespace cape
