#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <unordered_map>
#include <vector>

#include "cape/datamodel.hpp"

namespace cape {

/// Per-record feature vectors with labels, persisted as an EMB1 cache.
struct EmbeddingSet {
  uint32_t dim = 0;
  std::vector<uint64_t> record_ids;
  std::vector<uint16_t> cohort_ids;
  std::vector<float> ages;   // NaN = missing
  std::vector<uint8_t> sexes; // data::Sex values
  Eigen::MatrixXf values;    // [dim x n]

  size_t size() const { return record_ids.size(); }
  std::unordered_map<uint64_t, size_t> index() const;
  void append(const EmbeddingSet& other);
};

void save_emb1(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_emb1(const std::filesystem::path& path);

} // namespace cape
