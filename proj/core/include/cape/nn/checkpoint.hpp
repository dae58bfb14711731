#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cape/nn/encoder.hpp"

namespace cape::nn {

/// NNP1 checkpoint: magic "NNP1", version, config digest, named float32
/// blocks, little-endian.
void save_checkpoint(const std::filesystem::path& path, uint64_t config_digest,
                     const std::vector<std::pair<std::string, const Mat<float>*>>& tensors);

struct LoadedCheckpoint {
  uint64_t config_digest = 0;
  std::map<std::string, Mat<float>> tensors;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

void save_encoder(Encoder<float>& enc, const std::filesystem::path& path);

/// Rebuilds the encoder state; the checkpoint digest must match cfg.
Encoder<float> load_encoder(const EncoderConfig& cfg, const std::filesystem::path& path);

} // namespace cape::nn
