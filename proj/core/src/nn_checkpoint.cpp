#include "cape/nn/checkpoint.hpp"

#include <cstdio>
#include <cstring>

namespace cape::nn {

namespace {

constexpr char kMagic[4] = {'N', 'N', 'P', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, size_t& pos) {
  require(pos + sizeof(T) <= in.size(), "truncated: checkpoint body");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, uint64_t config_digest,
                     const std::vector<std::pair<std::string, const Mat<float>*>>& tensors) {
  std::string out;
  out.append(kMagic, 4);
  put(out, kVersion);
  put(out, config_digest);
  put(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, mat] : tensors) {
    require(name.size() <= 65535, "checkpoint: tensor name too long");
    put(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    put(out, static_cast<uint64_t>(mat->rows()));
    put(out, static_cast<uint64_t>(mat->cols()));
    for (Eigen::Index i = 0; i < mat->size(); ++i) put(out, mat->data()[i]);
  }

  const std::filesystem::path tmp = path.string() + ".tmp";
  std::FILE* f = std::fopen(tmp.string().c_str(), "wb");
  require(f != nullptr, "io: cannot create " + tmp.string());
  bool ok = std::fwrite(out.data(), 1, out.size(), f) == out.size();
  ok = std::fclose(f) == 0 && ok;
  require(ok, "io: write failed for " + tmp.string());
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  require(f != nullptr, "missing-file: cannot open checkpoint " + path.string());
  std::string in;
  char buf[1 << 16];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) in.append(buf, got);
  std::fclose(f);

  require(in.size() >= 20, "truncated: checkpoint header in " + path.string());
  require(std::memcmp(in.data(), kMagic, 4) == 0, "bad-magic: not an NNP1 checkpoint: " + path.string());
  size_t pos = 4;
  const uint32_t version = get<uint32_t>(in, pos);
  require(version == kVersion, "version-mismatch: checkpoint version " + std::to_string(version));

  LoadedCheckpoint ckpt;
  ckpt.config_digest = get<uint64_t>(in, pos);
  const uint32_t count = get<uint32_t>(in, pos);
  for (uint32_t k = 0; k < count; ++k) {
    const uint16_t name_len = get<uint16_t>(in, pos);
    require(pos + name_len <= in.size(), "truncated: checkpoint name");
    std::string name(in.data() + pos, name_len);
    pos += name_len;
    const uint64_t rows = get<uint64_t>(in, pos);
    const uint64_t cols = get<uint64_t>(in, pos);
    Mat<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get<float>(in, pos);
    ckpt.tensors.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

void save_encoder(Encoder<float>& enc, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  enc.visit_state([&](const std::string& name, Mat<float>& m) { tensors.emplace_back(name, &m); });
  save_checkpoint(path, enc.config().digest(), tensors);
}

Encoder<float> load_encoder(const EncoderConfig& cfg, const std::filesystem::path& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  require(ckpt.config_digest == cfg.digest(),
          "digest-mismatch: checkpoint " + path.string() + " was written with a different config");
  Encoder<float> enc(cfg, 0);
  size_t used = 0;
  enc.visit_state([&](const std::string& name, Mat<float>& m) {
    auto it = ckpt.tensors.find(name);
    require(it != ckpt.tensors.end(), "checkpoint: missing tensor " + name);
    require(it->second.rows() == m.rows() && it->second.cols() == m.cols(),
            "checkpoint: shape mismatch for " + name);
    m = it->second;
    ++used;
  });
  require(used == ckpt.tensors.size(), "checkpoint: unexpected extra tensors in " + path.string());
  return enc;
}

} // namespace cape::nn
