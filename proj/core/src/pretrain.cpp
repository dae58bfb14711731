#include <cmath>
#include <map>
#include <unordered_map>

#include "cape/contrastive.hpp"
#include "cape/nn/checkpoint.hpp"
#include "cape/nn/optim.hpp"
#include "cape/parallel.hpp"

namespace cape::ssl {

void PretrainConfig::validate() const {
  require(batch_pairs >= 1, "pretrain: batch_pairs must be positive");
  require(epochs >= 1, "pretrain: epochs must be >= 1");
  require(eta0 > 0, "pretrain: eta0 must be positive");
  require(tau > 0, "pretrain: temperature must be positive");
  require(source_len >= 1, "pretrain: source_len must be positive");
}

namespace {

struct RecordLocator {
  const data::Store* store;
  size_t pos;
};

std::unordered_map<uint64_t, RecordLocator> locate_records(std::span<const data::Store* const> stores) {
  std::unordered_map<uint64_t, RecordLocator> map;
  for (const data::Store* store : stores)
    for (size_t i = 0; i < store->size(); ++i) map[store->meta(i).record_id] = {store, i};
  return map;
}

} // namespace

PretrainResult pretrain(std::span<const data::Store* const> stores, const PretrainConfig& cfg,
                        const nn::EncoderConfig& enc_cfg, const sig::PreprocessConfig& pre_cfg,
                        const sig::AugmentConfig& aug_cfg, const std::filesystem::path& checkpoint_out,
                        const std::vector<uint64_t>* exclude_records, const EpochCallback& on_epoch) {
  cfg.validate();
  enc_cfg.validate();
  require(aug_cfg.crop_len <= cfg.source_len, "pretrain: crop_len exceeds source window");

  const data::PatientIndex index = data::build_patient_index(stores, true, exclude_records);
  require(!index.patients.empty(), "pretrain: no eligible multi-ECG patients");

  // Startup feasibility: enough pairs per batch for the chosen mode.
  std::map<uint16_t, size_t> cohort_patients;
  for (const auto& p : index.patients) cohort_patients[p.cohort_id] += 1;
  if (cfg.mode == BatchMode::idb) {
    for (const auto& [cid, count] : cohort_patients)
      require(count >= cfg.batch_pairs, "pretrain: cohort " + std::to_string(cid) + " yields only " +
                                            std::to_string(count) + " eligible patients, fewer than batch_pairs " +
                                            std::to_string(cfg.batch_pairs));
  } else {
    require(index.patients.size() >= cfg.batch_pairs,
            "pretrain: only " + std::to_string(index.patients.size()) +
                " eligible patients, fewer than batch_pairs " + std::to_string(cfg.batch_pairs));
  }

  // Preprocess the source window of every referenced record once.
  const auto locators = locate_records(stores);
  std::vector<uint64_t> needed;
  for (const auto& p : index.patients)
    for (uint64_t rid : p.record_ids) needed.push_back(rid);
  sig::PreprocessConfig source_cfg = pre_cfg;
  source_cfg.window_len = cfg.source_len;

  std::unordered_map<uint64_t, sig::EcgTensor> tensors;
  tensors.reserve(needed.size());
  for (uint64_t rid : needed) tensors.emplace(rid, sig::EcgTensor{});
  parallel_for(needed.size(), [&](size_t i) {
    const uint64_t rid = needed[i];
    const RecordLocator loc = locators.at(rid);
    tensors.at(rid) = sig::preprocess_record(loc.store->read(loc.pos), source_cfg);
  });

  // Steps per epoch are constant, so the cosine schedule can be laid out
  // over the whole run up front.
  size_t batches_per_epoch = 0;
  if (cfg.mode == BatchMode::random) {
    batches_per_epoch = index.patients.size() / cfg.batch_pairs;
  } else {
    for (const auto& [cid, count] : cohort_patients) batches_per_epoch += count / cfg.batch_pairs;
  }
  require(batches_per_epoch >= 1, "pretrain: no full batches");
  const int64_t total_steps = static_cast<int64_t>(batches_per_epoch) * cfg.epochs;

  nn::Encoder<float> enc(enc_cfg, mix_seed({cfg.seed, 0x696e6974ull}));
  auto params = enc.params();
  nn::AdamState<float> adam;
  adam.attach(params);
  LossConfig loss_cfg{cfg.tau};

  PretrainResult result;
  result.eligible_patients = index.patients.size();

  nn::Batch<float> views;
  nn::Mat<float> d_proj;
  int64_t step = 0;
  Rng drop_rng(mix_seed({cfg.seed, 0x64726f70ull}));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng pair_rng(mix_seed({cfg.seed, 0x7061697273ull, static_cast<uint64_t>(epoch)}));
    const PairPlan plan = sample_epoch_pairs(index, pair_rng);
    Rng batch_rng(mix_seed({cfg.seed, 0x6261746368ull, static_cast<uint64_t>(epoch)}));
    const std::vector<BatchPlan> batches = make_batches(plan, cfg.mode, cfg.batch_pairs, batch_rng);
    require(batches.size() == batches_per_epoch, "pretrain: unexpected batch count");

    EpochStats stats;
    stats.epoch = epoch;
    stats.batches = batches.size();

    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const BatchPlan& bp = batches[bi];
      if (cfg.mode == BatchMode::idb)
        require(bp.homogeneous, "pretrain: idb batch is not cohort-homogeneous");

      const size_t n_views = 2 * bp.pairs.size();
      views.resize(n_views);
      parallel_for(bp.pairs.size(), [&](size_t pi) {
        Rng view_rng(mix_seed({cfg.seed, 0x617567ull, static_cast<uint64_t>(epoch),
                               static_cast<uint64_t>(bi), static_cast<uint64_t>(pi)}));
        const auto& item = bp.pairs[pi];
        auto [va, vb] = sig::make_view_pair(tensors.at(item.rec_a), tensors.at(item.rec_b), aug_cfg,
                                            view_rng);
        views[2 * pi] = va.values.transpose();
        views[2 * pi + 1] = vb.values.transpose();
      });

      enc.forward_embed(views, /*training=*/true);
      const nn::Mat<float>& proj = enc.forward_project(/*training=*/true, &drop_rng);
      const float loss = info_nce_interleaved<float>(proj, loss_cfg, &d_proj);
      if (!std::isfinite(loss))
        fail("pretrain: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
             std::to_string(bi));

      enc.zero_grads();
      enc.backward_project(d_proj);
      const double lr = nn::cosine_lr(step, total_steps, cfg.eta0);
      nn::adam_step(adam, params, lr);
      ++step;

      stats.sum_loss += static_cast<double>(loss) * static_cast<double>(n_views);
      stats.views += n_views;
    }
    stats.mean_loss = stats.sum_loss / static_cast<double>(stats.views);
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.steps = static_cast<size_t>(step);

  if (!checkpoint_out.empty()) nn::save_encoder(enc, checkpoint_out);
  return result;
}

EmbedResult embed(const std::filesystem::path& checkpoint, const nn::EncoderConfig& enc_cfg,
                  const data::Store& store, std::span<const uint64_t> record_ids,
                  const sig::PreprocessConfig& pre_cfg, size_t forward_batch) {
  // Records are pushed through the encoder one at a time so that each
  // embedding is bit-identical no matter which other records are
  // requested alongside it (dense-layer GEMM rounding depends on the
  // batch width otherwise).
  (void)forward_batch;
  nn::Encoder<float> enc = nn::load_encoder(enc_cfg, checkpoint);

  std::vector<size_t> positions;
  if (record_ids.empty()) {
    positions.resize(store.size());
    for (size_t i = 0; i < store.size(); ++i) positions[i] = i;
  } else {
    std::unordered_map<uint64_t, size_t> by_id;
    for (size_t i = 0; i < store.size(); ++i) by_id[store.meta(i).record_id] = i;
    for (uint64_t rid : record_ids) {
      auto it = by_id.find(rid);
      require(it != by_id.end(), "embed: record " + std::to_string(rid) + " not in store");
      positions.push_back(it->second);
    }
  }

  EmbedResult result;
  EmbeddingSet& set = result.set;
  set.dim = static_cast<uint32_t>(enc_cfg.embedding_dim);

  // Preprocess in parallel; drop records that are too short.
  std::vector<sig::EcgTensor> tensors(positions.size());
  std::vector<uint8_t> ok(positions.size(), 0);
  parallel_for(positions.size(), [&](size_t i) {
    try {
      tensors[i] = sig::preprocess_record(store.read(positions[i]), pre_cfg);
      ok[i] = 1;
    } catch (const Error& e) {
      if (std::string(e.what()).find("too-short") == std::string::npos) throw;
    }
  });

  std::vector<size_t> kept;
  for (size_t i = 0; i < positions.size(); ++i) {
    if (ok[i])
      kept.push_back(i);
    else
      ++result.skipped;
  }

  set.record_ids.reserve(kept.size());
  set.values.resize(set.dim, static_cast<Eigen::Index>(kept.size()));

  nn::Batch<float> batch(1);
  for (size_t i = 0; i < kept.size(); ++i) {
    batch[0] = tensors[kept[i]].values.transpose();
    const nn::Mat<float>& emb = enc.forward_embed(batch, /*training=*/false);
    const data::Store::Meta meta = store.meta(positions[kept[i]]);
    set.record_ids.push_back(meta.record_id);
    set.cohort_ids.push_back(meta.cohort_id);
    set.ages.push_back(meta.age);
    set.sexes.push_back(static_cast<uint8_t>(meta.sex));
    set.values.col(static_cast<Eigen::Index>(i)) = emb.col(0);
  }
  return result;
}

} // namespace cape::ssl
