#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>

#include "cape/datamodel.hpp"
#include "cape/embedding.hpp"
#include "cape/nn/encoder.hpp"
#include "cape/rng.hpp"
#include "cape/signal.hpp"

namespace cape::ssl {

/// One epoch's positive pairs: every eligible patient exactly once.
struct PairPlan {
  struct Item {
    uint64_t patient_id = 0;
    uint64_t rec_a = 0, rec_b = 0; // distinct records of the patient
    uint16_t cohort_id = 0;
  };
  std::vector<Item> items;
};

PairPlan sample_epoch_pairs(const data::PatientIndex& index, Rng& rng);

enum class BatchMode : uint8_t { random, idb };
std::string to_string(BatchMode mode);
BatchMode parse_batch_mode(const std::string& s);

/// A batch worth of pairs; cohort-homogeneous in IDB mode. Trailing
/// partial batches are dropped.
struct BatchPlan {
  std::vector<PairPlan::Item> pairs;
  uint16_t cohort_id = 0; // meaningful when homogeneous
  bool homogeneous = false;
};

std::vector<BatchPlan> make_batches(const PairPlan& plan, BatchMode mode, size_t batch_pairs,
                                    Rng& rng);

double cosine_sim(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct LossConfig {
  double tau = 0.1; // temperature; the k != i indicator is built in
  void validate() const { require(tau > 0, "loss: temperature must be positive"); }
};

/// InfoNCE over projections [d x 2N]; partner[i] is the positive index of
/// view i. Returns the mean per-view loss; d_z (optional) receives the
/// gradient of that mean. Max-subtraction inside.
template <class S>
S info_nce(const nn::Mat<S>& z, std::span<const int> partner, const LossConfig& cfg,
           nn::Mat<S>* d_z = nullptr);

/// Interleaved pairing: views 2k and 2k+1 are partners.
template <class S>
S info_nce_interleaved(const nn::Mat<S>& z, const LossConfig& cfg, nn::Mat<S>* d_z = nullptr);

std::vector<int> interleaved_partners(size_t n_views);

/// One cohort-homogeneous batch of projections for the IDB total.
struct ProjectionBatch {
  nn::Mat<double> z;
  std::vector<int> partner;
  std::vector<uint16_t> cohort_ids;
};

struct IdbTotal {
  double total = 0.0;         // sum over batches of per-batch loss sums
  double mean_per_view = 0.0; // total / views
  size_t views = 0;
};

/// Errors if any batch mixes cohorts, naming the offending ids.
IdbTotal idb_total_loss(std::span<const ProjectionBatch> batches, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  size_t batch_pairs = 512; // 2N = 1024 views
  int epochs = 40;
  double eta0 = 0.1;
  double tau = 0.1;
  BatchMode mode = BatchMode::random;
  uint64_t seed = 0;
  int source_len = 3200; // pre-crop window (samples at target rate)

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double sum_loss = 0.0;
  size_t views = 0;
  size_t batches = 0;
};

struct PretrainResult {
  std::vector<EpochStats> epochs;
  size_t eligible_patients = 0;
  size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Full contrastive pretraining loop; writes an NNP1 checkpoint at the
/// end. Deterministic given cfg.seed (fixed reduction orders, derived
/// rng streams).
PretrainResult pretrain(std::span<const data::Store* const> stores, const PretrainConfig& cfg,
                        const nn::EncoderConfig& enc_cfg, const sig::PreprocessConfig& pre_cfg,
                        const sig::AugmentConfig& aug_cfg, const std::filesystem::path& checkpoint_out,
                        const std::vector<uint64_t>* exclude_records = nullptr,
                        const EpochCallback& on_epoch = nullptr);

struct EmbedResult {
  EmbeddingSet set;
  size_t skipped = 0; // records too short to preprocess
};

/// Evaluation-mode embeddings for the given records (all records when
/// record_ids is empty); deterministic.
EmbedResult embed(const std::filesystem::path& checkpoint, const nn::EncoderConfig& enc_cfg,
                  const data::Store& store, std::span<const uint64_t> record_ids,
                  const sig::PreprocessConfig& pre_cfg, size_t forward_batch = 128);

} // namespace cape::ssl
