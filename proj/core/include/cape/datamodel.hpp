#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cape/common.hpp"

namespace cape::data {

enum class Sex : uint8_t { female = 0, male = 1, unknown = 255 };

/// One raw multi-lead ECG. Samples are millivolts, [n_leads x n_samples].
struct EcgRecord {
  uint64_t record_id = 0;
  uint64_t patient_id = 0;
  uint16_t cohort_id = 0;
  uint16_t device_id = 0;
  float age = std::numeric_limits<float>::quiet_NaN(); // NaN = missing
  Sex sex = Sex::unknown;
  float sampling_rate = 0.0f;
  std::vector<std::string> leads;
  Eigen::MatrixXf samples;

  bool has_age() const { return !std::isnan(age); }
  int n_leads() const { return static_cast<int>(samples.rows()); }
  int n_samples() const { return static_cast<int>(samples.cols()); }

  /// Throws on invariant violation (empty/duplicate leads, non-finite
  /// samples, non-positive rate, shape mismatch).
  void validate() const;
};

/// patient_id -> records, plus the patient's (unique) cohort.
struct PatientIndex {
  struct Entry {
    uint64_t patient_id = 0;
    uint16_t cohort_id = 0;
    std::vector<uint64_t> record_ids; // sorted
  };
  std::vector<Entry> patients; // sorted by patient_id

  const Entry* find(uint64_t patient_id) const;
  size_t total_records() const;
};

enum class SplitMode : uint8_t { counts, fractions };
enum class SplitUnit : uint8_t { record, patient };

struct SplitSpec {
  SplitMode mode = SplitMode::counts;
  SplitUnit unit = SplitUnit::record;
  double train = 0, val = 0, test = 0; // counts or fractions
  uint64_t seed = 0;

  void validate() const;
};

struct Splits {
  std::vector<uint64_t> train, val, test; // sorted record ids
};

/// Read-only view of an ECGC container. Memory-mapped; safe for
/// concurrent readers once opened.
class Store {
public:
  struct Meta {
    uint64_t record_id = 0, patient_id = 0;
    uint16_t cohort_id = 0, device_id = 0;
    float age = 0;
    Sex sex = Sex::unknown;
    float sampling_rate = 0;
    uint8_t n_leads = 0;
    uint32_t n_samples = 0;
  };

  Store() = default;
  Store(Store&&) noexcept;
  Store& operator=(Store&&) noexcept;
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;
  ~Store();

  size_t size() const { return offsets_.size(); }
  /// Full record at position i (copies sample data out of the map).
  EcgRecord read(size_t i) const;
  /// Header fields only; does not touch sample bytes.
  Meta meta(size_t i) const;
  const std::filesystem::path& path() const { return path_; }

private:
  friend Store open_store(const std::filesystem::path&);
  std::filesystem::path path_;
  const std::byte* map_ = nullptr;
  size_t map_len_ = 0;
  std::vector<uint64_t> offsets_;
  const std::byte* at(uint64_t off, size_t need, const char* what) const;
};

/// Opens an ECGC v1 container. Errors: missing file, bad-magic,
/// version-mismatch, truncated index/records.
Store open_store(const std::filesystem::path& path);

/// Writes records losslessly (bit-exact sample round trip). Records are
/// validated first; the file appears atomically (tmp + rename).
void write_store(std::span<const EcgRecord> records, const std::filesystem::path& path);

/// Groups records by patient. With multi_ecg_only, patients with fewer
/// than two records are dropped. Errors if a patient spans cohorts.
PatientIndex build_patient_index(const Store& store, bool multi_ecg_only);

/// Same, over several stores at once (patients must not span stores).
PatientIndex build_patient_index(std::span<const Store* const> stores, bool multi_ecg_only,
                                 const std::vector<uint64_t>* exclude_records = nullptr);

/// Deterministic disjoint train/val/test record-id sets.
Splits make_splits(const Store& store, const SplitSpec& spec);

/// Core splitter over an explicit candidate list. record_ids/patient_ids
/// are parallel arrays; patient_ids are only consulted in patient mode.
Splits make_splits(std::span<const uint64_t> record_ids, std::span<const uint64_t> patient_ids,
                   const SplitSpec& spec);

} // namespace cape::data
