#include "cape/datamodel.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "cape/rng.hpp"

namespace cape::data {

namespace {

constexpr char kMagic[4] = {'E', 'C', 'G', 'C'};
constexpr uint32_t kVersion = 1;

// Little-endian scalar I/O. The build targets little-endian hosts; the
// memcpy form keeps it alignment-safe either way.
template <typename T>
T load_le(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void append_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

} // namespace

void EcgRecord::validate() const {
  require(samples.cols() >= 1, "record: n_samples must be >= 1 (record " + std::to_string(record_id) + ")");
  require(sampling_rate > 0.0f, "record: sampling_rate must be positive (record " + std::to_string(record_id) + ")");
  require(!leads.empty(), "record: leads list is empty (record " + std::to_string(record_id) + ")");
  require(leads.size() == static_cast<size_t>(samples.rows()),
          "record: lead count does not match sample rows (record " + std::to_string(record_id) + ")");
  std::set<std::string> unique(leads.begin(), leads.end());
  require(unique.size() == leads.size(), "record: duplicate lead names (record " + std::to_string(record_id) + ")");
  require(leads.size() <= 255, "record: more than 255 leads");
  require(samples.allFinite(), "record: non-finite sample value (record " + std::to_string(record_id) + ")");
}

const PatientIndex::Entry* PatientIndex::find(uint64_t patient_id) const {
  auto it = std::lower_bound(patients.begin(), patients.end(), patient_id,
                             [](const Entry& e, uint64_t id) { return e.patient_id < id; });
  if (it == patients.end() || it->patient_id != patient_id) return nullptr;
  return &*it;
}

size_t PatientIndex::total_records() const {
  size_t n = 0;
  for (const auto& e : patients) n += e.record_ids.size();
  return n;
}

void SplitSpec::validate() const {
  require(train > 0 && val >= 0 && test >= 0, "split: sizes must be positive");
  if (mode == SplitMode::fractions)
    require(train + val + test <= 1.0 + 1e-12, "split: fractions must sum to <= 1");
}

Store::Store(Store&& other) noexcept { *this = std::move(other); }

Store& Store::operator=(Store&& other) noexcept {
  if (this != &other) {
    if (map_ != nullptr) ::munmap(const_cast<std::byte*>(map_), map_len_);
    path_ = std::move(other.path_);
    map_ = other.map_;
    map_len_ = other.map_len_;
    offsets_ = std::move(other.offsets_);
    other.map_ = nullptr;
    other.map_len_ = 0;
  }
  return *this;
}

Store::~Store() {
  if (map_ != nullptr) ::munmap(const_cast<std::byte*>(map_), map_len_);
}

const std::byte* Store::at(uint64_t off, size_t need, const char* what) const {
  require(off <= map_len_ && need <= map_len_ - off,
          std::string("truncated: ") + what + " out of bounds in " + path_.string());
  return map_ + off;
}

Store open_store(const std::filesystem::path& path) {
  int fd = ::open(path.string().c_str(), O_RDONLY);
  require(fd >= 0, "missing-file: cannot open " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    fail("io: stat failed for " + path.string());
  }
  const size_t len = static_cast<size_t>(st.st_size);
  require(len >= 16, "truncated: header short in " + path.string());
  void* m = ::mmap(nullptr, len, PROT_READ, MAP_PRIVATE, fd, 0);
  ::close(fd);
  require(m != MAP_FAILED, "io: mmap failed for " + path.string());

  Store s;
  s.path_ = path;
  s.map_ = static_cast<const std::byte*>(m);
  s.map_len_ = len;

  require(std::memcmp(s.map_, kMagic, 4) == 0, "bad-magic: not an ECGC container: " + path.string());
  const uint32_t version = load_le<uint32_t>(s.map_ + 4);
  require(version == kVersion,
          "version-mismatch: container version " + std::to_string(version) + " in " + path.string());
  const uint64_t count = load_le<uint64_t>(s.map_ + 8);
  require(len >= 16 + count * 8, "truncated: index short in " + path.string());
  s.offsets_.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    uint64_t off = load_le<uint64_t>(s.map_ + 16 + i * 8);
    require(off >= 16 + count * 8 && off < len, "truncated: index entry out of range in " + path.string());
    s.offsets_[i] = off;
  }
  // Validate that every record header parses within bounds.
  for (uint64_t i = 0; i < count; ++i) s.meta(i);
  return s;
}

Store::Meta Store::meta(size_t i) const {
  require(i < offsets_.size(), "store: record position out of range");
  uint64_t off = offsets_[i];
  const std::byte* p = at(off, 30, "record header");
  Meta m;
  m.record_id = load_le<uint64_t>(p);
  m.patient_id = load_le<uint64_t>(p + 8);
  m.cohort_id = load_le<uint16_t>(p + 16);
  m.device_id = load_le<uint16_t>(p + 18);
  m.age = load_le<float>(p + 20);
  m.sex = static_cast<Sex>(load_le<uint8_t>(p + 24));
  m.sampling_rate = load_le<float>(p + 25);
  m.n_leads = load_le<uint8_t>(p + 29);
  uint64_t cur = off + 30;
  for (int l = 0; l < m.n_leads; ++l) {
    uint8_t name_len = load_le<uint8_t>(at(cur, 1, "lead name length"));
    cur += 1 + name_len;
  }
  m.n_samples = load_le<uint32_t>(at(cur, 4, "sample count"));
  cur += 4;
  at(cur, static_cast<size_t>(m.n_leads) * m.n_samples * 4, "sample data");
  return m;
}

EcgRecord Store::read(size_t i) const {
  Meta m = meta(i);
  uint64_t off = offsets_[i];
  EcgRecord r;
  r.record_id = m.record_id;
  r.patient_id = m.patient_id;
  r.cohort_id = m.cohort_id;
  r.device_id = m.device_id;
  r.age = m.age;
  r.sex = m.sex;
  r.sampling_rate = m.sampling_rate;
  uint64_t cur = off + 30;
  r.leads.resize(m.n_leads);
  for (int l = 0; l < m.n_leads; ++l) {
    uint8_t name_len = load_le<uint8_t>(at(cur, 1, "lead name length"));
    const std::byte* name = at(cur + 1, name_len, "lead name");
    r.leads[l].assign(reinterpret_cast<const char*>(name), name_len);
    cur += 1 + name_len;
  }
  cur += 4; // n_samples, already in meta
  r.samples.resize(m.n_leads, m.n_samples);
  // Lead-major on disk; rows are leads in memory.
  for (int l = 0; l < m.n_leads; ++l) {
    const std::byte* src = at(cur + static_cast<uint64_t>(l) * m.n_samples * 4,
                              static_cast<size_t>(m.n_samples) * 4, "sample data");
    for (uint32_t t = 0; t < m.n_samples; ++t) r.samples(l, t) = load_le<float>(src + t * 4);
  }
  return r;
}

void write_store(std::span<const EcgRecord> records, const std::filesystem::path& path) {
  for (const auto& r : records) r.validate();

  std::string body;
  std::vector<uint64_t> offsets;
  offsets.reserve(records.size());
  const uint64_t header_len = 16 + records.size() * 8;
  for (const auto& r : records) {
    offsets.push_back(header_len + body.size());
    append_le(body, r.record_id);
    append_le(body, r.patient_id);
    append_le(body, r.cohort_id);
    append_le(body, r.device_id);
    append_le(body, r.age);
    append_le(body, static_cast<uint8_t>(r.sex));
    append_le(body, r.sampling_rate);
    append_le(body, static_cast<uint8_t>(r.leads.size()));
    for (const auto& name : r.leads) {
      require(name.size() <= 255, "record: lead name too long");
      append_le(body, static_cast<uint8_t>(name.size()));
      body.append(name);
    }
    append_le(body, static_cast<uint32_t>(r.samples.cols()));
    for (int l = 0; l < r.samples.rows(); ++l)
      for (int t = 0; t < r.samples.cols(); ++t) append_le(body, r.samples(l, t));
  }

  std::string head;
  head.append(kMagic, 4);
  append_le(head, kVersion);
  append_le(head, static_cast<uint64_t>(records.size()));
  for (uint64_t off : offsets) append_le(head, off);

  const std::filesystem::path tmp = path.string() + ".tmp";
  std::FILE* f = std::fopen(tmp.string().c_str(), "wb");
  require(f != nullptr, "io: cannot create " + tmp.string());
  bool ok = std::fwrite(head.data(), 1, head.size(), f) == head.size() &&
            std::fwrite(body.data(), 1, body.size(), f) == body.size();
  ok = std::fclose(f) == 0 && ok;
  require(ok, "io: write failed for " + tmp.string());
  std::filesystem::rename(tmp, path);
}

PatientIndex build_patient_index(const Store& store, bool multi_ecg_only) {
  const Store* one[] = {&store};
  return build_patient_index(std::span<const Store* const>(one, 1), multi_ecg_only);
}

PatientIndex build_patient_index(std::span<const Store* const> stores, bool multi_ecg_only,
                                 const std::vector<uint64_t>* exclude_records) {
  std::unordered_set<uint64_t> excluded;
  if (exclude_records != nullptr) excluded.insert(exclude_records->begin(), exclude_records->end());

  std::map<uint64_t, PatientIndex::Entry> by_patient;
  std::unordered_set<uint64_t> seen_records;
  for (const Store* store : stores) {
    for (size_t i = 0; i < store->size(); ++i) {
      Store::Meta m = store->meta(i);
      if (excluded.contains(m.record_id)) continue;
      require(seen_records.insert(m.record_id).second,
              "index: duplicate record_id " + std::to_string(m.record_id));
      auto [it, inserted] = by_patient.try_emplace(m.patient_id);
      if (inserted) {
        it->second.patient_id = m.patient_id;
        it->second.cohort_id = m.cohort_id;
      } else {
        require(it->second.cohort_id == m.cohort_id,
                "inconsistent-cohort: patient " + std::to_string(m.patient_id) + " spans cohorts " +
                    std::to_string(it->second.cohort_id) + " and " + std::to_string(m.cohort_id));
      }
      it->second.record_ids.push_back(m.record_id);
    }
  }

  PatientIndex index;
  index.patients.reserve(by_patient.size());
  for (auto& [pid, entry] : by_patient) {
    if (multi_ecg_only && entry.record_ids.size() < 2) continue;
    std::sort(entry.record_ids.begin(), entry.record_ids.end());
    index.patients.push_back(std::move(entry));
  }
  return index;
}

Splits make_splits(const Store& store, const SplitSpec& spec) {
  require(store.size() > 0, "split: empty store");
  std::vector<uint64_t> record_ids(store.size()), patient_ids(store.size());
  for (size_t i = 0; i < store.size(); ++i) {
    Store::Meta m = store.meta(i);
    record_ids[i] = m.record_id;
    patient_ids[i] = m.patient_id;
  }
  return make_splits(record_ids, patient_ids, spec);
}

Splits make_splits(std::span<const uint64_t> record_ids, std::span<const uint64_t> patient_ids,
                   const SplitSpec& spec) {
  spec.validate();
  require(!record_ids.empty(), "split: no candidate records");

  auto take = [](std::vector<uint64_t>& pool, size_t n) {
    std::vector<uint64_t> out(pool.end() - static_cast<ptrdiff_t>(n), pool.end());
    pool.resize(pool.size() - n);
    std::sort(out.begin(), out.end());
    return out;
  };

  Splits splits;
  Rng rng(mix_seed({spec.seed, 0x73706c6974ull})); // "split"

  if (spec.unit == SplitUnit::record) {
    std::vector<uint64_t> pool(record_ids.begin(), record_ids.end());
    std::sort(pool.begin(), pool.end());
    rng.shuffle(pool);
    const size_t total = pool.size();
    size_t n_train, n_val, n_test;
    if (spec.mode == SplitMode::counts) {
      n_train = static_cast<size_t>(spec.train);
      n_val = static_cast<size_t>(spec.val);
      n_test = static_cast<size_t>(spec.test);
    } else {
      n_train = static_cast<size_t>(spec.train * total);
      n_val = static_cast<size_t>(spec.val * total);
      n_test = static_cast<size_t>(spec.test * total);
    }
    require(n_train + n_val + n_test <= total,
            "infeasible: split sizes exceed " + std::to_string(total) + " records");
    splits.train = take(pool, n_train);
    splits.val = take(pool, n_val);
    splits.test = take(pool, n_test);
    return splits;
  }

  // Patient mode: sizes count patients; all records of a patient travel
  // together.
  require(record_ids.size() == patient_ids.size(), "split: record/patient arrays must align");
  std::map<uint64_t, std::vector<uint64_t>> by_patient;
  for (size_t i = 0; i < record_ids.size(); ++i) by_patient[patient_ids[i]].push_back(record_ids[i]);
  std::vector<uint64_t> patients;
  patients.reserve(by_patient.size());
  for (const auto& [pid, recs] : by_patient) patients.push_back(pid);
  rng.shuffle(patients);

  const size_t total = patients.size();
  size_t n_train, n_val, n_test;
  if (spec.mode == SplitMode::counts) {
    n_train = static_cast<size_t>(spec.train);
    n_val = static_cast<size_t>(spec.val);
    n_test = static_cast<size_t>(spec.test);
  } else {
    n_train = static_cast<size_t>(spec.train * total);
    n_val = static_cast<size_t>(spec.val * total);
    n_test = static_cast<size_t>(spec.test * total);
  }
  require(n_train + n_val + n_test <= total,
          "infeasible: split sizes exceed " + std::to_string(total) + " patients");

  auto emit = [&](size_t begin, size_t count, std::vector<uint64_t>& out) {
    for (size_t i = begin; i < begin + count; ++i) {
      const auto& recs = by_patient.at(patients[i]);
      out.insert(out.end(), recs.begin(), recs.end());
    }
    std::sort(out.begin(), out.end());
  };
  emit(0, n_train, splits.train);
  emit(n_train, n_val, splits.val);
  emit(n_train + n_val, n_test, splits.test);
  return splits;
}

} // namespace cape::data
