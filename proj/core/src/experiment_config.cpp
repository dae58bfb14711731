#include <fstream>
#include <set>

#include <json.hpp>

#include "cape/digest.hpp"
#include "cape/experiment.hpp"
#include "cape/version.hpp"

namespace cape::experiment {

using nlohmann::json;

namespace {

/// Wrapper enforcing "unknown keys are errors" on a JSON object.
class StrictObj {
public:
  StrictObj(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j_.is_object(), "config: " + where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        out = it->get<T>();
      } catch (const json::exception& e) {
        fail("config: bad value for " + where_ + "." + key + ": " + e.what());
      }
    }
    seen_.insert(key);
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  ~StrictObj() noexcept(false) {
    for (const auto& [key, value] : j_.items())
      if (!seen_.contains(key)) fail("config: unknown key '" + key + "' in " + where_);
  }

private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

sig::PreprocessConfig parse_preprocess(const json& j) {
  sig::PreprocessConfig cfg;
  StrictObj o(j, "preprocess");
  o.get("band_lo", cfg.band_lo);
  o.get("band_hi", cfg.band_hi);
  o.get("mains", cfg.mains);
  o.get("target_rate", cfg.target_rate);
  o.get("window_len", cfg.window_len);
  o.get("lead_subset", cfg.lead_subset);
  return cfg;
}

sig::AugmentConfig parse_augment(const json& j) {
  sig::AugmentConfig cfg;
  StrictObj o(j, "augment");
  o.get("crop_len", cfg.crop_len);
  o.get("mask_frac_max", cfg.mask_frac_max);
  return cfg;
}

nn::EncoderConfig parse_encoder(const json& j) {
  nn::EncoderConfig cfg;
  StrictObj o(j, "encoder");
  o.get("n_blocks", cfg.n_blocks);
  o.get("stem_kernel", cfg.stem_kernel);
  o.get("block_kernel", cfg.block_kernel);
  o.get("widths", cfg.widths);
  o.get("stem_stride", cfg.stem_stride);
  o.get("block_stride", cfg.block_stride);
  o.get("in_leads", cfg.in_leads);
  o.get("embedding_dim", cfg.embedding_dim);
  o.get("projection", cfg.projection);
  o.get("bn_momentum", cfg.bn_momentum);
  o.get("dropout", cfg.dropout);
  return cfg;
}

ssl::PretrainConfig parse_pretrain(const json& j) {
  ssl::PretrainConfig cfg;
  StrictObj o(j, "pretrain");
  o.get("batch_pairs", cfg.batch_pairs);
  o.get("epochs", cfg.epochs);
  o.get("eta0", cfg.eta0);
  o.get("tau", cfg.tau);
  if (o.has("mode")) cfg.mode = ssl::parse_batch_mode(o.raw("mode").get<std::string>());
  o.get("seed", cfg.seed);
  o.get("source_len", cfg.source_len);
  return cfg;
}

nn::HeadConfig parse_head(const json& j, const nn::HeadConfig& defaults, const char* where) {
  nn::HeadConfig cfg = defaults;
  StrictObj o(j, where);
  o.get("hidden", cfg.hidden);
  o.get("grid_search", cfg.grid_search);
  o.get("lr", cfg.lr);
  o.get("max_epochs", cfg.max_epochs);
  o.get("batch_size", cfg.batch_size);
  o.get("patience", cfg.patience);
  o.get("lr_patience", cfg.lr_patience);
  o.get("lr_factor", cfg.lr_factor);
  o.get("early_stop", cfg.early_stop);
  return cfg;
}

syn::DeviceArtifact parse_device(const json& j) {
  syn::DeviceArtifact dev;
  StrictObj o(j, "device");
  o.get("gain", dev.gain);
  o.get("wander_amp_mv", dev.wander_amp_mv);
  o.get("wander_freq_hz", dev.wander_freq_hz);
  o.get("mains_amp_mv", dev.mains_amp_mv);
  o.get("mains_freq_hz", dev.mains_freq_hz);
  o.get("lowpass_knee_hz", dev.lowpass_knee_hz);
  o.get("quant_step_mv", dev.quant_step_mv);
  return dev;
}

syn::CohortSpec parse_cohort(const json& j, size_t idx) {
  syn::CohortSpec spec;
  StrictObj o(j, "cohorts[" + std::to_string(idx) + "]");
  o.get("cohort_id", spec.cohort_id);
  o.get("device_id", spec.device_id);
  o.get("name", spec.name);
  o.get("n_patients", spec.n_patients);
  o.get("ecgs_min", spec.ecgs_min);
  o.get("ecgs_max", spec.ecgs_max);
  o.get("age_mean", spec.age_mean);
  o.get("age_sd", spec.age_sd);
  o.get("age_lo", spec.age_lo);
  o.get("age_hi", spec.age_hi);
  o.get("female_frac", spec.female_frac);
  o.get("health_severity", spec.health_severity);
  if (o.has("device")) spec.device = parse_device(o.raw("device"));
  o.get("sampling_rate", spec.sampling_rate);
  o.get("duration_s", spec.duration_s);
  o.get("seed", spec.seed);
  o.get("hr_at_40_bpm", spec.hr_at_40_bpm);
  o.get("hr_slope_per_year", spec.hr_slope_per_year);
  o.get("hr_noise_sd_bpm", spec.hr_noise_sd_bpm);
  o.get("male_qrs_amp_factor", spec.male_qrs_amp_factor);
  o.get("male_qrs_width_factor", spec.male_qrs_width_factor);
  o.get("male_t_amp_factor", spec.male_t_amp_factor);
  o.get("t_amp_age_slope", spec.t_amp_age_slope);
  o.get("t_width_age_slope", spec.t_width_age_slope);
  return spec;
}

json dump_device(const syn::DeviceArtifact& dev) {
  return json{{"gain", dev.gain},
              {"wander_amp_mv", dev.wander_amp_mv},
              {"wander_freq_hz", dev.wander_freq_hz},
              {"mains_amp_mv", dev.mains_amp_mv},
              {"mains_freq_hz", dev.mains_freq_hz},
              {"lowpass_knee_hz", dev.lowpass_knee_hz},
              {"quant_step_mv", dev.quant_step_mv}};
}

json dump_cohort(const syn::CohortSpec& spec) {
  return json{{"cohort_id", spec.cohort_id},
              {"device_id", spec.device_id},
              {"name", spec.name},
              {"n_patients", spec.n_patients},
              {"ecgs_min", spec.ecgs_min},
              {"ecgs_max", spec.ecgs_max},
              {"age_mean", spec.age_mean},
              {"age_sd", spec.age_sd},
              {"age_lo", spec.age_lo},
              {"age_hi", spec.age_hi},
              {"female_frac", spec.female_frac},
              {"health_severity", spec.health_severity},
              {"device", dump_device(spec.device)},
              {"sampling_rate", spec.sampling_rate},
              {"duration_s", spec.duration_s},
              {"seed", spec.seed},
              {"hr_at_40_bpm", spec.hr_at_40_bpm},
              {"hr_slope_per_year", spec.hr_slope_per_year},
              {"hr_noise_sd_bpm", spec.hr_noise_sd_bpm},
              {"male_qrs_amp_factor", spec.male_qrs_amp_factor},
              {"male_qrs_width_factor", spec.male_qrs_width_factor},
              {"male_t_amp_factor", spec.male_t_amp_factor},
              {"t_amp_age_slope", spec.t_amp_age_slope},
              {"t_width_age_slope", spec.t_width_age_slope}};
}

json dump_config(const ExperimentConfig& cfg) {
  json cohorts = json::array();
  for (const auto& c : cfg.cohorts) cohorts.push_back(dump_cohort(c));
  return json{
      {"kind", to_string(cfg.kind)},
      {"seed", cfg.seed},
      {"runs", cfg.runs},
      {"scale", cfg.scale},
      {"designated_cohort", cfg.designated_cohort},
      {"probe_seeds", cfg.probe_seeds},
      {"bin_width_years", cfg.bin_width_years},
      {"cohorts", cohorts},
      {"preprocess",
       json{{"band_lo", cfg.preprocess.band_lo},
            {"band_hi", cfg.preprocess.band_hi},
            {"mains", cfg.preprocess.mains},
            {"target_rate", cfg.preprocess.target_rate},
            {"window_len", cfg.preprocess.window_len},
            {"lead_subset", cfg.preprocess.lead_subset}}},
      {"augment", json{{"crop_len", cfg.augment.crop_len}, {"mask_frac_max", cfg.augment.mask_frac_max}}},
      {"encoder",
       json{{"n_blocks", cfg.encoder.n_blocks},
            {"stem_kernel", cfg.encoder.stem_kernel},
            {"block_kernel", cfg.encoder.block_kernel},
            {"widths", cfg.encoder.widths},
            {"stem_stride", cfg.encoder.stem_stride},
            {"block_stride", cfg.encoder.block_stride},
            {"in_leads", cfg.encoder.in_leads},
            {"embedding_dim", cfg.encoder.embedding_dim},
            {"projection", cfg.encoder.projection},
            {"bn_momentum", cfg.encoder.bn_momentum},
            {"dropout", cfg.encoder.dropout}}},
      {"pretrain",
       json{{"batch_pairs", cfg.pretrain.batch_pairs},
            {"epochs", cfg.pretrain.epochs},
            {"eta0", cfg.pretrain.eta0},
            {"tau", cfg.pretrain.tau},
            {"mode", ssl::to_string(cfg.pretrain.mode)},
            {"seed", cfg.pretrain.seed},
            {"source_len", cfg.pretrain.source_len}}},
      {"head_age",
       json{{"hidden", cfg.head_age.hidden},
            {"grid_search", cfg.head_age.grid_search},
            {"lr", cfg.head_age.lr},
            {"max_epochs", cfg.head_age.max_epochs},
            {"batch_size", cfg.head_age.batch_size},
            {"patience", cfg.head_age.patience},
            {"lr_patience", cfg.head_age.lr_patience},
            {"lr_factor", cfg.head_age.lr_factor},
            {"early_stop", cfg.head_age.early_stop}}},
      {"head_sex",
       json{{"hidden", cfg.head_sex.hidden},
            {"grid_search", cfg.head_sex.grid_search},
            {"lr", cfg.head_sex.lr},
            {"max_epochs", cfg.head_sex.max_epochs},
            {"batch_size", cfg.head_sex.batch_size},
            {"patience", cfg.head_sex.patience},
            {"lr_patience", cfg.head_sex.lr_patience},
            {"lr_factor", cfg.head_sex.lr_factor},
            {"early_stop", cfg.head_sex.early_stop}}}};
}

} // namespace

std::string to_string(ExperimentKind kind) { return kind == ExperimentKind::matrix ? "matrix" : "ood"; }

ExperimentKind parse_kind(const std::string& s) {
  if (s == "matrix") return ExperimentKind::matrix;
  if (s == "ood") return ExperimentKind::ood;
  fail("config: kind must be 'matrix' or 'ood', got '" + s + "'");
}

void ExperimentConfig::validate() const {
  require(!cohorts.empty(), "config: no cohorts");
  require(runs >= 1, "config: runs must be >= 1");
  require(scale > 0, "config: scale must be positive");
  require(designated_cohort >= 0 && designated_cohort < static_cast<int>(cohorts.size()),
          "config: designated cohort out of range");
  require(probe_seeds >= 1, "config: probe_seeds must be >= 1");
  require(bin_width_years > 0, "config: bin width must be positive");
  std::set<uint16_t> ids;
  std::set<std::string> names;
  for (const auto& c : cohorts) {
    c.validate();
    require(!c.name.empty(), "config: cohorts need names");
    require(ids.insert(c.cohort_id).second, "config: duplicate cohort_id");
    require(names.insert(c.name).second, "config: duplicate cohort name");
  }
  preprocess.validate();
  encoder.validate();
  pretrain.validate();
  head_age.validate();
  head_sex.validate();
  require(augment.crop_len == preprocess.window_len,
          "config: crop_len must equal the preprocess window (encoder input length)");
}

std::string ExperimentConfig::canonical_json() const { return dump_config(*this).dump(2); }

uint64_t ExperimentConfig::digest() const { return fnv1a64(canonical_json()); }

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  {
    StrictObj o(j, "config");
    if (o.has("kind")) cfg.kind = parse_kind(o.raw("kind").get<std::string>());
    o.get("seed", cfg.seed);
    o.get("runs", cfg.runs);
    o.get("scale", cfg.scale);
    o.get("designated_cohort", cfg.designated_cohort);
    o.get("probe_seeds", cfg.probe_seeds);
    o.get("bin_width_years", cfg.bin_width_years);
    if (o.has("cohorts")) {
      const json& arr = o.raw("cohorts");
      require(arr.is_array(), "config: cohorts must be an array");
      cfg.cohorts.clear();
      for (size_t i = 0; i < arr.size(); ++i) cfg.cohorts.push_back(parse_cohort(arr[i], i));
    }
    if (o.has("preprocess")) cfg.preprocess = parse_preprocess(o.raw("preprocess"));
    if (o.has("augment")) cfg.augment = parse_augment(o.raw("augment"));
    if (o.has("encoder")) cfg.encoder = parse_encoder(o.raw("encoder"));
    if (o.has("pretrain")) cfg.pretrain = parse_pretrain(o.raw("pretrain"));
    if (o.has("head_age")) cfg.head_age = parse_head(o.raw("head_age"), nn::HeadConfig::age_preset(), "head_age");
    if (o.has("head_sex")) cfg.head_sex = parse_head(o.raw("head_sex"), nn::HeadConfig::sex_preset(), "head_sex");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "missing-file: cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "io: cannot write config " + path.string());
  out << cfg.canonical_json() << "\n";
}

ExperimentConfig paperlike_base(uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.cohorts = syn::paperlike3(mix_seed({seed, 0x636f686f727473ull}), 300);
  cfg.pretrain.batch_pairs = 100;
  cfg.pretrain.epochs = 30;
  cfg.pretrain.eta0 = 0.1;
  cfg.pretrain.tau = 0.1;
  return cfg;
}

ExperimentConfig ExperimentConfig::paperlike_desk(uint64_t seed) { return paperlike_base(seed); }

// ---------------------------------------------------------------------------
// Manifest

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "missing-file: cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(std::string("manifest: invalid JSON: ") + e.what());
  }
  RunManifest m;
  m.config_digest = std::stoull(j.at("config_digest").get<std::string>(), nullptr, 16);
  m.code_version = j.at("code_version").get<std::string>();
  for (const auto& [key, stage_j] : j.at("stages").items()) {
    Stage stage;
    stage.seconds = stage_j.at("seconds").get<double>();
    for (const auto& art : stage_j.at("artifacts")) {
      Artifact a;
      a.rel_path = art.at("path").get<std::string>();
      a.digest = std::stoull(art.at("digest").get<std::string>(), nullptr, 16);
      stage.artifacts.push_back(std::move(a));
    }
    m.stages.emplace(key, std::move(stage));
  }
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const {
  json stages_j = json::object();
  for (const auto& [key, stage] : stages) {
    json arts = json::array();
    for (const auto& a : stage.artifacts)
      arts.push_back(json{{"path", a.rel_path}, {"digest", to_hex(a.digest)}});
    stages_j[key] = json{{"artifacts", arts}, {"seconds", stage.seconds}};
  }
  json j{{"config_digest", to_hex(config_digest)}, {"code_version", code_version}, {"stages", stages_j}};
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    require(out.good(), "io: cannot write manifest " + tmp.string());
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

bool RunManifest::stage_valid(const std::string& key, const std::filesystem::path& root) const {
  auto it = stages.find(key);
  if (it == stages.end()) return false;
  for (const auto& a : it->second.artifacts) {
    const auto p = root / a.rel_path;
    if (!std::filesystem::exists(p)) return false;
    if (digest_file(p) != a.digest) return false;
  }
  return true;
}

} // namespace cape::experiment
