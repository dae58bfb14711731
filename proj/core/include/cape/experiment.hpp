#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cape/contrastive.hpp"
#include "cape/nn/mlp.hpp"
#include "cape/syncohort.hpp"

namespace cape::experiment {

enum class ExperimentKind : uint8_t { matrix, ood };
std::string to_string(ExperimentKind kind);
ExperimentKind parse_kind(const std::string& s);

/// Everything a reproduction run needs; mirrors the JSON config schema.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ood;
  uint64_t seed = 1;
  int runs = 5;
  double scale = 0.05; // scales the paper's split/subset sizes
  int designated_cohort = 0;
  int probe_seeds = 5;
  double bin_width_years = 2.0;

  std::vector<syn::CohortSpec> cohorts;
  sig::PreprocessConfig preprocess;
  sig::AugmentConfig augment;
  nn::EncoderConfig encoder;
  ssl::PretrainConfig pretrain;
  nn::HeadConfig head_age = nn::HeadConfig::age_preset();
  nn::HeadConfig head_sex = nn::HeadConfig::sex_preset();

  // Paper-scale anchors: 10,000/2,000/2,000 matrix splits, 50/10/40 OOD
  // fractions, 10,000-instance OOD subsets.
  size_t matrix_train() const { return static_cast<size_t>(std::llround(10000 * scale)); }
  size_t matrix_val() const { return static_cast<size_t>(std::llround(2000 * scale)); }
  size_t matrix_test() const { return static_cast<size_t>(std::llround(2000 * scale)); }
  size_t ood_subset() const { return static_cast<size_t>(std::llround(10000 * scale)); }

  void validate() const;
  std::string canonical_json() const;
  uint64_t digest() const;

  /// Desk-scale defaults on the paperlike3 bundle.
  static ExperimentConfig paperlike_desk(uint64_t seed);
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Stage ledger: which artifact files exist, their digests, wall time.
struct RunManifest {
  uint64_t config_digest = 0;
  std::string code_version;
  struct Artifact {
    std::string rel_path;
    uint64_t digest = 0;
  };
  struct Stage {
    std::vector<Artifact> artifacts;
    double seconds = 0.0;
  };
  std::map<std::string, Stage> stages;

  static RunManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// True when the stage is recorded and every artifact still matches.
  bool stage_valid(const std::string& key, const std::filesystem::path& root) const;
};

/// Fig. 1 pretrain x label matrix: one encoder per cohort plus the union,
/// heads per (encoder, cohort, task, run), Kruskal-Wallis comparisons.
void run_matrix(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);

/// Fig. 3 / Table 3 protocol: union encoders with random vs IDB batching,
/// heads on the designated cohort, OOD subsets everywhere, Table-3-style
/// stats.
void run_ood(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);

// Individual stages (the CLI exposes them as subcommands); each consults
// the manifest and skips work whose artifacts are already valid.
void stage_synth(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);
void stage_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);
void stage_embed(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);
void stage_heads(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);
void stage_analysis(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume);

/// Collates the persisted analysis CSVs into report/report.md; never
/// recomputes a number.
void write_report(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Encoder names for the configured experiment, e.g. {"single_alpha",
/// ..., "union_random"} or {"union_random", "union_idb"}.
std::vector<std::string> encoder_names(const ExperimentConfig& cfg);

} // namespace cape::experiment
