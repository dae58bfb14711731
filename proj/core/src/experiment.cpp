#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cape/digest.hpp"
#include "cape/eval.hpp"
#include "cape/experiment.hpp"
#include "cape/format.hpp"
#include "cape/version.hpp"

namespace cape::experiment {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Layout and small utilities

struct Paths {
  std::filesystem::path root;
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path store(const std::string& name) const { return root / "stores" / (name + ".ecgc"); }
  std::filesystem::path split() const { return root / "splits" / "designated.json"; }
  std::filesystem::path ckpt(const std::string& enc) const { return root / "pretrain" / (enc + ".nnp1"); }
  std::filesystem::path loss(const std::string& enc) const {
    return root / "pretrain" / (enc + "_loss.csv");
  }
  std::filesystem::path emb(const std::string& enc, const std::string& cohort) const {
    return root / "emb" / (enc + "__" + cohort + ".emb1");
  }
  std::filesystem::path heads_dir() const { return root / "heads"; }
  std::filesystem::path analysis_dir() const { return root / "analysis"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

std::string rel(const Paths& paths, const std::filesystem::path& p) {
  return std::filesystem::relative(p, paths.root).string();
}

class Csv {
public:
  explicit Csv(const std::filesystem::path& path) : path_(path), tmp_(path.string() + ".tmp") {
    std::filesystem::create_directories(path.parent_path());
    out_.open(tmp_);
    require(out_.good(), "io: cannot write " + tmp_.string());
  }
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }
  void close() {
    out_.close();
    std::filesystem::rename(tmp_, path_);
  }

private:
  std::filesystem::path path_, tmp_;
  std::ofstream out_;
};

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "missing-file: cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Runs stages with manifest bookkeeping: a stage whose artifacts are all
// present with matching digests is skipped under --resume.
class Runner {
public:
  Runner(const ExperimentConfig& cfg, const std::filesystem::path& root, bool resume)
      : cfg_(cfg), paths_{root}, resume_(resume) {
    std::filesystem::create_directories(root);
    if (std::filesystem::exists(paths_.manifest())) {
      manifest_ = RunManifest::load(paths_.manifest());
      require(manifest_.config_digest == cfg.digest(),
              "resume: config digest mismatch with existing manifest in " + root.string());
    } else {
      manifest_.config_digest = cfg.digest();
      manifest_.code_version = std::string(kVersion);
    }
    save_config(cfg, paths_.config());
  }

  const Paths& paths() const { return paths_; }

  /// Runs fn unless the stage's artifacts are already valid.
  void stage(const std::string& key, const std::vector<std::filesystem::path>& artifacts,
             const std::function<void()>& fn) {
    if (resume_ && manifest_.stage_valid(key, paths_.root)) {
      std::cerr << "[cape] stage " << key << ": up to date\n";
      return;
    }
    std::cerr << "[cape] stage " << key << "...\n";
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    RunManifest::Stage entry;
    entry.seconds = secs;
    for (const auto& p : artifacts) {
      require(std::filesystem::exists(p), "stage " + key + " did not produce " + p.string());
      entry.artifacts.push_back({rel(paths_, p), digest_file(p)});
    }
    manifest_.stages[key] = std::move(entry);
    manifest_.save(paths_.manifest());
    std::cerr << "[cape] stage " << key << " done (" << fmt_fixed(secs, 1) << " s)\n";
  }

private:
  const ExperimentConfig& cfg_;
  Paths paths_;
  bool resume_;
  RunManifest manifest_;
};

// ---------------------------------------------------------------------------
// Shared pipeline pieces

std::vector<data::Store> open_stores(const ExperimentConfig& cfg, const Paths& paths) {
  std::vector<data::Store> stores;
  for (const auto& c : cfg.cohorts) stores.push_back(data::open_store(paths.store(c.name)));
  return stores;
}

/// Records of a store carrying both labels; the shared supervised pool.
std::vector<uint64_t> labeled_records(const data::Store& store) {
  std::vector<uint64_t> ids;
  for (size_t i = 0; i < store.size(); ++i) {
    const auto m = store.meta(i);
    if (!std::isnan(m.age) && m.sex != data::Sex::unknown) ids.push_back(m.record_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

data::Splits load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "missing-file: cannot open split " + path.string());
  json j;
  in >> j;
  data::Splits s;
  s.train = j.at("train").get<std::vector<uint64_t>>();
  s.val = j.at("val").get<std::vector<uint64_t>>();
  s.test = j.at("test").get<std::vector<uint64_t>>();
  return s;
}

void save_split(const data::Splits& s, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  json j{{"train", s.train}, {"val", s.val}, {"test", s.test}};
  std::ofstream out(path);
  require(out.good(), "io: cannot write split " + path.string());
  out << j.dump() << "\n";
}

void write_loss_csv(const std::filesystem::path& path, const ssl::PretrainResult& result) {
  Csv csv(path);
  csv.row({"epoch", "mean_loss", "sum_loss", "views", "batches"});
  for (const auto& e : result.epochs)
    csv.row({std::to_string(e.epoch), fmt_g(e.mean_loss), fmt_g(e.sum_loss), std::to_string(e.views),
             std::to_string(e.batches)});
  csv.close();
}

struct EncoderJob {
  std::string name;
  std::vector<size_t> store_indices; // into cfg.cohorts order
  ssl::BatchMode mode = ssl::BatchMode::random;
  bool exclude_designated_test = false;
};

std::vector<EncoderJob> encoder_jobs(const ExperimentConfig& cfg) {
  std::vector<EncoderJob> jobs;
  if (cfg.kind == ExperimentKind::matrix) {
    for (size_t i = 0; i < cfg.cohorts.size(); ++i)
      jobs.push_back({"single_" + cfg.cohorts[i].name, {i}, ssl::BatchMode::random, false});
    std::vector<size_t> all(cfg.cohorts.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    jobs.push_back({"union_random", all, ssl::BatchMode::random, false});
  } else {
    std::vector<size_t> all(cfg.cohorts.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    jobs.push_back({"union_random", all, ssl::BatchMode::random, true});
    jobs.push_back({"union_idb", all, ssl::BatchMode::idb, true});
  }
  return jobs;
}

/// Deterministic subset of a sorted pool: shuffle with the given stream,
/// take the first k, restore order.
std::vector<uint64_t> sample_subset(std::vector<uint64_t> pool, size_t k, Rng rng) {
  rng.shuffle(pool);
  k = std::min(k, pool.size());
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

Eigen::MatrixXf gather_features(const EmbeddingSet& emb, const std::unordered_map<uint64_t, size_t>& index,
                                std::span<const uint64_t> ids) {
  Eigen::MatrixXf x(emb.values.rows(), static_cast<Eigen::Index>(ids.size()));
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = index.find(ids[i]);
    require(it != index.end(), "analysis: record " + std::to_string(ids[i]) + " missing from embeddings");
    x.col(static_cast<Eigen::Index>(i)) = emb.values.col(static_cast<Eigen::Index>(it->second));
  }
  return x;
}

} // namespace

std::vector<std::string> encoder_names(const ExperimentConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& job : encoder_jobs(cfg)) names.push_back(job.name);
  return names;
}

// ---------------------------------------------------------------------------
// Stages

void stage_synth(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume) {
  Runner runner(cfg, out, resume);
  const Paths& paths = runner.paths();

  std::vector<std::filesystem::path> artifacts;
  for (const auto& c : cfg.cohorts) artifacts.push_back(paths.store(c.name));
  const bool need_split = cfg.kind == ExperimentKind::ood;
  if (need_split) artifacts.push_back(paths.split());

  runner.stage("synth", artifacts, [&] {
    std::filesystem::create_directories(paths.root / "stores");
    for (const auto& c : cfg.cohorts) syn::generate_cohort(c, paths.store(c.name));
    if (need_split) {
      data::Store designated = data::open_store(paths.store(cfg.cohorts[cfg.designated_cohort].name));
      std::vector<uint64_t> pool = labeled_records(designated);
      std::vector<uint64_t> patients(pool.size());
      std::unordered_map<uint64_t, uint64_t> patient_of;
      for (size_t i = 0; i < designated.size(); ++i) {
        const auto m = designated.meta(i);
        patient_of[m.record_id] = m.patient_id;
      }
      for (size_t i = 0; i < pool.size(); ++i) patients[i] = patient_of.at(pool[i]);
      data::SplitSpec spec;
      spec.mode = data::SplitMode::fractions;
      spec.unit = data::SplitUnit::record;
      spec.train = 0.5;
      spec.val = 0.1;
      spec.test = 0.4;
      spec.seed = mix_seed({cfg.seed, 0x6f6f6473706c6974ull});
      save_split(data::make_splits(pool, patients, spec), paths.split());
    }
  });
}

void stage_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume) {
  Runner runner(cfg, out, resume);
  const Paths& paths = runner.paths();
  const std::vector<data::Store> stores = open_stores(cfg, paths);

  std::vector<uint64_t> exclusion;
  if (cfg.kind == ExperimentKind::ood) exclusion = load_split(paths.split()).test;

  for (const EncoderJob& job : encoder_jobs(cfg)) {
    runner.stage("pretrain/" + job.name, {paths.ckpt(job.name), paths.loss(job.name)}, [&] {
      std::filesystem::create_directories(paths.root / "pretrain");
      std::vector<const data::Store*> ptrs;
      for (size_t idx : job.store_indices) ptrs.push_back(&stores[idx]);
      ssl::PretrainConfig pc = cfg.pretrain;
      pc.mode = job.mode;
      pc.seed = mix_seed({cfg.seed, 0x7074ull, fnv1a64(job.name)});
      const auto* excl = job.exclude_designated_test ? &exclusion : nullptr;
      ssl::PretrainResult result =
          ssl::pretrain(ptrs, pc, cfg.encoder, cfg.preprocess, cfg.augment, paths.ckpt(job.name), excl,
                        [&](const ssl::EpochStats& e) {
                          std::cerr << "[cape]   " << job.name << " epoch " << e.epoch
                                    << " loss " << fmt_fixed(e.mean_loss, 4) << "\n";
                        });
      write_loss_csv(paths.loss(job.name), result);
    });
  }
}

void stage_embed(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume) {
  Runner runner(cfg, out, resume);
  const Paths& paths = runner.paths();
  const std::vector<data::Store> stores = open_stores(cfg, paths);

  for (const EncoderJob& job : encoder_jobs(cfg)) {
    for (size_t c = 0; c < cfg.cohorts.size(); ++c) {
      const std::string key = "embed/" + job.name + "/" + cfg.cohorts[c].name;
      const auto path = paths.emb(job.name, cfg.cohorts[c].name);
      runner.stage(key, {path}, [&] {
        std::filesystem::create_directories(paths.root / "emb");
        ssl::EmbedResult result = ssl::embed(paths.ckpt(job.name), cfg.encoder, stores[c], {}, cfg.preprocess);
        if (result.skipped > 0)
          std::cerr << "[cape]   skipped " << result.skipped << " records (too short)\n";
        save_emb1(result.set, path);
      });
    }
  }
}

namespace {

struct LoadedEmbeddings {
  // [encoder][cohort]
  std::map<std::string, std::vector<EmbeddingSet>> sets;
  std::map<std::string, std::vector<std::unordered_map<uint64_t, size_t>>> indices;

  void load(const ExperimentConfig& cfg, const Paths& paths) {
    for (const auto& name : encoder_names(cfg)) {
      auto& per_cohort = sets[name];
      auto& per_index = indices[name];
      for (const auto& c : cfg.cohorts) {
        per_cohort.push_back(load_emb1(paths.emb(name, c.name)));
        per_index.push_back(per_cohort.back().index());
      }
    }
  }
};

std::vector<uint64_t> task_pool(const EmbeddingSet& emb, nn::HeadTask task) {
  std::vector<uint64_t> ids;
  for (size_t i = 0; i < emb.size(); ++i) {
    const bool ok = task == nn::HeadTask::age_regression
                        ? !std::isnan(emb.ages[i])
                        : emb.sexes[i] != static_cast<uint8_t>(data::Sex::unknown);
    if (ok) ids.push_back(emb.record_ids[i]);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<double> truths_for(const EmbeddingSet& emb, const std::unordered_map<uint64_t, size_t>& index,
                               std::span<const uint64_t> ids, nn::HeadTask task) {
  std::vector<double> out;
  out.reserve(ids.size());
  for (uint64_t id : ids) {
    const size_t row = index.at(id);
    out.push_back(task == nn::HeadTask::age_regression ? static_cast<double>(emb.ages[row])
                                                       : static_cast<double>(emb.sexes[row]));
  }
  return out;
}

const char* task_name(nn::HeadTask task) {
  return task == nn::HeadTask::age_regression ? "age" : "sex";
}

} // namespace

void stage_heads(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume) {
  Runner runner(cfg, out, resume);
  const Paths& paths = runner.paths();
  const auto heads = paths.heads_dir();

  if (cfg.kind == ExperimentKind::ood) {
    runner.stage("heads",
                 {heads / "ood_runs.csv", heads / "preds_age.csv", heads / "preds_sex.csv"}, [&] {
      LoadedEmbeddings emb;
      emb.load(cfg, paths);
      const data::Splits split = load_split(paths.split());
      const size_t designated = static_cast<size_t>(cfg.designated_cohort);

      Csv runs_csv(heads / "ood_runs.csv");
      runs_csv.row({"run", "encoder", "task", "cohort", "n", "value"});
      Csv age_csv(heads / "preds_age.csv");
      age_csv.row({"run", "encoder", "cohort", "record_id", "truth", "pred"});
      Csv sex_csv(heads / "preds_sex.csv");
      sex_csv.row({"run", "encoder", "cohort", "record_id", "label", "score"});

      for (int run = 0; run < cfg.runs; ++run) {
        for (const auto& enc : encoder_names(cfg)) {
          const auto& cohort_sets = emb.sets.at(enc);
          const auto& cohort_idx = emb.indices.at(enc);
          for (nn::HeadTask task : {nn::HeadTask::age_regression, nn::HeadTask::sex_classification}) {
            const nn::HeadConfig& head_cfg =
                task == nn::HeadTask::age_regression ? cfg.head_age : cfg.head_sex;
            nn::TrainedHead head =
                nn::train_head(cohort_sets[designated], task, head_cfg, split,
                               mix_seed({cfg.seed, 0x68656164ull, fnv1a64(enc),
                                         static_cast<uint64_t>(task), static_cast<uint64_t>(run)}));

            for (size_t c = 0; c < cfg.cohorts.size(); ++c) {
              // Evaluation pool: the designated cohort only ever exposes
              // its test split; external cohorts expose all labeled
              // records. One subset per (run, cohort), shared across
              // encoders and tasks so comparisons stay paired.
              std::vector<uint64_t> pool;
              if (c == designated) {
                for (uint64_t id : split.test)
                  if (cohort_idx[c].contains(id)) pool.push_back(id);
              } else {
                pool = task_pool(cohort_sets[c], task);
              }
              Rng subset_rng =
                  Rng(mix_seed({cfg.seed, 0x737562736574ull, static_cast<uint64_t>(run)}))
                      .fork(cfg.cohorts[c].cohort_id);
              const std::vector<uint64_t> subset = sample_subset(pool, cfg.ood_subset(), subset_rng);
              require(!subset.empty(), "heads: empty evaluation pool for " + cfg.cohorts[c].name);

              const Eigen::MatrixXf features = gather_features(cohort_sets[c], cohort_idx[c], subset);
              const std::vector<double> scores = head.predict(features);
              const std::vector<double> truth = truths_for(cohort_sets[c], cohort_idx[c], subset, task);

              double value;
              if (task == nn::HeadTask::age_regression) {
                value = eval::mae(scores, truth);
                for (size_t i = 0; i < subset.size(); ++i)
                  age_csv.row({std::to_string(run), enc, cfg.cohorts[c].name,
                               std::to_string(subset[i]), fmt_g(truth[i]), fmt_g(scores[i])});
              } else {
                std::vector<int> labels(truth.size());
                for (size_t i = 0; i < truth.size(); ++i) labels[i] = static_cast<int>(truth[i]);
                value = eval::auroc(scores, labels);
                for (size_t i = 0; i < subset.size(); ++i)
                  sex_csv.row({std::to_string(run), enc, cfg.cohorts[c].name,
                               std::to_string(subset[i]), std::to_string(labels[i]), fmt_g(scores[i])});
              }
              runs_csv.row({std::to_string(run), enc, task_name(task), cfg.cohorts[c].name,
                            std::to_string(subset.size()), fmt_g(value)});
            }
          }
        }
      }
      runs_csv.close();
      age_csv.close();
      sex_csv.close();
    });
    return;
  }

  // Matrix: per (cohort, run) split shared across encoders; heads trained
  // and evaluated within each label cohort.
  runner.stage("heads", {heads / "matrix_runs.csv"}, [&] {
    LoadedEmbeddings emb;
    emb.load(cfg, paths);
    Csv runs_csv(heads / "matrix_runs.csv");
    runs_csv.row({"run", "encoder", "cohort", "task", "n", "value"});

    const auto names = encoder_names(cfg);
    for (int run = 0; run < cfg.runs; ++run) {
      for (size_t c = 0; c < cfg.cohorts.size(); ++c) {
        // the split pool must not depend on the encoder: use the first
        // encoder's embedding of this cohort (record sets are identical
        // across encoders)
        const EmbeddingSet& ref = emb.sets.at(names[0])[c];
        std::vector<uint64_t> pool;
        for (size_t i = 0; i < ref.size(); ++i)
          if (!std::isnan(ref.ages[i]) && ref.sexes[i] != static_cast<uint8_t>(data::Sex::unknown))
            pool.push_back(ref.record_ids[i]);
        std::sort(pool.begin(), pool.end());

        data::SplitSpec spec;
        spec.mode = data::SplitMode::counts;
        spec.unit = data::SplitUnit::record;
        spec.train = static_cast<double>(cfg.matrix_train());
        spec.val = static_cast<double>(cfg.matrix_val());
        spec.test = static_cast<double>(cfg.matrix_test());
        spec.seed = mix_seed({cfg.seed, 0x6d73706c6974ull, static_cast<uint64_t>(c),
                              static_cast<uint64_t>(run)});
        const data::Splits split = data::make_splits(pool, pool, spec);

        for (const auto& enc : names) {
          const EmbeddingSet& set = emb.sets.at(enc)[c];
          const auto& index = emb.indices.at(enc)[c];
          for (nn::HeadTask task : {nn::HeadTask::age_regression, nn::HeadTask::sex_classification}) {
            const nn::HeadConfig& head_cfg =
                task == nn::HeadTask::age_regression ? cfg.head_age : cfg.head_sex;
            nn::TrainedHead head =
                nn::train_head(set, task, head_cfg, split,
                               mix_seed({cfg.seed, 0x6d68656164ull, fnv1a64(enc),
                                         static_cast<uint64_t>(task), static_cast<uint64_t>(c),
                                         static_cast<uint64_t>(run)}));
            const Eigen::MatrixXf features = gather_features(set, index, split.test);
            const std::vector<double> scores = head.predict(features);
            const std::vector<double> truth = truths_for(set, index, split.test, task);
            double value;
            if (task == nn::HeadTask::age_regression) {
              value = eval::mae(scores, truth);
            } else {
              std::vector<int> labels(truth.size());
              for (size_t i = 0; i < truth.size(); ++i) labels[i] = static_cast<int>(truth[i]);
              value = eval::auroc(scores, labels);
            }
            runs_csv.row({std::to_string(run), enc, cfg.cohorts[c].name, task_name(task),
                          std::to_string(split.test.size()), fmt_g(value)});
          }
        }
      }
    }
    runs_csv.close();
  });
}

// ---------------------------------------------------------------------------
// Analysis

namespace {

struct RunTable {
  // (task, cohort, encoder) -> per-run values, run-indexed
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> values;
};

RunTable read_runs(const std::filesystem::path& csv, bool matrix_layout) {
  RunTable table;
  auto rows = read_csv(csv);
  require(!rows.empty(), "analysis: empty runs table " + csv.string());
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    require(row.size() == 6, "analysis: malformed runs row");
    const int run = std::stoi(row[0]);
    const std::string& enc = row[1];
    const std::string task = matrix_layout ? row[3] : row[2];
    const std::string cohort = matrix_layout ? row[2] : row[3];
    auto& vec = table.values[task][cohort][enc];
    if (static_cast<int>(vec.size()) <= run) vec.resize(run + 1, 0.0);
    vec[run] = std::stod(row[5]);
  }
  return table;
}

void write_probe_and_pca(const ExperimentConfig& cfg, const Paths& paths, Csv& metrics_csv) {
  Csv probe_csv(paths.analysis_dir() / "probe.csv");
  probe_csv.row({"encoder", "probe_seed", "score"});
  Csv var_csv(paths.analysis_dir() / "pca_var.csv");
  var_csv.row({"encoder", "ev1", "ev2"});

  for (const auto& enc : encoder_names(cfg)) {
    EmbeddingSet all;
    for (const auto& c : cfg.cohorts) all.append(load_emb1(paths.emb(enc, c.name)));

    std::vector<double> scores;
    for (int s = 0; s < cfg.probe_seeds; ++s) {
      const double score = eval::cohort_probe(all, mix_seed({cfg.seed, 0x70726f6265ull,
                                                             static_cast<uint64_t>(s)}));
      scores.push_back(score);
      probe_csv.row({enc, std::to_string(s), fmt_g(score)});
    }
    double mean = 0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    probe_csv.row({enc, "mean", fmt_g(mean)});
    if (scores.size() >= 2) {
      const auto ci = eval::ci95(scores, "probe/" + enc);
      metrics_csv.row({"probe/" + enc, fmt_g(ci.value), fmt_g(ci.lo), fmt_g(ci.hi), fmt_g(ci.se),
                       std::to_string(ci.n)});
    }

    const eval::Pca2dResult pca = eval::pca2d(all.values);
    Csv pca_csv(paths.analysis_dir() / ("pca_" + enc + ".csv"));
    pca_csv.row({"record_id", "cohort_id", "pc1", "pc2"});
    for (size_t i = 0; i < all.size(); ++i)
      pca_csv.row({std::to_string(all.record_ids[i]), std::to_string(all.cohort_ids[i]),
                   fmt_g(pca.coords(static_cast<Eigen::Index>(i), 0)),
                   fmt_g(pca.coords(static_cast<Eigen::Index>(i), 1))});
    pca_csv.close();
    var_csv.row({enc, fmt_g(pca.explained[0]), fmt_g(pca.explained[1])});
  }
  probe_csv.close();
  var_csv.close();
}

void ood_analysis(const ExperimentConfig& cfg, const Paths& paths) {
  const auto analysis = paths.analysis_dir();
  std::filesystem::create_directories(analysis);
  const RunTable table = read_runs(paths.heads_dir() / "ood_runs.csv", false);

  Csv metrics_csv(analysis / "metrics.csv");
  metrics_csv.row({"metric", "value", "lo", "hi", "se", "n"});

  Csv table_csv(analysis / "ood_table.csv");
  table_csv.row({"task", "cohort", "encoder", "mean", "se", "compact", "n"});
  Csv p_csv(analysis / "ood_pvalues.csv");
  p_csv.row({"task", "cohort", "test", "p"});

  const auto encoders = encoder_names(cfg);
  for (const char* task : {"age", "sex"}) {
    const MetricKind kind = std::string(task) == "age" ? MetricKind::mae_years : MetricKind::auc;
    for (const auto& enc : encoders) {
      std::vector<double> row_means;
      for (int run = 0; run < cfg.runs; ++run) {
        double m = 0;
        for (const auto& c : cfg.cohorts) m += table.values.at(task).at(c.name).at(enc).at(run);
        row_means.push_back(m / static_cast<double>(cfg.cohorts.size()));
      }
      for (const auto& c : cfg.cohorts) {
        const auto& runs = table.values.at(task).at(c.name).at(enc);
        const auto ci = eval::ci95(runs, std::string(task) + "_" + enc + "_" + c.name);
        table_csv.row({task, c.name, enc, fmt_g(ci.value), fmt_g(ci.se),
                       mean_se_compact(ci.value, ci.se, kind), std::to_string(ci.n)});
        metrics_csv.row({std::string(task) + "/" + enc + "/" + c.name, fmt_g(ci.value), fmt_g(ci.lo),
                         fmt_g(ci.hi), fmt_g(ci.se), std::to_string(ci.n)});
      }
      const auto ci = eval::ci95(row_means, "row_mean");
      table_csv.row({task, "mean", enc, fmt_g(ci.value), fmt_g(ci.se),
                     mean_se_compact(ci.value, ci.se, kind), std::to_string(ci.n)});
      metrics_csv.row({std::string(task) + "/" + enc + "/mean", fmt_g(ci.value), fmt_g(ci.lo),
                       fmt_g(ci.hi), fmt_g(ci.se), std::to_string(ci.n)});
    }
  }

  // Paired comparisons between the two encoders, per cohort: Wilcoxon
  // signed-rank over per-run MAEs, DeLong over pooled per-sample sex
  // scores.
  require(encoders.size() == 2, "analysis: ood expects two encoders");
  for (const auto& c : cfg.cohorts) {
    const auto& age_a = table.values.at("age").at(c.name).at(encoders[0]);
    const auto& age_b = table.values.at("age").at(c.name).at(encoders[1]);
    std::vector<double> diffs;
    for (int run = 0; run < cfg.runs; ++run) diffs.push_back(age_a.at(run) - age_b.at(run));
    double p_w;
    try {
      p_w = eval::wilcoxon_signed_rank(diffs);
    } catch (const Error&) {
      p_w = 1.0; // all differences zero
    }
    p_csv.row({"age", c.name, "wilcoxon", fmt_g(p_w)});
  }
  {
    // pooled sex scores: rows keyed by (run, cohort, record_id)
    const auto rows = read_csv(paths.heads_dir() / "preds_sex.csv");
    std::map<std::string, std::map<std::string, std::pair<double, int>>> by_enc; // enc -> key -> (score,label)
    for (size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      const std::string key = row[0] + "/" + row[2] + "/" + row[3];
      by_enc[row[1]][key] = {std::stod(row[5]), std::stoi(row[4])};
    }
    for (const auto& c : cfg.cohorts) {
      std::vector<double> sa, sb;
      std::vector<int> labels;
      for (const auto& [key, sv] : by_enc.at(encoders[0])) {
        if (key.find("/" + c.name + "/") == std::string::npos) continue;
        const auto& other = by_enc.at(encoders[1]).at(key);
        sa.push_back(sv.first);
        sb.push_back(other.first);
        labels.push_back(sv.second);
      }
      double p_d;
      try {
        p_d = eval::delong_test(sa, sb, labels);
      } catch (const Error&) {
        p_d = 1.0;
      }
      p_csv.row({"sex", c.name, "delong", fmt_g(p_d)});
    }
  }
  p_csv.close();
  table_csv.close();

  // Fig. 5B analogue: per-bin age error from run 0's predictions.
  {
    const auto rows = read_csv(paths.heads_dir() / "preds_age.csv");
    std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>>
        preds; // enc -> cohort -> (truth, pred)
    for (size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row[0] != "0") continue;
      auto& [truth, pred] = preds[row[1]][row[2]];
      truth.push_back(std::stod(row[4]));
      pred.push_back(std::stod(row[5]));
    }
    for (const auto& enc : encoders)
      for (const auto& c : cfg.cohorts) {
        const auto& [truth, pred] = preds.at(enc).at(c.name);
        const eval::BinTable bins = eval::binned_mae(pred, truth, cfg.bin_width_years);
        Csv bin_csv(analysis / ("bins_" + enc + "__" + c.name + ".csv"));
        bin_csv.row({"lo", "hi", "count", "mae", "normalized", "empty"});
        for (const auto& b : bins.rows)
          bin_csv.row({fmt_g(b.lo), fmt_g(b.hi), std::to_string(b.count), fmt_g(b.mae_years),
                       fmt_g(b.normalized), b.empty ? "1" : "0"});
        bin_csv.close();
      }
  }

  write_probe_and_pca(cfg, paths, metrics_csv);
  metrics_csv.close();
}

void matrix_analysis(const ExperimentConfig& cfg, const Paths& paths) {
  const auto analysis = paths.analysis_dir();
  std::filesystem::create_directories(analysis);
  const RunTable table = read_runs(paths.heads_dir() / "matrix_runs.csv", true);

  Csv metrics_csv(analysis / "metrics.csv");
  metrics_csv.row({"metric", "value", "lo", "hi", "se", "n"});

  Csv grid_csv(analysis / "matrix_grid.csv");
  grid_csv.row({"encoder", "cohort", "task", "mean", "lo", "hi", "se", "n"});
  Csv kw_csv(analysis / "matrix_kw.csv");
  kw_csv.row({"cohort", "task", "h", "p"});

  for (const char* task : {"age", "sex"}) {
    for (const auto& c : cfg.cohorts) {
      std::vector<std::vector<double>> groups;
      for (const auto& enc : encoder_names(cfg)) {
        const auto& runs = table.values.at(task).at(c.name).at(enc);
        const auto ci = eval::ci95(runs, "cell");
        grid_csv.row({enc, c.name, task, fmt_g(ci.value), fmt_g(ci.lo), fmt_g(ci.hi), fmt_g(ci.se),
                      std::to_string(ci.n)});
        metrics_csv.row({std::string(task) + "/" + enc + "/" + c.name, fmt_g(ci.value), fmt_g(ci.lo),
                         fmt_g(ci.hi), fmt_g(ci.se), std::to_string(ci.n)});
        groups.push_back(runs);
      }
      const eval::KruskalResult kr = eval::kruskal_wallis(groups);
      kw_csv.row({c.name, task, fmt_g(kr.h), fmt_g(kr.p)});
    }
  }
  grid_csv.close();
  kw_csv.close();

  write_probe_and_pca(cfg, paths, metrics_csv);
  metrics_csv.close();
}

} // namespace

void stage_analysis(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume) {
  Runner runner(cfg, out, resume);
  const Paths& paths = runner.paths();
  std::vector<std::filesystem::path> artifacts = {paths.analysis_dir() / "metrics.csv",
                                                  paths.analysis_dir() / "probe.csv",
                                                  paths.analysis_dir() / "pca_var.csv"};
  if (cfg.kind == ExperimentKind::ood) {
    artifacts.push_back(paths.analysis_dir() / "ood_table.csv");
    artifacts.push_back(paths.analysis_dir() / "ood_pvalues.csv");
  } else {
    artifacts.push_back(paths.analysis_dir() / "matrix_grid.csv");
    artifacts.push_back(paths.analysis_dir() / "matrix_kw.csv");
  }
  runner.stage("analysis", artifacts, [&] {
    if (cfg.kind == ExperimentKind::ood)
      ood_analysis(cfg, paths);
    else
      matrix_analysis(cfg, paths);
  });
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::string md_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "";
  std::ostringstream os;
  os << "| ";
  for (const auto& cell : rows[0]) os << cell << " | ";
  os << "\n|";
  for (size_t i = 0; i < rows[0].size(); ++i) os << " --- |";
  os << "\n";
  for (size_t r = 1; r < rows.size(); ++r) {
    os << "| ";
    for (const auto& cell : rows[r]) os << cell << " | ";
    os << "\n";
  }
  return os.str();
}

} // namespace

void write_report(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  const Paths paths{out};
  std::filesystem::create_directories(paths.report_dir());
  std::ostringstream md;
  md << "# CAPE lab report\n\n";
  md << "Experiment kind: `" << to_string(cfg.kind) << "`, runs: " << cfg.runs
     << ", scale: " << fmt_g(cfg.scale) << ", seed: " << cfg.seed << "\n\n";
  md << "Config digest: `" << to_hex(cfg.digest()) << "`\n\n";

  if (cfg.kind == ExperimentKind::ood) {
    md << "## Table-3-style OOD comparison\n\n";
    md << "Values are `mean(SE)` over " << cfg.runs << " runs; `(*)` marks out-of-range spread "
       << "(SE >= 1.0 for MAE, >= 0.01 for AUC).\n\n";
    const auto rows = read_csv(paths.analysis_dir() / "ood_table.csv");
    for (const char* task : {"age", "sex"}) {
      md << "### " << (std::string(task) == "age" ? "Age prediction in years (MAE)" : "Sex prediction (AUC)")
         << "\n\n";
      std::vector<std::string> header = {"encoder"};
      for (const auto& c : cfg.cohorts) header.push_back(c.name);
      header.push_back("mean");
      std::vector<std::vector<std::string>> t = {header};
      for (const auto& enc : encoder_names(cfg)) {
        std::vector<std::string> line = {enc};
        for (const auto& c : cfg.cohorts) {
          for (size_t r = 1; r < rows.size(); ++r)
            if (rows[r][0] == task && rows[r][1] == c.name && rows[r][2] == enc)
              line.push_back(rows[r][5]);
        }
        for (size_t r = 1; r < rows.size(); ++r)
          if (rows[r][0] == task && rows[r][1] == "mean" && rows[r][2] == enc)
            line.push_back(rows[r][5]);
        t.push_back(std::move(line));
      }
      // p-value row
      const auto pv = read_csv(paths.analysis_dir() / "ood_pvalues.csv");
      std::vector<std::string> pline = {std::string("p-value [") +
                                        (std::string(task) == "age" ? "Wilcoxon" : "DeLong") + "]"};
      for (const auto& c : cfg.cohorts) {
        for (size_t r = 1; r < pv.size(); ++r)
          if (pv[r][0] == task && pv[r][1] == c.name) pline.push_back(pv[r][3]);
      }
      pline.push_back("-");
      t.push_back(std::move(pline));
      md << md_table(t) << "\n";
    }
  } else {
    md << "## Pretrain x label grid\n\n";
    const auto rows = read_csv(paths.analysis_dir() / "matrix_grid.csv");
    for (const char* task : {"age", "sex"}) {
      md << "### " << (std::string(task) == "age" ? "Age MAE (years)" : "Sex AUROC") << "\n\n";
      std::vector<std::string> header = {"pretrain \\ label"};
      for (const auto& c : cfg.cohorts) header.push_back(c.name);
      std::vector<std::vector<std::string>> t = {header};
      for (const auto& enc : encoder_names(cfg)) {
        std::vector<std::string> line = {enc};
        for (const auto& c : cfg.cohorts) {
          for (size_t r = 1; r < rows.size(); ++r)
            if (rows[r][0] == enc && rows[r][1] == c.name && rows[r][2] == task)
              line.push_back(fmt_fixed(std::stod(rows[r][3]), 3) + " [" +
                             fmt_fixed(std::stod(rows[r][4]), 3) + ", " +
                             fmt_fixed(std::stod(rows[r][5]), 3) + "]");
        }
        t.push_back(std::move(line));
      }
      md << md_table(t) << "\n";
    }
    md << "### Kruskal-Wallis across pretraining cohorts\n\n";
    const auto kw = read_csv(paths.analysis_dir() / "matrix_kw.csv");
    std::vector<std::vector<std::string>> t = {{"cohort", "task", "H", "p"}};
    for (size_t r = 1; r < kw.size(); ++r) t.push_back(kw[r]);
    md << md_table(t) << "\n";
  }

  md << "## Cohort-identifiability probe\n\n";
  md << "Macro AUROC of a stratified 5-fold logistic probe predicting the cohort from "
     << "embeddings (0.5 = unidentifiable).\n\n";
  const auto probe = read_csv(paths.analysis_dir() / "probe.csv");
  std::vector<std::vector<std::string>> pt = {{"encoder", "probe_seed", "score"}};
  for (size_t r = 1; r < probe.size(); ++r) pt.push_back(probe[r]);
  md << md_table(pt) << "\n";

  md << "## Principal-component projections\n\n";
  md << "Per-encoder 2-D coordinates are in `analysis/pca_<encoder>.csv`; explained-variance "
     << "fractions in `analysis/pca_var.csv`.\n\n";

  if (cfg.kind == ExperimentKind::ood) {
    md << "## Binned age error (run 0)\n\n";
    md << "Per-cohort tables in `analysis/bins_<encoder>__<cohort>.csv`; normalized column "
       << "scales each cohort's per-bin MAE by its maximum.\n\n";
  }

  md << "## Pretraining loss\n\n";
  for (const auto& enc : encoder_names(cfg)) {
    const auto rows = read_csv(paths.root / "pretrain" / (enc + "_loss.csv"));
    md << "- `" << enc << "`: epoch 0 loss " << fmt_fixed(std::stod(rows[1][1]), 4) << ", final loss "
       << fmt_fixed(std::stod(rows.back()[1]), 4) << " (" << rows.size() - 1 << " epochs)\n";
  }
  md << "\nAll numbers above are read from the persisted stage artifacts; nothing is recomputed "
     << "at report time.\n";

  const auto tmp = paths.report_dir() / "report.md.tmp";
  {
    std::ofstream f(tmp);
    require(f.good(), "io: cannot write report");
    f << md.str();
  }
  std::filesystem::rename(tmp, paths.report_dir() / "report.md");
}

// ---------------------------------------------------------------------------

void run_ood(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume) {
  require(cfg.kind == ExperimentKind::ood, "run_ood: config kind must be 'ood'");
  require(cfg.cohorts.size() >= 2, "run_ood: OOD is undefined with a single cohort");
  stage_synth(cfg, out, resume);
  stage_pretrain(cfg, out, resume);
  stage_embed(cfg, out, resume);
  stage_heads(cfg, out, resume);
  stage_analysis(cfg, out, resume);
  write_report(cfg, out);
}

void run_matrix(const ExperimentConfig& cfg, const std::filesystem::path& out, bool resume) {
  require(cfg.kind == ExperimentKind::matrix, "run_matrix: config kind must be 'matrix'");
  require(cfg.cohorts.size() >= 2, "run_matrix: need at least two cohorts");
  stage_synth(cfg, out, resume);
  stage_pretrain(cfg, out, resume);
  stage_embed(cfg, out, resume);
  stage_heads(cfg, out, resume);
  stage_analysis(cfg, out, resume);
  write_report(cfg, out);
}

} // namespace cape::experiment
