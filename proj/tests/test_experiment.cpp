#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cape/digest.hpp>
#include <cape/experiment.hpp>
#include <cape/format.hpp>

#include <filesystem>
#include <fstream>

using namespace cape;
using namespace cape::experiment;

namespace {

namespace fs = std::filesystem;

ExperimentConfig mini_config(uint64_t seed, ExperimentKind kind, int runs) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.seed = seed;
  cfg.runs = runs;
  cfg.scale = 0.010; // 100/20/20 matrix splits, 100-sample subsets
  cfg.probe_seeds = 2;
  cfg.cohorts = syn::paperlike3(mix_seed({seed, 42}), 60);

  cfg.encoder.n_blocks = 2;
  cfg.encoder.stem_kernel = 9;
  cfg.encoder.block_kernel = 9;
  cfg.encoder.widths = {6, 8};
  cfg.encoder.embedding_dim = 16;
  cfg.encoder.projection = {16, 8};

  cfg.pretrain.batch_pairs = 16;
  cfg.pretrain.epochs = 2;
  cfg.pretrain.eta0 = 0.003;

  cfg.head_age.hidden = {32, 32};
  cfg.head_age.max_epochs = 30;
  cfg.head_sex.hidden = {32, 32};
  cfg.head_sex.max_epochs = 30;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cape_exp_" + name);
  fs::remove_all(dir);
  return dir;
}

uint64_t tree_digest(const fs::path& root, const std::string& subdir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root / subdir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 0x9876;
  for (const auto& f : files)
    h = mix_seed({h, fnv1a64(fs::relative(f, root).string()), digest_file(f)});
  return h;
}

} // namespace

TEST_CASE("mean(SE) compact notation fixtures") {
  CHECK(mean_se_compact(7.880, 0.0028, MetricKind::mae_years) == "7.880(028)");
  CHECK(mean_se_compact(0.939, 0.0006, MetricKind::auc) == "0.939(06)");
  CHECK(mean_se_compact(7.8799, 0.00281, MetricKind::mae_years) == "7.880(028)");
  CHECK(mean_se_compact(24.232, 1.7, MetricKind::mae_years) == "24.232(*)");
  CHECK(mean_se_compact(0.600, 0.016, MetricKind::auc) == "0.600(*)");
  CHECK(mean_se_compact(5.875, 0.0017, MetricKind::mae_years) == "5.875(017)");
  CHECK(mean_se_compact(0.977, 0.0003, MetricKind::auc) == "0.977(03)");
  // MAE spreads below 1.0 are in range even when large for an AUC
  CHECK(mean_se_compact(14.326, 0.5, MetricKind::mae_years) == "14.326(05000)");
}

TEST_CASE("config: canonical round trip and strict keys") {
  ExperimentConfig cfg = mini_config(3, ExperimentKind::ood, 2);
  const std::string dumped = cfg.canonical_json();
  ExperimentConfig back = parse_config(dumped);
  CHECK(back.canonical_json() == dumped);
  CHECK(back.digest() == cfg.digest());
  CHECK(back.cohorts.size() == 3);
  CHECK(back.pretrain.batch_pairs == 16);

  CHECK_THROWS_WITH_AS(parse_config(R"({"bogus_key": 1})"), doctest::Contains("unknown key"), Error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"encoder": {"widths": [4], "n_blocks": 1, "made_up": 2}})"),
                       doctest::Contains("unknown key"), Error);
  CHECK_THROWS_AS(parse_config("not json"), Error);
  CHECK_THROWS_AS(parse_config(R"({"kind": "sideways"})"), Error);
}

TEST_CASE("config: file round trip") {
  ExperimentConfig cfg = mini_config(9, ExperimentKind::matrix, 2);
  const fs::path p = fs::temp_directory_path() / "cape_cfg.json";
  save_config(cfg, p);
  ExperimentConfig back = load_config(p);
  CHECK(back.digest() == cfg.digest());
  CHECK(back.kind == ExperimentKind::matrix);
}

TEST_CASE("encoder naming per experiment kind") {
  ExperimentConfig ood_cfg = mini_config(1, ExperimentKind::ood, 2);
  CHECK(encoder_names(ood_cfg) == std::vector<std::string>{"union_random", "union_idb"});
  ExperimentConfig m_cfg = mini_config(1, ExperimentKind::matrix, 2);
  // 3 cohorts -> 4 encoders: 3 single + union
  CHECK(encoder_names(m_cfg) ==
        std::vector<std::string>{"single_alpha", "single_bravo", "single_charlie", "union_random"});
}

TEST_CASE("manifest round trip and validity") {
  const fs::path dir = fresh_dir("manifest");
  fs::create_directories(dir);
  const fs::path art = dir / "artifact.bin";
  {
    std::ofstream f(art, std::ios::binary);
    f << "hello";
  }
  RunManifest m;
  m.config_digest = 0xabcdef;
  m.code_version = "test";
  m.stages["stage1"] = {{{"artifact.bin", digest_file(art)}}, 1.5};
  m.save(dir / "manifest.json");

  RunManifest back = RunManifest::load(dir / "manifest.json");
  CHECK(back.config_digest == 0xabcdef);
  CHECK(back.stages.at("stage1").artifacts[0].rel_path == "artifact.bin");
  CHECK(back.stage_valid("stage1", dir));
  CHECK_FALSE(back.stage_valid("stage2", dir));
  {
    std::ofstream f(art, std::ios::binary);
    f << "tampered";
  }
  CHECK_FALSE(back.stage_valid("stage1", dir)); // digest mismatch
}

TEST_CASE("ood experiment: end to end on a mini bundle") {
  ExperimentConfig cfg = mini_config(11, ExperimentKind::ood, 2);
  const fs::path out = fresh_dir("ood");
  run_ood(cfg, out, false);

  // artifacts exist
  CHECK(fs::exists(out / "stores" / "alpha.ecgc"));
  CHECK(fs::exists(out / "splits" / "designated.json"));
  CHECK(fs::exists(out / "pretrain" / "union_random.nnp1"));
  CHECK(fs::exists(out / "pretrain" / "union_idb.nnp1"));
  CHECK(fs::exists(out / "emb" / "union_idb__charlie.emb1"));
  CHECK(fs::exists(out / "heads" / "ood_runs.csv"));
  CHECK(fs::exists(out / "analysis" / "ood_table.csv"));
  CHECK(fs::exists(out / "analysis" / "ood_pvalues.csv"));
  CHECK(fs::exists(out / "analysis" / "probe.csv"));
  CHECK(fs::exists(out / "analysis" / "bins_union_idb__bravo.csv"));
  CHECK(fs::exists(out / "report" / "report.md"));

  // runs table: header + runs x encoders x tasks x cohorts
  std::ifstream runs_f(out / "heads" / "ood_runs.csv");
  size_t lines = 0;
  std::string line;
  while (std::getline(runs_f, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 1 + 2 * 2 * 2 * 3);

  // ood_table rows carry n = runs and compact notation with parentheses
  std::ifstream table_f(out / "analysis" / "ood_table.csv");
  std::getline(table_f, line); // header
  size_t table_rows = 0;
  while (std::getline(table_f, line)) {
    if (line.empty()) continue;
    ++table_rows;
    CHECK(line.find("(") != std::string::npos);
    CHECK(line.substr(line.rfind(',') + 1) == "2");
  }
  CHECK(table_rows == 2 * 2 * (3 + 1)); // tasks x encoders x (cohorts + mean)

  // probe rows: per encoder, probe_seeds + mean
  std::ifstream probe_f(out / "analysis" / "probe.csv");
  size_t probe_rows = 0;
  while (std::getline(probe_f, line))
    if (!line.empty()) ++probe_rows;
  CHECK(probe_rows == 1 + 2 * (2 + 1));
}

TEST_CASE("ood experiment: determinism and resume") {
  ExperimentConfig cfg = mini_config(13, ExperimentKind::ood, 2);
  const fs::path out1 = fresh_dir("det1");
  const fs::path out2 = fresh_dir("det2");
  run_ood(cfg, out1, false);
  run_ood(cfg, out2, false);

  // byte-identical checkpoints, caches, analysis, and report
  for (const auto& sub : {"pretrain", "emb", "heads", "analysis", "report"})
    CHECK(tree_digest(out1, sub) == tree_digest(out2, sub));

  // resume: delete downstream stages, rerun, bytes unchanged
  const uint64_t heads_before = tree_digest(out1, "heads");
  const uint64_t report_before = tree_digest(out1, "report");
  fs::remove_all(out1 / "heads");
  fs::remove_all(out1 / "analysis");
  fs::remove_all(out1 / "report");
  run_ood(cfg, out1, true);
  CHECK(tree_digest(out1, "heads") == heads_before);
  CHECK(tree_digest(out1, "report") == report_before);

  // resume with a different config is refused
  ExperimentConfig other = cfg;
  other.seed += 1;
  CHECK_THROWS_WITH_AS(run_ood(other, out1, true), doctest::Contains("config digest mismatch"), Error);
}

TEST_CASE("ood: single-cohort config is rejected") {
  ExperimentConfig cfg = mini_config(15, ExperimentKind::ood, 2);
  cfg.cohorts.resize(1);
  const fs::path out = fresh_dir("oodsingle");
  CHECK_THROWS_WITH_AS(run_ood(cfg, out, false), doctest::Contains("single cohort"), Error);
}

TEST_CASE("matrix experiment: grid shape and kruskal-wallis output") {
  ExperimentConfig cfg = mini_config(17, ExperimentKind::matrix, 6);
  const fs::path out = fresh_dir("matrix");
  run_matrix(cfg, out, false);

  CHECK(fs::exists(out / "pretrain" / "single_alpha.nnp1"));
  CHECK(fs::exists(out / "pretrain" / "union_random.nnp1"));
  CHECK(fs::exists(out / "heads" / "matrix_runs.csv"));

  // grid: 4 encoders x 3 cohorts x 2 tasks rows, each with n = 6 runs
  std::ifstream grid_f(out / "analysis" / "matrix_grid.csv");
  std::string line;
  std::getline(grid_f, line);
  size_t rows = 0, cells_per_task = 0;
  while (std::getline(grid_f, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(line.substr(line.rfind(',') + 1) == "6");
    if (line.find(",age,") != std::string::npos) ++cells_per_task;
  }
  CHECK(rows == 4 * 3 * 2);
  CHECK(cells_per_task == 12); // 12 cell evaluations per task

  // KW comparisons across pretraining cohorts: one per (cohort, task)
  std::ifstream kw_f(out / "analysis" / "matrix_kw.csv");
  std::getline(kw_f, line);
  size_t kw_rows = 0;
  while (std::getline(kw_f, line)) {
    if (line.empty()) continue;
    ++kw_rows;
    const double p = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(kw_rows == 3 * 2);

  CHECK(fs::exists(out / "report" / "report.md"));
}
