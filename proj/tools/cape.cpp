// cape: synthetic-cohort contrastive ECG pretraining lab.
//
// Subcommands mirror the pipeline stages; `matrix` and `ood` run the
// whole experiment end to end. Stage commands consult the run manifest
// and skip work whose artifacts are already valid, so a pipeline can be
// resumed or driven step by step.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include <cape/experiment.hpp>
#include <cape/version.hpp>

using namespace cape;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "cape_out";
  uint64_t seed = 0;
  bool seed_set = false;
  double scale = 0.0;
  bool scale_set = false;
  std::string mode;
  bool resume = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON experiment config (defaults to paperlike3)");
  cmd->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--seed", opts.seed, "override the experiment seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });
  cmd->add_option("--scale", opts.scale, "override the split-size scale factor")
      ->each([&](const std::string&) { opts.scale_set = true; });
  cmd->add_option("--mode", opts.mode, "batching mode for `pretrain` (random|idb)");
  cmd->add_flag("--resume", opts.resume, "skip stages whose artifacts are already valid");
}

experiment::ExperimentConfig resolve_config(const CommonOpts& opts, experiment::ExperimentKind kind) {
  experiment::ExperimentConfig cfg =
      opts.config_path.empty()
          ? experiment::ExperimentConfig::paperlike_desk(opts.seed_set ? opts.seed : 1)
          : experiment::load_config(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (opts.scale_set) cfg.scale = opts.scale;
  cfg.kind = kind;
  if (!opts.mode.empty()) cfg.pretrain.mode = ssl::parse_batch_mode(opts.mode);
  cfg.validate();
  return cfg;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"cape: patient-pair contrastive ECG pretraining lab"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::map<std::string, CommonOpts> opts;
  struct Cmd {
    const char* name;
    const char* help;
  };
  const std::vector<Cmd> cmds = {
      {"synth", "generate the synthetic cohort stores (and the designated split for ood)"},
      {"pretrain", "contrastive pretraining for every configured encoder"},
      {"embed", "evaluation-mode embeddings for every (encoder, cohort)"},
      {"head", "train/evaluate the MLP prediction heads"},
      {"eval", "statistics, probe, PCA, and binned-error analysis"},
      {"matrix", "full pretrain x label matrix experiment"},
      {"ood", "full out-of-distribution experiment (random vs IDB)"},
      {"report", "collate persisted artifacts into report/report.md"},
  };
  for (const auto& c : cmds) add_common(app.add_subcommand(c.name, c.help), opts[c.name]);

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    const CommonOpts& o = opts[name];
    // `matrix`/`ood` pin their kind; stage commands honor the config's.
    experiment::ExperimentKind kind = experiment::ExperimentKind::ood;
    if (name == "matrix")
      kind = experiment::ExperimentKind::matrix;
    else if (name != "ood" && !o.config_path.empty())
      kind = experiment::load_config(o.config_path).kind;

    const experiment::ExperimentConfig cfg = resolve_config(o, kind);
    const std::filesystem::path out = o.out_dir;

    if (name == "synth") {
      experiment::stage_synth(cfg, out, o.resume);
    } else if (name == "pretrain") {
      experiment::stage_synth(cfg, out, true);
      experiment::stage_pretrain(cfg, out, o.resume);
    } else if (name == "embed") {
      experiment::stage_embed(cfg, out, o.resume);
    } else if (name == "head") {
      experiment::stage_heads(cfg, out, o.resume);
    } else if (name == "eval") {
      experiment::stage_analysis(cfg, out, o.resume);
    } else if (name == "matrix") {
      experiment::run_matrix(cfg, out, o.resume);
    } else if (name == "ood") {
      experiment::run_ood(cfg, out, o.resume);
    } else if (name == "report") {
      experiment::write_report(cfg, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
