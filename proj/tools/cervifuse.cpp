// cervifuse: command-line runner for the feature-fusion pipeline.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "cervifuse/common/error.hpp"
#include "cervifuse/common/log.hpp"
#include "cervifuse/pipeline/config.hpp"
#include "cervifuse/pipeline/runner.hpp"
#include "cervifuse/pipeline/synth.hpp"

namespace fs = std::filesystem;
using namespace cervifuse;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment TOML file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "override the output directory");
  cmd->add_option("--data", c.data, "override the dataset root");
  cmd->add_option("--workers", c.workers, "worker threads (0 = all cores)");
}

pipeline::ExperimentConfig effective_config(const Common& c, std::string& text) {
  std::ifstream is(c.config, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  text = ss.str();
  auto cfg = pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = fs::absolute(c.out);
  if (!c.data.empty()) cfg.dataset_root = fs::absolute(c.data);
  if (c.workers) {
    if (*c.workers < 0) throw ConfigError("--workers: must be >= 0");
    cfg.workers = *c.workers;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid deep feature fusion and late fusion over frozen CNN trunks"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  Common common;
  std::optional<pipeline::Stage> stage;
  bool run_all = false;
  const std::pair<const char*, const char*> stages[] = {
      {"split", "ingest the dataset and write the stratified manifest"},
      {"augment", "offline augmentation of the training split"},
      {"extract", "frozen-trunk features for every split"},
      {"train-head", "train one head per backbone and store its 1024-d features"},
      {"train-fusion", "train the fusion classifier on concatenated head features"},
      {"predict-lf", "late fusion by majority vote over the heads"},
      {"eval", "confusion matrices and metrics for every model"},
      {"report", "comparison table and accuracy chart"},
  };
  const pipeline::Stage stage_ids[] = {pipeline::Stage::split,        pipeline::Stage::augment,
                                       pipeline::Stage::extract,      pipeline::Stage::train_head,
                                       pipeline::Stage::train_fusion, pipeline::Stage::predict_lf,
                                       pipeline::Stage::eval,         pipeline::Stage::report};
  for (std::size_t i = 0; i < std::size(stages); ++i) {
    auto* cmd = app.add_subcommand(stages[i].first, stages[i].second);
    add_common(cmd, common);
    cmd->callback([&, i] { stage = stage_ids[i]; });
  }
  auto* run = app.add_subcommand("run", "all stages in order");
  add_common(run, common);
  run->callback([&] { run_all = true; });

  pipeline::SynthSpec synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled image dataset");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--classes", synth.classes, "number of classes (2-7)")->capture_default_str();
  synth_cmd->add_option("--per-class", synth.per_class, "images per class")->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();

  std::string fm_backbone, fm_image, fm_out;
  auto* fm_cmd = app.add_subcommand("feature-maps", "write per-stage activation grids for one image");
  fm_cmd->add_option("--config", common.config, "experiment TOML file")->required()->check(CLI::ExistingFile);
  fm_cmd->add_option("--backbone", fm_backbone, "backbone id")->required();
  fm_cmd->add_option("--image", fm_image, "input image")->required()->check(CLI::ExistingFile);
  fm_cmd->add_option("--out", fm_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  log().set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (synth_cmd->parsed()) {
      const auto files = pipeline::synthesize(synth_out, synth);
      std::cout << files.size() << " images written to " << synth_out << "\n";
      return 0;
    }
    if (fm_cmd->parsed()) {
      for (const auto& p : pipeline::feature_maps(pipeline::load_config(common.config), fm_backbone, fm_image, fm_out))
        std::cout << p.string() << "\n";
      return 0;
    }

    std::string text;
    pipeline::Runner runner(effective_config(common, text), text);
    if (run_all) {
      std::cout << runner.run_all();
      for (const auto& c : runner.verify_trunks()) {
        if (!c.unchanged()) {
          log().error("trunk '{}' checksum changed", c.id);
          return 2;
        }
      }
    } else {
      switch (*stage) {
        case pipeline::Stage::split: runner.split(); break;
        case pipeline::Stage::augment: runner.augment(); break;
        case pipeline::Stage::extract: runner.extract(); break;
        case pipeline::Stage::train_head: runner.train_heads(); break;
        case pipeline::Stage::train_fusion: runner.train_fusion(); break;
        case pipeline::Stage::predict_lf: runner.predict_lf(); break;
        case pipeline::Stage::eval: runner.eval(); break;
        case pipeline::Stage::report: std::cout << runner.report(); break;
      }
    }
    std::cout << runner.dir().string() << "\n";
    return 0;
  } catch (const ValidationError& e) {
    log().error("{}", e.what());
    return 1;
  } catch (const InvalidParameter& e) {
    log().error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    log().error("{}", e.what());
    return 2;
  }
}
