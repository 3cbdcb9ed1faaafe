#include <cstdlib>
#include <fstream>
#include <set>
#include <sys/wait.h>

#include "cervifuse/common/error.hpp"
#include "cervifuse/common/hash.hpp"
#include "cervifuse/fusion/features.hpp"
#include "cervifuse/fusion/model.hpp"
#include "cervifuse/pipeline/config.hpp"
#include "cervifuse/pipeline/runner.hpp"
#include "cervifuse/pipeline/synth.hpp"
#include "doctest.h"
#include "support/tempdir.hpp"

using namespace cervifuse;
using namespace cervifuse::pipeline;
namespace fs = std::filesystem;

namespace {

std::string small_config(const fs::path& data, int copies = 1, int epochs = 2) {
  return "seed = 3\n"
         "output_dir = \"runs\"\n"
         "[dataset]\nroot = \"" + data.generic_string() + "\"\n"
         "[augment]\ncopies = " + std::to_string(copies) + "\n"
         "[[backbone]]\nid = \"a\"\nseed = 1\ninput_size = 32\n"
         "[[backbone]]\nid = \"b\"\nseed = 2\ninput_size = 32\n"
         "[head]\nphases = [{epochs = " + std::to_string(epochs) + ", lr = 1e-3}]\nfeature_dim = 64\n"
         "[fusion]\nphases = [{epochs = " + std::to_string(epochs) + ", lr = 1e-3}]\n";
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "/tmp");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults and relative paths") {
    const auto cfg = parse_config("seed = 9\n[dataset]\nroot = \"data\"\n[[backbone]]\nid = \"t\"\n", "/base");
    CHECK(cfg.seed == 9);
    CHECK(cfg.dataset_root == fs::path("/base/data"));
    CHECK(cfg.output_dir == fs::path("/base/runs"));
    CHECK(cfg.scheme == "folder");
    CHECK(cfg.augment_copies == 6);
    CHECK_FALSE(cfg.online.enabled);
    REQUIRE(cfg.head.phases.size() == 2);
    CHECK(cfg.head.phases[1].lr == 1e-5);
    CHECK(cfg.head.batch_size == 32);
    CHECK(cfg.fusion.phases.size() == 1);
    CHECK(cfg.fusion.phases[0].epochs == 50);
    CHECK(cfg.feature_dim == 1024);
    CHECK(cfg.backbones[0].kind == "toy");
  }

  TEST_CASE("errors carry field paths") {
    const std::string base = "seed = 1\n[dataset]\nroot = \"d\"\n[[backbone]]\nid = \"a\"\n";
    CHECK(config_error("[dataset]\nroot = \"d\"\n[[backbone]]\nid = \"a\"\n") == "seed: is required");
    CHECK(config_error(base + "[[backbone]]\nid = \"b\"\nseed = \"x\"\n") == "backbone[1].seed: expected an integer");
    CHECK(config_error(base + "[[backbone]]\nid = \"a\"\n") == "backbone[1].id: duplicate backbone id 'a'");
    CHECK(config_error("seed = 1\n[dataset]\nroot = \"d\"\nfoo = 1\n[[backbone]]\nid = \"a\"\n") == "dataset.foo: unknown key");
    CHECK(config_error(base + "[head]\nphases = [{epochs = -1}]\n") == "head.phases[0].epochs: must be >= 0");
    CHECK(config_error(base + "[fusion]\ndropout = 1.0\n") == "fusion.dropout: must be in [0, 1)");
    CHECK(config_error(base + "[[backbone]]\nid = \"o\"\nkind = \"onnx\"\n") == "backbone[1].model: is required for onnx backbones");
    CHECK(config_error("seed = 1\n[[backbone]]\nid = \"a\"\n") == "dataset: is required");
    CHECK(config_error("seed = [\n").find("config:1:") == 0);
  }

  TEST_CASE("validation checks referenced paths") {
    cftest::TempDir dir("cfg");
    fs::create_directories(dir / "data");
    auto cfg = parse_config("seed = 1\n[dataset]\nroot = \"data\"\n[[backbone]]\nid = \"a\"\n", dir.path());
    CHECK_NOTHROW(validate_config(cfg));
    cfg.scheme = "nope";
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    cfg.scheme = "sipakmed5";
    CHECK_NOTHROW(validate_config(cfg));
    cfg.backbones[0].kind = "onnx";
    cfg.backbones[0].model = dir / "missing.onnx";
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);
    cfg.dataset_root = dir / "absent";
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  }

  TEST_CASE("hash follows result-affecting fields only") {
    auto a = parse_config("seed = 1\n[dataset]\nroot = \"d\"\n[[backbone]]\nid = \"a\"\n", "/x");
    auto b = a;
    b.output_dir = "/elsewhere";
    b.workers = 7;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.seed = 2;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.head.phases[0].epochs = 49;
    CHECK(config_hash(a) != config_hash(b));
  }
}

TEST_SUITE("synthetic dataset") {
  TEST_CASE("counts and layout") {
    cftest::TempDir dir("synth");
    const auto files = synthesize(dir.path(), {5, 30, 64, 1});
    CHECK(files.size() == 150);
    std::size_t dirs = 0;
    for (const auto& e : fs::directory_iterator(dir.path())) dirs += e.is_directory();
    CHECK(dirs == 5);
    CHECK_THROWS_AS(synthesize(dir / "x", {8, 3, 64, 1}), InvalidParameter);
    CHECK_THROWS_AS(synthesize(dir / "x", {1, 3, 64, 1}), InvalidParameter);
  }

  TEST_CASE("same seed gives identical bytes") {
    cftest::TempDir a("synth_a"), b("synth_b");
    const auto fa = synthesize(a.path(), {3, 4, 32, 5});
    const auto fb = synthesize(b.path(), {3, 4, 32, 5});
    for (std::size_t i = 0; i < fa.size(); ++i) CHECK(sha256_file(fa[i]) == sha256_file(fb[i]));
    CHECK(synth_image({3, 4, 32, 5}, 1, 2) != synth_image({3, 4, 32, 6}, 1, 2));
  }

  TEST_CASE("classes are linearly separable in toy trunk space") {
    const SynthSpec spec{5, 30, 64, 1};
    std::vector<Image> images;
    std::vector<int> labels;
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < 30; ++i) {
        images.push_back(synth_image(spec, c, i));
        labels.push_back(c);
      }
    for (std::uint64_t trunk_seed : {11u, 23u}) {
      backbone::BackboneSpec b;
      b.id = "probe";
      b.seed = trunk_seed;
      b.input_size = 64;
      const auto trunk = backbone::load_trunk(b);
      const auto raw = backbone::trunk_forward(*trunk, images, 1);
      const auto x = fusion::Normalization::fit(raw).apply(raw);
      // softmax regression on standardized features
      auto probe = fusion::fusion_network<float>(x.cols(), 5, 1, 0.0);
      fusion::Schedule sch;
      sch.phases = {{300, 1e-2}};
      fusion::train_network(probe, x, labels, sch);
      const auto p = fusion::predict(probe, x);
      std::size_t ok = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) ok += p.labels[i] == labels[i];
      CHECK(static_cast<double>(ok) / 150.0 >= 0.99);
    }
  }
}

TEST_SUITE("runner") {
  TEST_CASE("stages enforce their upstream contracts") {
    cftest::TempDir dir("runner");
    synthesize(dir / "data", {5, 10, 32, 2});
    auto cfg = parse_config(small_config(dir / "data"), dir.path());
    Runner runner(cfg);
    CHECK(runner.dir() == dir / "runs" / ("run-" + config_hash(cfg)));

    try {
      runner.train_fusion();
      FAIL("expected MissingArtifact");
    } catch (const MissingArtifact& e) {
      CHECK(std::string(e.what()).find("features missing; run extract") == 0);
    }
    CHECK_THROWS_AS(runner.eval(), MissingArtifact);

    // a second runner on the same directory is refused while the first holds it
    CHECK_THROWS_AS(Runner{cfg}, StateError);

    const auto table = runner.run_all();
    CHECK(table.find("hdff") != std::string::npos);
    for (const char* stage : {"split", "augment", "extract", "train-head", "train-fusion", "predict-lf", "eval", "report"})
      CHECK(fs::exists(runner.dir() / "stages" / (std::string(stage) + ".json")));
    for (const auto& c : runner.verify_trunks()) CHECK(c.unchanged());

    const auto csv = slurp(runner.dir() / "report" / "comparison.csv");
    runner.eval();
    runner.report();
    CHECK(slurp(runner.dir() / "report" / "comparison.csv") == csv);

    const auto fm = fusion::load_feature_matrix(runner.dir() / "features" / "a.test.fmx");
    CHECK(fm.rows.cols() == 64);
    CHECK(fm.rows.rows() == 10);
    const auto preds = load_predictions(runner.dir() / "predictions" / "hdff.json");
    CHECK(preds.labels == fm.labels);
    CHECK(preds.sample_ids == fm.sample_ids);

    // tampering with an upstream artifact is detected
    std::ofstream(runner.dir() / "trunk" / "a.train.fmx", std::ios::app) << "x";
    CHECK_THROWS_AS(runner.train_heads(), ValidationError);
  }

  TEST_CASE("augmentation expands the training rows") {
    cftest::TempDir dir("runner_aug");
    synthesize(dir / "data", {2, 10, 32, 4});
    Runner runner(parse_config(small_config(dir / "data", 3), dir.path()));
    runner.split();
    runner.augment();
    const auto m = dataset::load_manifest(runner.dir() / "data" / "manifest_aug.csv");
    CHECK(m.count(dataset::Split::train) == 4 * 12);
    CHECK(m.count(dataset::Split::test) == 4);
  }

  TEST_CASE("predictions round-trip") {
    cftest::TempDir dir("preds");
    PredictionSet p{"x", {"a", "b"}, {"s0", "s1"}, {0, 1}, {1, 1}, nn::TensorF::matrix({{0.25f, 0.75f}, {0.5f, 0.5f}}), "h"};
    save_predictions(dir / "p.json", p);
    CHECK(load_predictions(dir / "p.json") == p);
    CHECK_THROWS_AS(load_predictions(dir / "none.json"), MissingArtifact);
  }
}

TEST_SUITE("command line") {
  TEST_CASE("exit codes") {
    cftest::TempDir dir("cli");
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("no-such-command") == 1);
    CHECK(run_cli("synth --out " + (dir / "data").string() + " --classes 2 --per-class 5 --size 32") == 0);
    CHECK(run_cli("synth --out " + (dir / "bad").string() + " --classes 9") == 1);

    std::ofstream(dir / "good.toml") << small_config(dir / "data");
    CHECK(run_cli("train-fusion --config " + (dir / "good.toml").string()) == 1);
    std::ofstream(dir / "bad.toml") << "seed = \"one\"\n";
    CHECK(run_cli("split --config " + (dir / "bad.toml").string()) == 1);

    // undecodable images fail at runtime
    fs::create_directories(dir / "junk" / "p");
    fs::create_directories(dir / "junk" / "q");
    for (int i = 0; i < 5; ++i) {
      std::ofstream(dir / "junk" / "p" / ("p" + std::to_string(i) + ".png")) << "not an image";
      std::ofstream(dir / "junk" / "q" / ("q" + std::to_string(i) + ".png")) << "not an image";
    }
    std::ofstream(dir / "junk.toml") << small_config(dir / "junk");
    CHECK(run_cli("split --config " + (dir / "junk.toml").string()) == 0);
    CHECK(run_cli("augment --config " + (dir / "junk.toml").string()) == 2);
  }
}
