#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cervifuse/nn/tensor.hpp"
#include "cervifuse/pipeline/config.hpp"

namespace cervifuse::pipeline {

enum class Stage { split, augment, extract, train_head, train_fusion, predict_lf, eval, report };

/// Command name of the stage, e.g. "train-head".
const char* to_string(Stage s);

/// Class probabilities and decisions of one model on the test split.
struct PredictionSet {
  std::string name;
  std::vector<std::string> classes;
  std::vector<std::string> sample_ids;
  std::vector<int> labels;
  std::vector<int> predicted;
  nn::TensorF probs;
  std::string config_hash;

  bool operator==(const PredictionSet&) const = default;
};

void save_predictions(const std::filesystem::path& path, const PredictionSet& p);
PredictionSet load_predictions(const std::filesystem::path& path);

/// Exclusive ownership of a run directory through `<dir>/.lock`. A lock
/// left behind by a dead process is taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct TrunkCheck {
  std::string id;
  std::string recorded;
  std::string current;
  bool unchanged() const { return recorded == current; }
};

/// Executes pipeline stages inside `<output_dir>/run-<config hash>`.
/// Every stage checks that its upstream stages ran under the same config
/// hash and that their outputs are unmodified, then writes
/// `stages/<stage>.json` with the SHA-256 of its inputs and outputs.
class Runner {
 public:
  /// config_text is copied into the run directory as config.toml.
  Runner(ExperimentConfig cfg, const std::string& config_text = {});

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  const std::filesystem::path& dir() const { return dir_; }

  void split();
  void augment();
  void extract();
  void train_heads();
  void train_fusion();
  void predict_lf();
  void eval();
  /// Returns the plain-text comparison table.
  std::string report();
  /// All stages in order; fusion stages are skipped with fewer than two backbones.
  std::string run_all();

  /// Reloads every trunk and compares its checksum with the one recorded by extract.
  std::vector<TrunkCheck> verify_trunks() const;

  /// Names of the prediction sets eval and report cover, in table order.
  std::vector<std::string> model_names() const;

 private:
  ExperimentConfig cfg_;
  std::string hash_;
  std::filesystem::path dir_;
  RunLock lock_;
};

/// Writes per-stage activation grids of one image for one configured backbone.
std::vector<std::filesystem::path> feature_maps(const ExperimentConfig& cfg, const std::string& backbone_id,
                                                const std::filesystem::path& image,
                                                const std::filesystem::path& out_dir);

}  // namespace cervifuse::pipeline
