#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cervifuse/augment/online.hpp"
#include "cervifuse/backbone/backbone.hpp"
#include "cervifuse/dataset/manifest.hpp"
#include "cervifuse/fusion/model.hpp"

namespace cervifuse::pipeline {

struct TrainConfig {
  std::vector<fusion::Phase> phases;
  std::size_t batch_size = 32;
  double dropout = 0.5;
};

/// One experiment. Relative paths are resolved against the config file.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path dataset_root;
  std::string scheme = "folder";  // "folder" or a built-in scheme name
  dataset::SplitFractions split;
  int augment_copies = 6;
  augment::OnlineAugConfig online = disabled_online();
  std::vector<backbone::BackboneSpec> backbones;
  TrainConfig head{{{50, 1e-3}, {50, 1e-5}}, 32, 0.5};
  std::size_t feature_dim = fusion::kFeatureDim;
  TrainConfig fusion{{{50, 1e-3}}, 32, 0.5};
  std::filesystem::path output_dir = "runs";
  int workers = 0;  // 0 = hardware concurrency; never affects results

  static augment::OnlineAugConfig disabled_online() {
    augment::OnlineAugConfig c;
    c.enabled = false;
    return c;
  }
};

/// Parses TOML text. Throws ConfigError naming the offending field path
/// (e.g. "backbone[1].seed"). base_dir anchors relative paths.
ExperimentConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir,
                              std::string_view source_name = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Semantic checks including the existence of referenced paths.
void validate_config(const ExperimentConfig& cfg);

/// Stable JSON of every result-affecting field (not output_dir or workers).
std::string canonical_json(const ExperimentConfig& cfg);
/// First 16 hex digits of the SHA-256 of canonical_json.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace cervifuse::pipeline
