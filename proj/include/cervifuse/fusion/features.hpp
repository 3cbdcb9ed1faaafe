#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cervifuse/nn/tensor.hpp"

namespace cervifuse::fusion {

/// Per-dimension z-score parameters. Zero spread is stored as 1.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;

  static Normalization fit(const nn::TensorF& rows);
  nn::TensorF apply(const nn::TensorF& rows) const;
  bool operator==(const Normalization&) const = default;
};

/// Feature rows of one backbone for one split, aligned with sample_ids.
struct FeatureMatrix {
  std::string backbone_id;
  std::string split;
  nn::TensorF rows;
  std::vector<int> labels;
  std::vector<std::string> sample_ids;
  std::vector<std::string> class_names;
  Normalization normalization;
  std::string config_hash;

  std::size_t size() const { return labels.size(); }
  /// Throws DimensionError when rows, labels and ids disagree or values are not finite.
  void validate() const;
  bool operator==(const FeatureMatrix&) const = default;
};

/// Binary "FMX1" | u32 rows | u32 cols | f32 payload, plus `<path>.json`
/// carrying everything else.
void save_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix load_feature_matrix(const std::filesystem::path& path);

/// Row-wise concatenation in the given order. Throws AlignmentError when
/// row counts, sample ids or labels differ.
nn::TensorF concat_features(const std::vector<const FeatureMatrix*>& blocks);
nn::TensorF concat_features(const std::vector<FeatureMatrix>& blocks);

}  // namespace cervifuse::fusion
