#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cervifuse/nn/network.hpp"

namespace cervifuse::fusion {

inline constexpr std::size_t kFeatureDim = 1024;

struct Phase {
  int epochs = 0;
  double lr = 1e-3;
};

/// Mini-batch Adam schedule. Phases run back to back with one optimizer
/// whose learning rate switches at each phase boundary.
struct Schedule {
  std::vector<Phase> phases{{50, 1e-3}, {50, 1e-5}};
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  int total_epochs() const;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};
using History = std::vector<EpochRecord>;

/// Optional held-out set scored after every epoch.
struct Validation {
  const nn::TensorF* x = nullptr;
  const std::vector<int>* labels = nullptr;
};

/// Supplies the inputs for an epoch (for per-epoch augmented features).
/// Must return the same row count in the same label order each time.
using EpochInputs = std::function<nn::TensorF(int epoch)>;

/// Shuffled mini-batch training with fused softmax cross-entropy. A final
/// batch of one row is merged into the previous batch. Throws
/// DivergenceError when the loss stops being finite.
History train_network(nn::Network<float>& net, const nn::TensorF& x, const std::vector<int>& labels,
                      const Schedule& schedule, const Validation& val = {}, const EpochInputs& inputs = {});

struct Prediction {
  nn::TensorF probs;
  std::vector<int> labels;
};

/// Inference-mode softmax in fixed-size chunks; rows do not depend on the chunking.
Prediction predict(nn::Network<float>& net, const nn::TensorF& x, std::size_t chunk = 256);

/// BN(in) -> dense(feature_dim, relu) -> dropout -> dense(classes).
template <typename T>
nn::Network<T> head_network(std::size_t input_dim, std::size_t classes, std::uint64_t seed, double dropout = 0.5,
                            std::size_t feature_dim = kFeatureDim) {
  Rng rng(derive_seed(seed, 0));
  nn::Network<T> net;
  net.add("bn_in", nn::BatchNormLayer<T>(nn::BatchNormParams<T>::identity(input_dim)));
  net.add("dense_feat", nn::DenseLayer<T>(nn::DenseParams<T>::glorot(input_dim, feature_dim, nn::Activation::relu, rng)));
  net.add("dropout", nn::DropoutLayer<T>(dropout, derive_seed(seed, 1)));
  net.add("dense_cls", nn::DenseLayer<T>(nn::DenseParams<T>::glorot(feature_dim, classes, nn::Activation::none, rng)));
  return net;
}

/// BN(in) -> dropout -> dense(classes).
template <typename T>
nn::Network<T> fusion_network(std::size_t input_dim, std::size_t classes, std::uint64_t seed, double dropout = 0.5) {
  Rng rng(derive_seed(seed, 0));
  nn::Network<T> net;
  net.add("bn", nn::BatchNormLayer<T>(nn::BatchNormParams<T>::identity(input_dim)));
  net.add("dropout", nn::DropoutLayer<T>(dropout, derive_seed(seed, 1)));
  net.add("dense_cls", nn::DenseLayer<T>(nn::DenseParams<T>::glorot(input_dim, classes, nn::Activation::none, rng)));
  return net;
}

struct HeadConfig {
  std::string backbone_id;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  std::size_t feature_dim = kFeatureDim;
  double dropout = 0.5;
  std::uint64_t seed = 0;
};

/// Trainable classifier on top of one frozen trunk.
class HeadModel {
 public:
  explicit HeadModel(HeadConfig cfg);

  const HeadConfig& config() const { return cfg_; }
  bool trained() const { return trained_; }
  nn::Network<float>& network() { return net_; }

  History train(const nn::TensorF& x, const std::vector<int>& labels, const Schedule& schedule,
                const Validation& val = {}, const EpochInputs& inputs = {});
  /// Post-ReLU activations of the feature layer in inference mode.
  /// Throws StateError before training.
  nn::TensorF features(const nn::TensorF& trunk_features, std::size_t chunk = 256);
  Prediction predict(const nn::TensorF& trunk_features);

  /// CFCK tensors plus a JSON sidecar `<path>.json` with the config.
  void save(const std::filesystem::path& path);
  static HeadModel load(const std::filesystem::path& path);

 private:
  HeadConfig cfg_;
  nn::Network<float> net_;
  bool trained_ = false;
};

struct FusionConfig {
  std::vector<std::string> backbone_ids;  // concatenation order
  std::size_t block_dim = kFeatureDim;
  std::size_t classes = 0;
  double dropout = 0.5;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return backbone_ids.size() * block_dim; }
};

/// The fusion classifier over concatenated head features. Needs k >= 2 blocks.
class FusionModel {
 public:
  explicit FusionModel(FusionConfig cfg);

  const FusionConfig& config() const { return cfg_; }
  bool trained() const { return trained_; }
  nn::Network<float>& network() { return net_; }

  History train(const nn::TensorF& x, const std::vector<int>& labels, const Schedule& schedule,
                const Validation& val = {});
  Prediction predict(const nn::TensorF& x);

  void save(const std::filesystem::path& path);
  static FusionModel load(const std::filesystem::path& path);

 private:
  FusionConfig cfg_;
  nn::Network<float> net_;
  bool trained_ = false;
};

/// Most voted class per sample; ties go to the highest mean probability
/// among the tied classes, then the lowest class index. votes is [M][N],
/// probs holds M matrices of N x C.
std::vector<int> majority_vote(const std::vector<std::vector<int>>& votes, const std::vector<nn::TensorF>& probs);

}  // namespace cervifuse::fusion
