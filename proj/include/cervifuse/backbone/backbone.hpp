#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cervifuse/image/image.hpp"
#include "cervifuse/nn/tensor.hpp"

namespace cervifuse::backbone {

/// Dense float activations, height x width x channels, channel fastest.
struct FeatureMap {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int y, int x, int c) const { return (static_cast<std::size_t>(y) * width + x) * channels + c; }
  float& at(int y, int x, int c) { return data[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data[index(y, x, c)]; }
  bool operator==(const FeatureMap&) const = default;
};

enum class ChannelOrder { rgb, bgr };

struct PreprocessSpec {
  int height = 224, width = 224;
  ChannelOrder channel_order = ChannelOrder::rgb;
  double scale = 1.0;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  /// Throws InvalidParameter for non-positive sizes or std.
  void validate() const;
};

/// Bilinear resize with half-pixel centres and edge clamping; no rounding.
FeatureMap resize_bilinear(const Image& img, int width, int height);

/// Resize, reorder channels, then (v * scale - mean) / std per channel.
FeatureMap preprocess(const Image& img, const PreprocessSpec& spec);

/// 3x3 convolution weights laid out [out][ky][kx][in].
struct Conv2d {
  int in_channels = 0, out_channels = 0, stride = 1;
  std::vector<float> weights;
  std::vector<float> bias;

  /// He-uniform weights and small uniform biases from a seed.
  static Conv2d random(int in, int out, int stride, std::uint64_t seed, float weight_gain = 1.0f);
};

/// Same-size (stride 1) or halving (stride 2) convolution with replicated borders.
FeatureMap conv2d(const FeatureMap& x, const Conv2d& conv, bool relu);

/// H(x) = F(x) + x with F = b(relu(a(x))). Throws DimensionError when F(x)
/// and x differ in shape.
FeatureMap residual_block(const FeatureMap& x, const Conv2d& a, const Conv2d& b);

/// Per-channel maximum over all spatial positions.
std::vector<float> global_max_pool(const FeatureMap& x);

/// A frozen feature extractor.
class Trunk {
 public:
  virtual ~Trunk() = default;
  virtual const std::string& id() const = 0;
  virtual const PreprocessSpec& preprocess_spec() const = 0;
  virtual std::size_t output_dim() const = 0;
  /// Pooled features for preprocessed inputs, one row per input.
  virtual nn::TensorF forward(const std::vector<FeatureMap>& inputs) const = 0;
  /// SHA-256 over the parameters, for the frozen-weights check.
  virtual std::string checksum() const = 0;
  /// Names accepted by stage_maps; empty when the trunk exposes none.
  virtual std::vector<std::string> stage_names() const { return {}; }
  /// Intermediate activations for one preprocessed input. Throws
  /// InvalidParameter naming the valid stages for an unknown id.
  virtual std::vector<FeatureMap> stage_maps(const FeatureMap& input, const std::vector<std::string>& stages) const;
};

/// Three stride-2 convolution stages (8, 16, 32 channels) with ReLU, a
/// residual block on the last stage and global max pooling.
class ToyTrunk final : public Trunk {
 public:
  ToyTrunk(std::string id, std::uint64_t seed, PreprocessSpec spec);

  const std::string& id() const override { return id_; }
  const PreprocessSpec& preprocess_spec() const override { return spec_; }
  std::size_t output_dim() const override { return 32; }
  nn::TensorF forward(const std::vector<FeatureMap>& inputs) const override;
  std::string checksum() const override;
  std::vector<std::string> stage_names() const override { return {"stage1", "stage2", "stage3"}; }
  std::vector<FeatureMap> stage_maps(const FeatureMap& input, const std::vector<std::string>& stages) const override;

  std::vector<float> features(const FeatureMap& input) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::array<FeatureMap, 3> run(const FeatureMap& input) const;

  std::string id_;
  std::uint64_t seed_;
  PreprocessSpec spec_;
  Conv2d c1_, c2_, c3_, res_a_, res_b_;
};

/// Sidecar next to an interchange model: `<model>.manifest.json`.
struct OnnxManifest {
  std::string input_name;
  std::string output_name;
  std::array<int, 2> input_size{224, 224};  // height, width
  ChannelOrder channel_order = ChannelOrder::rgb;
  double scale = 1.0;
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> std{1, 1, 1};
  std::size_t output_dim = 0;
  std::string layout = "nchw";

  PreprocessSpec preprocess() const;
};

std::filesystem::path onnx_manifest_path(const std::filesystem::path& model);
/// Throws LoadError when missing or malformed.
OnnxManifest load_onnx_manifest(const std::filesystem::path& path);
void save_onnx_manifest(const OnnxManifest& m, const std::filesystem::path& path);

/// ONNX graph executed by OpenCV's dnn runner against the declared nodes.
class OnnxTrunk final : public Trunk {
 public:
  /// Throws LoadError for a missing file, unreadable graph or node names
  /// the graph does not have.
  OnnxTrunk(std::string id, const std::filesystem::path& model);
  ~OnnxTrunk() override;

  const std::string& id() const override { return id_; }
  const PreprocessSpec& preprocess_spec() const override { return spec_; }
  std::size_t output_dim() const override { return manifest_.output_dim; }
  nn::TensorF forward(const std::vector<FeatureMap>& inputs) const override;
  std::string checksum() const override { return checksum_; }

 private:
  struct Runner;
  std::string id_;
  OnnxManifest manifest_;
  PreprocessSpec spec_;
  std::string checksum_;
  std::unique_ptr<Runner> runner_;
};

/// How to obtain a trunk.
struct BackboneSpec {
  std::string id;
  std::string kind = "toy";  // toy | onnx
  std::filesystem::path model;  // onnx only
  std::uint64_t seed = 0;       // toy only
  int input_size = 224;         // toy only; onnx reads its manifest
  std::size_t output_dim = 0;   // 0 = accept the trunk's own
};

/// Throws LoadError / InvalidParameter; checks output_dim when given.
std::unique_ptr<Trunk> load_trunk(const BackboneSpec& spec);

/// Preprocesses and runs images in order; rows match input order.
nn::TensorF trunk_forward(const Trunk& trunk, const std::vector<Image>& images, int workers = 0);

/// Writes `<out_dir>/<stage>.png`, one normalized grayscale grid per stage.
std::vector<std::filesystem::path> dump_feature_maps(const Trunk& trunk, const Image& img,
                                                     const std::vector<std::string>& stages,
                                                     const std::filesystem::path& out_dir);

/// Tiles the channels of a map into a grayscale image, each channel min-max
/// normalized on its own (constant channels render as mid gray).
Image render_grid(const FeatureMap& map, int min_tile = 32);

}  // namespace cervifuse::backbone
