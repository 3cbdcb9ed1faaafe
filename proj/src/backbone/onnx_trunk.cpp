#include <fstream>
#include <mutex>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "cervifuse/backbone/backbone.hpp"
#include "cervifuse/common/error.hpp"
#include "cervifuse/common/hash.hpp"

namespace fs = std::filesystem;

namespace cervifuse::backbone {

PreprocessSpec OnnxManifest::preprocess() const {
  PreprocessSpec p;
  p.height = input_size[0];
  p.width = input_size[1];
  p.channel_order = channel_order;
  p.scale = scale;
  p.mean = mean;
  p.std = std;
  return p;
}

fs::path onnx_manifest_path(const fs::path& model) {
  fs::path p = model;
  p.replace_extension(".manifest.json");
  return p;
}

OnnxManifest load_onnx_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("missing model manifest " + path.string());
  OnnxManifest m;
  try {
    const auto j = nlohmann::json::parse(is);
    m.input_name = j.at("input_name").get<std::string>();
    m.output_name = j.at("output_name").get<std::string>();
    m.input_size = j.at("input_size").get<std::array<int, 2>>();
    const auto order = j.at("channel_order").get<std::string>();
    if (order != "rgb" && order != "bgr") throw LoadError("channel_order must be rgb or bgr in " + path.string());
    m.channel_order = order == "bgr" ? ChannelOrder::bgr : ChannelOrder::rgb;
    m.scale = j.at("scale").get<double>();
    m.mean = j.at("mean").get<std::array<double, 3>>();
    m.std = j.at("std").get<std::array<double, 3>>();
    m.output_dim = j.at("output_dim").get<std::size_t>();
    m.layout = j.value("layout", std::string("nchw"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed model manifest " + path.string() + ": " + e.what());
  }
  if (m.layout != "nchw" && m.layout != "nhwc") throw LoadError("layout must be nchw or nhwc in " + path.string());
  if (m.output_dim == 0) throw LoadError("output_dim must be positive in " + path.string());
  try {
    m.preprocess().validate();
  } catch (const InvalidParameter& e) {
    throw LoadError(std::string(e.what()) + " in " + path.string());
  }
  return m;
}

void save_onnx_manifest(const OnnxManifest& m, const fs::path& path) {
  nlohmann::ordered_json j;
  j["input_name"] = m.input_name;
  j["output_name"] = m.output_name;
  j["input_size"] = m.input_size;
  j["channel_order"] = m.channel_order == ChannelOrder::bgr ? "bgr" : "rgb";
  j["scale"] = m.scale;
  j["mean"] = m.mean;
  j["std"] = m.std;
  j["output_dim"] = m.output_dim;
  j["layout"] = m.layout;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

struct OnnxTrunk::Runner {
  cv::dnn::Net net;
  std::mutex mutex;
};

namespace {

cv::Mat to_blob(const std::vector<FeatureMap>& inputs, const OnnxManifest& m) {
  const int n = static_cast<int>(inputs.size()), h = m.input_size[0], w = m.input_size[1];
  if (m.layout == "nhwc") {
    const int dims[4] = {n, h, w, 3};
    cv::Mat blob(4, dims, CV_32F);
    auto* dst = blob.ptr<float>();
    for (const auto& f : inputs) dst = std::copy(f.data.begin(), f.data.end(), dst);
    return blob;
  }
  const int dims[4] = {n, 3, h, w};
  cv::Mat blob(4, dims, CV_32F);
  auto* dst = blob.ptr<float>();
  for (const auto& f : inputs)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) *dst++ = f.at(y, x, c);
  return blob;
}

}  // namespace

OnnxTrunk::OnnxTrunk(std::string id, const fs::path& model) : id_(std::move(id)), runner_(std::make_unique<Runner>()) {
  if (!fs::is_regular_file(model)) throw LoadError("model file not found: " + model.string());
  manifest_ = load_onnx_manifest(onnx_manifest_path(model));
  spec_ = manifest_.preprocess();
  checksum_ = sha256_file(model);
  try {
    runner_->net = cv::dnn::readNetFromONNX(model.string());
  } catch (const cv::Exception& e) {
    throw LoadError("cannot read ONNX graph " + model.string() + ": " + e.what());
  }
  if (runner_->net.empty()) throw LoadError("empty ONNX graph " + model.string());
  runner_->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  runner_->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
  if (runner_->net.getLayerId(manifest_.output_name) < 0)
    throw LoadError("output node '" + manifest_.output_name + "' not found in " + model.string());
  // A dry run resolves the input name and the declared output width.
  const FeatureMap probe(spec_.height, spec_.width, 3);
  try {
    const auto rows = forward({probe});
    (void)rows;
  } catch (const InferenceError& e) {
    throw LoadError(std::string("model ") + model.string() + " rejected a probe input: " + e.what());
  }
}

OnnxTrunk::~OnnxTrunk() = default;

nn::TensorF OnnxTrunk::forward(const std::vector<FeatureMap>& inputs) const {
  const std::size_t d = manifest_.output_dim;
  nn::TensorF out({inputs.size(), d});
  if (inputs.empty()) return out;
  for (const auto& f : inputs)
    if (f.height != spec_.height || f.width != spec_.width || f.channels != 3)
      throw InferenceError("trunk '" + id_ + "' expects " + std::to_string(spec_.height) + "x" +
                           std::to_string(spec_.width) + "x3 inputs");
  const cv::Mat blob = to_blob(inputs, manifest_);
  cv::Mat result;
  {
    std::lock_guard lock(runner_->mutex);
    try {
      runner_->net.setInput(blob, manifest_.input_name);
      result = runner_->net.forward(manifest_.output_name).clone();
    } catch (const cv::Exception& e) {
      throw InferenceError("trunk '" + id_ + "' failed: " + e.what());
    }
  }
  if (result.type() != CV_32F) result.convertTo(result, CV_32F);
  if (result.total() != inputs.size() * d)
    throw InferenceError("trunk '" + id_ + "' produced " + std::to_string(result.total()) + " values for " +
                         std::to_string(inputs.size()) + " inputs, expected " + std::to_string(d) + " each");
  const float* src = result.ptr<float>();
  std::copy(src, src + out.size(), out.data().begin());
  return out;
}

}  // namespace cervifuse::backbone
