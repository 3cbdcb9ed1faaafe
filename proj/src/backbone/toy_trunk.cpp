#include <algorithm>
#include <cmath>
#include <limits>

#include "cervifuse/backbone/backbone.hpp"
#include "cervifuse/common/error.hpp"
#include "cervifuse/common/hash.hpp"
#include "cervifuse/common/parallel.hpp"
#include "cervifuse/common/rng.hpp"

namespace fs = std::filesystem;

namespace cervifuse::backbone {

void PreprocessSpec::validate() const {
  if (height < 1 || width < 1) throw InvalidParameter("preprocess: input size must be positive");
  for (double s : std) {
    if (!(s > 0)) throw InvalidParameter("preprocess: std must be positive");
  }
  if (!std::isfinite(scale)) throw InvalidParameter("preprocess: scale must be finite");
}

FeatureMap resize_bilinear(const Image& img, int width, int height) {
  if (img.empty()) throw InvalidParameter("resize: empty image");
  if (width < 1 || height < 1) throw InvalidParameter("resize: target size must be positive");
  FeatureMap out(height, width, img.channels);
  const double sx = static_cast<double>(img.width) / width, sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bottom = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

FeatureMap preprocess(const Image& img, const PreprocessSpec& spec) {
  spec.validate();
  if (img.channels != 3) throw InvalidParameter("preprocess: expected a 3-channel image");
  FeatureMap m = resize_bilinear(img, spec.width, spec.height);
  const bool bgr = spec.channel_order == ChannelOrder::bgr;
  for (std::size_t p = 0; p < m.data.size(); p += 3) {
    const float r = m.data[p], g = m.data[p + 1], b = m.data[p + 2];
    const float ordered[3] = {bgr ? b : r, g, bgr ? r : b};
    for (int c = 0; c < 3; ++c)
      m.data[p + c] = static_cast<float>((ordered[c] * spec.scale - spec.mean[c]) / spec.std[c]);
  }
  return m;
}

Conv2d Conv2d::random(int in, int out, int stride, std::uint64_t seed, float weight_gain) {
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.stride = stride;
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / (9.0 * in)) * weight_gain;
  c.weights.resize(static_cast<std::size_t>(out) * 9 * in);
  for (auto& w : c.weights) w = static_cast<float>(rng.uniform(-limit, limit));
  c.bias.resize(out);
  for (auto& b : c.bias) b = static_cast<float>(rng.uniform(-0.05, 0.05));
  return c;
}

FeatureMap conv2d(const FeatureMap& x, const Conv2d& conv, bool relu) {
  if (x.channels != conv.in_channels)
    throw DimensionError("conv2d: input has " + std::to_string(x.channels) + " channels, filter expects " +
                         std::to_string(conv.in_channels));
  if (conv.stride != 1 && conv.stride != 2) throw InvalidParameter("conv2d: stride must be 1 or 2");
  const int oh = (x.height + conv.stride - 1) / conv.stride, ow = (x.width + conv.stride - 1) / conv.stride;
  const int cin = conv.in_channels, patch_len = 9 * cin;
  FeatureMap out(oh, ow, conv.out_channels);
  std::vector<float> patch(patch_len);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int cy = oy * conv.stride, cx = ox * conv.stride;
      float* dst = patch.data();
      for (int ky = -1; ky <= 1; ++ky) {
        const int yy = std::clamp(cy + ky, 0, x.height - 1);
        for (int kx = -1; kx <= 1; ++kx) {
          const int xx = std::clamp(cx + kx, 0, x.width - 1);
          const float* src = &x.data[x.index(yy, xx, 0)];
          dst = std::copy(src, src + cin, dst);
        }
      }
      float* o = &out.data[out.index(oy, ox, 0)];
      for (int k = 0; k < conv.out_channels; ++k) {
        const float* w = &conv.weights[static_cast<std::size_t>(k) * patch_len];
        float s = conv.bias[k];
        for (int i = 0; i < patch_len; ++i) s += w[i] * patch[i];
        o[k] = relu ? std::max(s, 0.0f) : s;
      }
    }
  }
  return out;
}

FeatureMap residual_block(const FeatureMap& x, const Conv2d& a, const Conv2d& b) {
  if (a.stride != 1 || b.stride != 1) throw DimensionError("residual_block: branch must keep the spatial size");
  FeatureMap h = conv2d(conv2d(x, a, true), b, false);
  if (h.height != x.height || h.width != x.width || h.channels != x.channels)
    throw DimensionError("residual_block: branch output shape differs from input");
  for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
  return h;
}

std::vector<float> global_max_pool(const FeatureMap& x) {
  if (x.height < 1 || x.width < 1) throw DimensionError("global_max_pool: empty map");
  std::vector<float> m(x.channels, -std::numeric_limits<float>::infinity());
  for (std::size_t p = 0; p < x.data.size(); p += x.channels)
    for (int c = 0; c < x.channels; ++c) m[c] = std::max(m[c], x.data[p + c]);
  return m;
}

std::vector<FeatureMap> Trunk::stage_maps(const FeatureMap&, const std::vector<std::string>& stages) const {
  if (stages.empty()) return {};
  throw InvalidParameter("trunk '" + id() + "' exposes no stages (valid stages: none)");
}

ToyTrunk::ToyTrunk(std::string id, std::uint64_t seed, PreprocessSpec spec)
    : id_(std::move(id)), seed_(seed), spec_(spec) {
  spec_.validate();
  c1_ = Conv2d::random(3, 8, 2, derive_seed(seed, 1));
  c2_ = Conv2d::random(8, 16, 2, derive_seed(seed, 2));
  c3_ = Conv2d::random(16, 32, 2, derive_seed(seed, 3));
  res_a_ = Conv2d::random(32, 32, 1, derive_seed(seed, 4), 0.5f);
  res_b_ = Conv2d::random(32, 32, 1, derive_seed(seed, 5), 0.5f);
}

std::array<FeatureMap, 3> ToyTrunk::run(const FeatureMap& input) const {
  if (input.channels != 3) throw InferenceError("toy trunk expects 3 input channels");
  FeatureMap s1 = conv2d(input, c1_, true);
  FeatureMap s2 = conv2d(s1, c2_, true);
  FeatureMap s3 = residual_block(conv2d(s2, c3_, true), res_a_, res_b_);
  return {std::move(s1), std::move(s2), std::move(s3)};
}

std::vector<float> ToyTrunk::features(const FeatureMap& input) const { return global_max_pool(run(input)[2]); }

nn::TensorF ToyTrunk::forward(const std::vector<FeatureMap>& inputs) const {
  nn::TensorF out({inputs.size(), output_dim()});
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto f = features(inputs[i]);
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

std::string ToyTrunk::checksum() const {
  std::vector<std::byte> bytes;
  auto append = [&](const std::vector<float>& v) {
    const auto* p = reinterpret_cast<const std::byte*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(float));
  };
  for (const Conv2d* c : {&c1_, &c2_, &c3_, &res_a_, &res_b_}) {
    append(c->weights);
    append(c->bias);
  }
  return sha256_hex(std::span<const std::byte>(bytes));
}

std::vector<FeatureMap> ToyTrunk::stage_maps(const FeatureMap& input, const std::vector<std::string>& stages) const {
  const auto names = stage_names();
  std::vector<std::size_t> picks;
  for (const auto& s : stages) {
    const auto it = std::find(names.begin(), names.end(), s);
    if (it == names.end()) throw InvalidParameter("unknown stage '" + s + "' (valid stages: stage1, stage2, stage3)");
    picks.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  auto maps = run(input);
  std::vector<FeatureMap> out;
  for (auto p : picks) out.push_back(maps[p]);
  return out;
}

std::unique_ptr<Trunk> load_trunk(const BackboneSpec& spec) {
  std::unique_ptr<Trunk> t;
  if (spec.kind == "toy") {
    PreprocessSpec p;
    p.height = p.width = spec.input_size;
    p.scale = 1.0 / 255.0;
    p.mean = {0.485, 0.456, 0.406};
    p.std = {0.229, 0.224, 0.225};
    t = std::make_unique<ToyTrunk>(spec.id, spec.seed, p);
  } else if (spec.kind == "onnx") {
    t = std::make_unique<OnnxTrunk>(spec.id, spec.model);
  } else {
    throw InvalidParameter("unknown backbone kind '" + spec.kind + "' (expected toy or onnx)");
  }
  if (spec.output_dim != 0 && spec.output_dim != t->output_dim())
    throw LoadError("backbone '" + spec.id + "' produces " + std::to_string(t->output_dim()) +
                    " features, configuration declares " + std::to_string(spec.output_dim));
  return t;
}

nn::TensorF trunk_forward(const Trunk& trunk, const std::vector<Image>& images, int workers) {
  const std::size_t d = trunk.output_dim();
  nn::TensorF out({images.size(), d});
  const std::size_t chunk = 16;
  const std::size_t chunks = (images.size() + chunk - 1) / chunk;
  parallel_for(
      chunks,
      [&](std::size_t k) {
        const std::size_t begin = k * chunk, end = std::min(images.size(), begin + chunk);
        std::vector<FeatureMap> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(preprocess(images[i], trunk.preprocess_spec()));
        const auto rows = trunk.forward(batch);
        if (rows.rank() != 2 || rows.rows() != batch.size() || rows.cols() != d)
          throw InferenceError("trunk '" + trunk.id() + "' returned " + nn::shape_string(rows.shape()));
        std::copy(rows.data().begin(), rows.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * d));
      },
      workers > 0 ? static_cast<std::size_t>(workers) : 0);
  return out;
}

Image render_grid(const FeatureMap& map, int min_tile) {
  const int c = map.channels;
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(c))));
  const int rows = (c + cols - 1) / cols;
  const int zoom = std::max(1, (min_tile + std::max(map.width, map.height) - 1) / std::max(map.width, map.height));
  const int tw = map.width * zoom, th = map.height * zoom, gap = 1;
  Image out(cols * tw + (cols - 1) * gap, rows * th + (rows - 1) * gap, 1);
  for (int k = 0; k < c; ++k) {
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (int y = 0; y < map.height; ++y)
      for (int x = 0; x < map.width; ++x) {
        lo = std::min(lo, map.at(y, x, k));
        hi = std::max(hi, map.at(y, x, k));
      }
    const int ox = (k % cols) * (tw + gap), oy = (k / cols) * (th + gap);
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) {
        const float v = map.at(y / zoom, x / zoom, k);
        out.at(ox + x, oy + y, 0) = hi > lo ? clamp_u8(255.0 * (v - lo) / (hi - lo)) : 128;
      }
  }
  return out;
}

std::vector<fs::path> dump_feature_maps(const Trunk& trunk, const Image& img, const std::vector<std::string>& stages,
                                        const fs::path& out_dir) {
  const auto maps = trunk.stage_maps(preprocess(img, trunk.preprocess_spec()), stages);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const fs::path p = out_dir / (stages[i] + ".png");
    write_png(p, render_grid(maps[i]));
    written.push_back(p);
  }
  return written;
}

}  // namespace cervifuse::backbone
