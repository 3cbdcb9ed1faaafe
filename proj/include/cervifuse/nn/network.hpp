#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cervifuse/nn/layers.hpp"

namespace cervifuse::nn {

/// A trainable tensor and its gradient buffer, owned by a layer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
class DenseLayer {
 public:
  explicit DenseLayer(DenseParams<T> params)
      : params_(std::move(params)), grad_w_(params_.weights.shape()), grad_b_(params_.bias.shape()) {}

  Tensor<T> forward(const Tensor<T>& x, Mode /*mode*/) {
    input_ = x;
    output_ = dense_forward(x, params_);
    cached_ = true;
    return output_;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (!cached_) throw StateError("dense backward called without a cached forward pass");
    if (grad_out.shape() != output_.shape()) throw DimensionError("dense backward: gradient shape mismatch");
    Tensor<T> g = grad_out;
    if (params_.activation == Activation::relu) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(output_[i] > T(0))) g[i] = T(0);
    }
    grad_w_ = matmul_tn(input_, g);
    grad_b_ = Tensor<T>(params_.bias.shape());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) grad_b_[j] += g.at(i, j);
    return matmul_nt(g, params_.weights);
  }

  void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
    out.push_back({prefix + ".weights", &params_.weights, &grad_w_});
    out.push_back({prefix + ".bias", &params_.bias, &grad_b_});
  }

  void state(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    out.emplace_back(prefix + ".weights", &params_.weights);
    out.emplace_back(prefix + ".bias", &params_.bias);
  }

  void clear_cache() { cached_ = false; }

  DenseParams<T>& params() { return params_; }
  const DenseParams<T>& params() const { return params_; }

  /// Post-activation output of the last forward pass.
  const Tensor<T>& last_output() const { return output_; }

 private:
  DenseParams<T> params_;
  Tensor<T> grad_w_, grad_b_;
  Tensor<T> input_, output_;
  bool cached_ = false;
};

template <typename T>
class BatchNormLayer {
 public:
  explicit BatchNormLayer(BatchNormParams<T> params)
      : params_(std::move(params)), grad_gamma_(params_.gamma.shape()), grad_beta_(params_.beta.shape()) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    params_.mode = mode;
    input_ = x;
    BatchStats<T> stats;
    Tensor<T> y = batchnorm_forward(x, params_, mode == Mode::train ? &stats : nullptr);
    if (mode == Mode::train) {
      stats_ = std::move(stats);
    } else {
      stats_.mean.assign(params_.dim(), 0.0);
      stats_.inv_std.assign(params_.dim(), 0.0);
      for (std::size_t j = 0; j < params_.dim(); ++j) {
        stats_.mean[j] = params_.running_mean[j];
        stats_.inv_std[j] = 1.0 / std::sqrt(static_cast<double>(params_.running_var[j]) + params_.epsilon);
      }
    }
    cached_mode_ = mode;
    cached_ = true;
    return y;
  }

  /// Train mode differentiates through the batch mean and variance; infer
  /// mode treats the running statistics as constants.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (!cached_) throw StateError("batchnorm backward called without a cached forward pass");
    if (grad_out.shape() != input_.shape()) throw DimensionError("batchnorm backward: gradient shape mismatch");
    const std::size_t b = input_.rows(), d = input_.cols();
    Tensor<T> dx({b, d});
    grad_gamma_ = Tensor<T>({d});
    grad_beta_ = Tensor<T>({d});
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = stats_.mean[j], inv = stats_.inv_std[j], gamma = params_.gamma[j];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const double dy = grad_out.at(i, j);
        sum_dy += dy;
        sum_dy_xhat += dy * (input_.at(i, j) - mu) * inv;
      }
      grad_gamma_[j] = static_cast<T>(sum_dy_xhat);
      grad_beta_[j] = static_cast<T>(sum_dy);
      if (cached_mode_ == Mode::train) {
        const double k = gamma * inv / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          const double xhat = (input_.at(i, j) - mu) * inv;
          dx.at(i, j) = static_cast<T>(k * (static_cast<double>(b) * grad_out.at(i, j) - sum_dy - xhat * sum_dy_xhat));
        }
      } else {
        for (std::size_t i = 0; i < b; ++i) dx.at(i, j) = static_cast<T>(gamma * inv * grad_out.at(i, j));
      }
    }
    return dx;
  }

  void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
    out.push_back({prefix + ".gamma", &params_.gamma, &grad_gamma_});
    out.push_back({prefix + ".beta", &params_.beta, &grad_beta_});
  }

  void state(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    out.emplace_back(prefix + ".gamma", &params_.gamma);
    out.emplace_back(prefix + ".beta", &params_.beta);
    out.emplace_back(prefix + ".running_mean", &params_.running_mean);
    out.emplace_back(prefix + ".running_var", &params_.running_var);
  }

  void clear_cache() { cached_ = false; }

  BatchNormParams<T>& params() { return params_; }
  const BatchNormParams<T>& params() const { return params_; }

 private:
  BatchNormParams<T> params_;
  Tensor<T> grad_gamma_, grad_beta_;
  Tensor<T> input_;
  BatchStats<T> stats_;
  Mode cached_mode_ = Mode::train;
  bool cached_ = false;
};

/// Draws a fresh mask on every train-mode forward; the mask seed is derived
/// from the layer seed and a call counter so replays are bit-identical.
template <typename T>
class DropoutLayer {
 public:
  DropoutLayer(double rate, std::uint64_t seed) : rate_(rate), seed_(seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw InvalidParameter("dropout rate must be in [0, 1)");
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    const std::uint64_t call_seed = derive_seed(seed_, calls_);
    if (mode == Mode::train) ++calls_;
    auto r = dropout_forward(x, rate_, call_seed, mode);
    mask_ = std::move(r.mask);
    cached_ = true;
    return std::move(r.output);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (!cached_) throw StateError("dropout backward called without a cached forward pass");
    if (grad_out.shape() != mask_.shape()) throw DimensionError("dropout backward: gradient shape mismatch");
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask_[i];
    return g;
  }

  void collect(const std::string&, std::vector<Parameter<T>>&) {}
  void state(const std::string&, std::vector<std::pair<std::string, Tensor<T>*>>&) {}
  void clear_cache() { cached_ = false; }

  double rate() const { return rate_; }
  void set_rate(double rate) { rate_ = rate; }
  std::uint64_t seed() const { return seed_; }

 private:
  double rate_;
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
  Tensor<T> mask_;
  bool cached_ = false;
};

/// Fixed-topology feed-forward stack ending in logits. Softmax and the loss
/// are applied by the caller (see softmax_cross_entropy).
template <typename T>
class Network {
 public:
  using Layer = std::variant<DenseLayer<T>, BatchNormLayer<T>, DropoutLayer<T>>;

  void add(std::string name, Layer layer) {
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
  }

  std::size_t layer_count() const { return layers_.size(); }
  const std::string& layer_name(std::size_t i) const { return names_.at(i); }
  const Layer& layer_at(std::size_t i) const { return layers_.at(i); }

  template <typename L>
  L& layer(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return std::get<L>(layers_[i]);
    throw InvalidParameter("no layer named " + name);
  }
  template <typename L>
  const L& layer(const std::string& name) const {
    return const_cast<Network*>(this)->template layer<L>(name);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return forward_range(x, mode, 0, layers_.size()); }

  /// Runs layers [first, last).
  Tensor<T> forward_range(const Tensor<T>& x, Mode mode, std::size_t first, std::size_t last) {
    Tensor<T> h = x;
    for (std::size_t i = first; i < last; ++i) {
      h = std::visit([&](auto& l) { return l.forward(h, mode); }, layers_[i]);
    }
    return h;
  }

  /// Backpropagates dL/dlogits through every layer, filling parameter
  /// gradients. Returns dL/dinput.
  Tensor<T> backward(const Tensor<T>& grad_logits) {
    Tensor<T> g = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = std::visit([&](auto& l) { return l.backward(g); }, layers_[i]);
    }
    return g;
  }

  /// Forward in train mode, fused softmax-CE, backward. Returns the loss.
  double train_step_gradients(const Tensor<T>& x, std::span<const int> labels) {
    const Tensor<T> logits = forward(x, Mode::train);
    auto sce = softmax_cross_entropy(logits, labels);
    backward(sce.grad_logits);
    return sce.loss;
  }

  Tensor<T> predict_proba(const Tensor<T>& x) { return softmax(forward(x, Mode::infer)); }

  std::vector<Parameter<T>> parameters() {
    std::vector<Parameter<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) std::visit([&](auto& l) { l.collect(names_[i], out); }, layers_[i]);
    return out;
  }

  /// Every persistent tensor (trainable and running statistics).
  std::vector<std::pair<std::string, Tensor<T>*>> state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) std::visit([&](auto& l) { l.state(names_[i], out); }, layers_[i]);
    return out;
  }

  void clear_caches() {
    for (auto& l : layers_) std::visit([](auto& layer) { layer.clear_cache(); }, l);
  }

 private:
  std::vector<std::string> names_;
  std::vector<Layer> layers_;
};

}  // namespace cervifuse::nn
