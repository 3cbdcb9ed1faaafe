#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cervifuse/common/rng.hpp"
#include "cervifuse/nn/tensor.hpp"

namespace cervifuse::nn {

enum class Activation : std::uint8_t { none, relu };
enum class Mode : std::uint8_t { train, infer };

template <typename T>
struct DenseParams {
  Tensor<T> weights;  // [in_dim x out_dim]
  Tensor<T> bias;     // [out_dim]
  Activation activation = Activation::none;

  std::size_t in_dim() const { return weights.dim(0); }
  std::size_t out_dim() const { return weights.dim(1); }

  /// Glorot-uniform weights with limit sqrt(6/(in+out)), zero bias.
  static DenseParams glorot(std::size_t in, std::size_t out, Activation act, Rng& rng) {
    if (in == 0 || out == 0) throw InvalidParameter("dense layer dimensions must be >= 1");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor<T> w({in, out});
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    return {std::move(w), Tensor<T>({out}), act};
  }
};

/// act(x·W + b).
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseParams<T>& p) {
  require_matrix(x, "dense_forward input");
  if (x.cols() != p.in_dim()) {
    throw DimensionError("dense_forward: input width " + std::to_string(x.cols()) + " != in_dim " +
                         std::to_string(p.in_dim()));
  }
  Tensor<T> out = matmul(x, p.weights);
  const std::size_t m = p.out_dim();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      T v = r[j] + p.bias[j];
      if (p.activation == Activation::relu && v < T(0)) v = T(0);
      r[j] = v;
    }
  }
  return out;
}

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double epsilon = 1e-3;
  double momentum = 0.99;
  Mode mode = Mode::train;

  std::size_t dim() const { return gamma.size(); }

  /// gamma=1, beta=0, running stats (0, 1).
  static BatchNormParams identity(std::size_t dim) {
    return {Tensor<T>({dim}, T(1)), Tensor<T>({dim}, T(0)), Tensor<T>({dim}, T(0)), Tensor<T>({dim}, T(1))};
  }
};

/// Per-batch statistics from a train-mode batchnorm pass.
template <typename T>
struct BatchStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

/// Train mode standardizes each column with the batch mean and (biased)
/// variance, then updates running stats as
/// running = momentum*running + (1-momentum)*batch. Infer mode uses the
/// running stats. `stats`, when non-null, receives the batch statistics.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T>& p, BatchStats<T>* stats = nullptr) {
  require_matrix(x, "batchnorm_forward input");
  const std::size_t b = x.rows(), d = x.cols();
  if (d != p.dim()) {
    throw DimensionError("batchnorm_forward: input width " + std::to_string(d) + " != " + std::to_string(p.dim()));
  }
  if (!(p.epsilon > 0)) throw InvalidParameter("batchnorm epsilon must be positive");
  Tensor<T> y({b, d});
  if (p.mode == Mode::infer) {
    for (std::size_t j = 0; j < d; ++j) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(p.running_var[j]) + p.epsilon);
      const double scale = static_cast<double>(p.gamma[j]) * inv;
      const double shift = static_cast<double>(p.beta[j]) - static_cast<double>(p.running_mean[j]) * scale;
      for (std::size_t i = 0; i < b; ++i) y.at(i, j) = static_cast<T>(static_cast<double>(x.at(i, j)) * scale + shift);
    }
    return y;
  }
  if (b < 2) throw BatchTooSmall("batchnorm in train mode needs at least 2 rows, got " + std::to_string(b));
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x.at(i, j) - mean[j];
      var[j] += c * c;
    }
  std::vector<double> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) {
    var[j] /= static_cast<double>(b);
    inv_std[j] = 1.0 / std::sqrt(var[j] + p.epsilon);
  }
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (x.at(i, j) - mean[j]) * inv_std[j];
      y.at(i, j) = static_cast<T>(p.gamma[j] * xhat + p.beta[j]);
    }
  for (std::size_t j = 0; j < d; ++j) {
    p.running_mean[j] = static_cast<T>(p.momentum * p.running_mean[j] + (1.0 - p.momentum) * mean[j]);
    p.running_var[j] = static_cast<T>(p.momentum * p.running_var[j] + (1.0 - p.momentum) * var[j]);
  }
  if (stats) *stats = {std::move(mean), std::move(inv_std)};
  return y;
}

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/(1-rate) per element; all ones in infer mode
};

/// Inverted dropout. Infer mode (or rate 0) returns the input unchanged.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& x, double rate, std::uint64_t seed, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidParameter("dropout rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return {x, Tensor<T>(x.shape(), T(1))};
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.bernoulli(rate) ? T(0) : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return {std::move(out), std::move(mask)};
}

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_matrix(logits, "softmax input");
  if (logits.cols() < 2) throw DimensionError("softmax needs at least 2 classes");
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const T mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      const double e = std::exp(static_cast<double>(in[j] - mx));
      o[j] = static_cast<T>(e);
      sum += e;
    }
    for (auto& v : o) v = static_cast<T>(v / sum);
  }
  return out;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor<T> out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw InvalidLabel("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    out.at(i, static_cast<std::size_t>(labels[i])) = T(1);
  }
  return out;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over the batch of -log p[true], p clipped to [1e-12, 1].
template <typename T>
double cross_entropy(const Tensor<T>& probs, const Tensor<T>& labels) {
  require_matrix(probs, "cross_entropy probs");
  if (probs.shape() != labels.shape()) {
    throw DimensionError("cross_entropy: probs " + shape_string(probs.shape()) + " vs labels " + shape_string(labels.shape()));
  }
  if (probs.rows() == 0) throw DimensionError("cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row(i);
    auto y = labels.row(i);
    double row_sum = 0.0;
    std::size_t hot = y.size();
    for (std::size_t j = 0; j < y.size(); ++j) {
      row_sum += p[j];
      if (y[j] == T(1)) {
        if (hot != y.size()) throw InvalidLabel("label row " + std::to_string(i) + " is not one-hot");
        hot = j;
      } else if (y[j] != T(0)) {
        throw InvalidLabel("label row " + std::to_string(i) + " is not one-hot");
      }
    }
    if (hot == y.size()) throw InvalidLabel("label row " + std::to_string(i) + " is not one-hot");
    if (std::abs(row_sum - 1.0) > 1e-4) {
      throw InvalidParameter("cross_entropy: probability row " + std::to_string(i) + " does not sum to 1");
    }
    total -= std::log(std::clamp(static_cast<double>(p[hot]), kProbabilityFloor, 1.0));
  }
  return total / static_cast<double>(probs.rows());
}

template <typename T>
struct SoftmaxCrossEntropy {
  double loss = 0.0;
  Tensor<T> probs;
  Tensor<T> grad_logits;  // (probs - onehot) / B
};

/// Fused softmax + cross-entropy with its analytic gradient.
template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_matrix(logits, "softmax_cross_entropy logits");
  if (labels.size() != logits.rows()) throw DimensionError("softmax_cross_entropy: label count != batch rows");
  SoftmaxCrossEntropy<T> out;
  out.probs = softmax(logits);
  const Tensor<T> target = one_hot<T>(labels, logits.cols());
  out.loss = cross_entropy(out.probs, target);
  out.grad_logits = Tensor<T>(logits.shape());
  const T inv_b = static_cast<T>(1.0 / static_cast<double>(logits.rows()));
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad_logits[i] = (out.probs[i] - target[i]) * inv_b;
  return out;
}

}  // namespace cervifuse::nn
