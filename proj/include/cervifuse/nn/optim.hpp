#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cervifuse/nn/network.hpp"

namespace cervifuse::nn {

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

/// One Adam update over `params` (in order). Uses the folded bias
/// correction lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t) with eps_hat
/// added to sqrt(v).
template <typename T>
void adam_step(std::span<const Parameter<T>> params, AdamState<T>& state) {
  if (!(state.lr > 0)) throw InvalidParameter("adam learning rate must be positive");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.value->shape() != p.grad->shape() || p.value->shape() != state.m[i].shape()) {
      throw DimensionError("adam: shape mismatch for parameter " + p.name);
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double lr_t = state.lr * std::sqrt(1.0 - std::pow(state.beta2, t)) / (1.0 - std::pow(state.beta1, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value->data();
    auto g = params[i].grad->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(w[k] - lr_t * mk / (std::sqrt(vk) + state.eps_hat));
    }
  }
}

template <typename T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& state) {
  adam_step(std::span<const Parameter<T>>(params), state);
}

}  // namespace cervifuse::nn
