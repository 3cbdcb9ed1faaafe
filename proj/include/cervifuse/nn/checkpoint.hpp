#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "cervifuse/nn/network.hpp"

namespace cervifuse::nn {

/// Tensor container file:
///   "CFCK" | u32 version |
///   repeated until EOF: u32 name_len | name bytes | u8 dtype (0=f32, 1=f64) |
///                       u32 rank | u64 dims[rank] | little-endian payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::variant<TensorF, TensorD> tensor;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Serializes every persistent tensor of `net`.
template <typename T>
std::vector<NamedTensor> network_state(Network<T>& net) {
  std::vector<NamedTensor> out;
  for (auto& [name, t] : net.state()) out.push_back({name, *t});
  return out;
}

/// Restores tensors by name. Every network tensor must be present with the
/// same dtype and shape.
template <typename T>
void load_network_state(Network<T>& net, const std::vector<NamedTensor>& tensors) {
  for (auto& [name, t] : net.state()) {
    const NamedTensor* found = nullptr;
    for (const auto& nt : tensors)
      if (nt.name == name) found = &nt;
    if (!found) throw LoadError("checkpoint is missing tensor " + name);
    const auto* typed = std::get_if<Tensor<T>>(&found->tensor);
    if (!typed) throw LoadError("checkpoint tensor " + name + " has the wrong dtype");
    if (typed->shape() != t->shape()) {
      throw LoadError("checkpoint tensor " + name + " has shape " + shape_string(typed->shape()) + ", expected " +
                      shape_string(t->shape()));
    }
    *t = *typed;
  }
}

}  // namespace cervifuse::nn
