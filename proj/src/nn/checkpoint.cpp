#include "cervifuse/nn/checkpoint.hpp"

#include <array>
#include <fstream>

#include "cervifuse/common/binary_io.hpp"

namespace cervifuse::nn {

std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

constexpr std::array<char, 4> kMagic = {'C', 'F', 'C', 'K'};

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  binary::write<std::uint8_t>(os, static_cast<std::uint8_t>(Tensor<T>::dtype()));
  binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) binary::write<std::uint64_t>(os, d);
  binary::write_bytes(os, t.data().data(), t.size() * sizeof(T));
}

template <typename T>
Tensor<T> read_payload(std::istream& is, std::vector<std::size_t> shape) {
  Tensor<T> t(std::move(shape));
  binary::read_bytes(is, t.data().data(), t.size() * sizeof(T), "tensor payload");
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  binary::write_bytes(os, kMagic.data(), kMagic.size());
  binary::write<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& nt : tensors) {
    binary::write<std::uint32_t>(os, static_cast<std::uint32_t>(nt.name.size()));
    binary::write_bytes(os, nt.name.data(), nt.name.size());
    std::visit([&](const auto& t) { write_tensor(os, t); }, nt.tensor);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  binary::read_bytes(is, magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw ParseError(path.string() + ": not a CFCK checkpoint");
  const auto version = binary::read<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto name_len = binary::read<std::uint32_t>(is, "name length");
    if (name_len > (1u << 16)) throw ParseError(path.string() + ": implausible tensor name length");
    std::string name(name_len, '\0');
    binary::read_bytes(is, name.data(), name_len, "tensor name");
    const auto tag = binary::read<std::uint8_t>(is, "dtype");
    const auto rank = binary::read<std::uint32_t>(is, "rank");
    if (rank > 8) throw ParseError(path.string() + ": implausible rank for " + name);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(binary::read<std::uint64_t>(is, "dims"));
    switch (static_cast<DType>(tag)) {
      case DType::f32:
        out.push_back({std::move(name), read_payload<float>(is, std::move(shape))});
        break;
      case DType::f64:
        out.push_back({std::move(name), read_payload<double>(is, std::move(shape))});
        break;
      default:
        throw ParseError(path.string() + ": unknown dtype tag " + std::to_string(tag));
    }
  }
  return out;
}

}  // namespace cervifuse::nn
