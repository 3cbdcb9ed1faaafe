#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cervifuse {

/// 8-bit interleaved image, row-major. Three-channel images are RGB.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return pixels.empty(); }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }

  bool operator==(const Image&) const = default;
};

inline std::uint8_t clamp_u8(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

/// Decodes PNG/JPEG/BMP to 3-channel RGB. Throws IoError when the file is
/// missing and DecodeError when it cannot be decoded.
Image read_image(const std::filesystem::path& path);

/// Lossless PNG encoding (1 or 3 channels). Output is deterministic.
void write_png(const std::filesystem::path& path, const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);

}  // namespace cervifuse
