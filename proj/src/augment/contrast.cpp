#include <algorithm>
#include <cmath>

#include "cervifuse/augment/ops.hpp"
#include "cervifuse/common/error.hpp"

namespace cervifuse::augment {

namespace {

constexpr int kBins = 256;

using Lut = std::array<std::uint8_t, kBins>;

// Bounds of tile i out of n over a length: [start, end).
std::pair<int, int> tile_bounds(int i, int n, int length) {
  return {static_cast<int>(static_cast<long long>(i) * length / n),
          static_cast<int>(static_cast<long long>(i + 1) * length / n)};
}

Lut tile_lut(const std::vector<std::uint8_t>& plane, int width, int x0, int x1, int y0, int y1, double clip_limit) {
  std::array<int, kBins> hist{};
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) ++hist[plane[static_cast<std::size_t>(y) * width + x]];
  const int area = (x1 - x0) * (y1 - y0);

  const double raw_limit = clip_limit * area / kBins;
  const int limit = raw_limit >= area ? area : std::max(1, static_cast<int>(raw_limit));
  int excess = 0;
  for (auto& h : hist) {
    if (h > limit) {
      excess += h - limit;
      h = limit;
    }
  }
  const int batch = excess / kBins;
  const int residual = excess - batch * kBins;
  for (auto& h : hist) h += batch;
  if (residual > 0) {
    const int step = std::max(kBins / residual, 1);
    for (int i = 0, left = residual; i < kBins && left > 0; i += step, --left) ++hist[i];
  }

  Lut lut{};
  const double scale = 255.0 / area;
  int sum = 0;
  for (int v = 0; v < kBins; ++v) {
    sum += hist[v];
    lut[v] = clamp_u8(sum * scale);
  }
  return lut;
}

// For a coordinate, the two neighbouring tile indices and the weight of the second.
struct Interp {
  int lo, hi;
  double w;
};

std::vector<Interp> interp_table(int length, int tiles) {
  std::vector<double> centre(tiles);
  for (int i = 0; i < tiles; ++i) {
    const auto [s, e] = tile_bounds(i, tiles, length);
    centre[i] = (s + e - 1) / 2.0;
  }
  std::vector<Interp> table(length);
  for (int p = 0; p < length; ++p) {
    if (p <= centre.front()) {
      table[p] = {0, 0, 0.0};
    } else if (p >= centre.back()) {
      table[p] = {tiles - 1, tiles - 1, 0.0};
    } else {
      int j = 0;
      while (centre[j + 1] < p) ++j;
      table[p] = {j, j + 1, (p - centre[j]) / (centre[j + 1] - centre[j])};
    }
  }
  return table;
}

}  // namespace

std::vector<std::uint8_t> luma(const Image& img) {
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (img.channels == 1) return img.pixels;
  std::vector<std::uint8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = &img.pixels[i * img.channels];
    y[i] = static_cast<std::uint8_t>((299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000);
  }
  return y;
}

std::vector<std::uint8_t> clahe_plane(const std::vector<std::uint8_t>& plane, int width, int height,
                                      std::array<int, 2> tiles, double clip_limit) {
  const int tx = tiles[0], ty = tiles[1];
  if (tx < 1 || ty < 1) throw InvalidParameter("clahe: tile grid must be at least 1x1");
  if (!(clip_limit > 0)) throw InvalidParameter("clahe: clip limit must be positive");
  if (width < tx || height < ty) throw InvalidParameter("clahe: image smaller than tile grid");

  std::vector<Lut> luts(static_cast<std::size_t>(tx) * ty);
  for (int j = 0; j < ty; ++j) {
    const auto [y0, y1] = tile_bounds(j, ty, height);
    for (int i = 0; i < tx; ++i) {
      const auto [x0, x1] = tile_bounds(i, tx, width);
      luts[static_cast<std::size_t>(j) * tx + i] = tile_lut(plane, width, x0, x1, y0, y1, clip_limit);
    }
  }
  const auto ix = interp_table(width, tx);
  const auto iy = interp_table(height, ty);
  std::vector<std::uint8_t> out(plane.size());
  for (int y = 0; y < height; ++y) {
    const auto& ry = iy[y];
    const Lut* upper = &luts[static_cast<std::size_t>(ry.lo) * tx];
    const Lut* lower = &luts[static_cast<std::size_t>(ry.hi) * tx];
    for (int x = 0; x < width; ++x) {
      const auto& rx = ix[x];
      const auto v = plane[static_cast<std::size_t>(y) * width + x];
      const double top = upper[rx.lo][v] * (1 - rx.w) + upper[rx.hi][v] * rx.w;
      const double bottom = lower[rx.lo][v] * (1 - rx.w) + lower[rx.hi][v] * rx.w;
      out[static_cast<std::size_t>(y) * width + x] = clamp_u8(top * (1 - ry.w) + bottom * ry.w);
    }
  }
  return out;
}

Image clahe(const Image& img, std::array<int, 2> tiles, double clip_limit) {
  if (img.empty()) throw InvalidParameter("clahe: empty image");
  const auto y = luma(img);
  const auto eq = clahe_plane(y, img.width, img.height, tiles, clip_limit);
  Image out = img;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int shift = static_cast<int>(eq[i]) - static_cast<int>(y[i]);
    for (int c = 0; c < img.channels; ++c) {
      auto& v = out.pixels[i * img.channels + c];
      v = static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + shift, 0, 255));
    }
  }
  return out;
}

Image all_channel_clahe(const Image& img, std::array<int, 2> tiles, double clip_limit) {
  if (img.empty()) throw InvalidParameter("clahe: empty image");
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::uint8_t> plane(n);
  for (int c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) plane[i] = img.pixels[i * img.channels + c];
    const auto eq = clahe_plane(plane, img.width, img.height, tiles, clip_limit);
    for (std::size_t i = 0; i < n; ++i) out.pixels[i * img.channels + c] = eq[i];
  }
  return out;
}

Image gamma_contrast(const Image& img, double gamma) {
  if (!(gamma > 0)) throw InvalidParameter("gamma must be positive");
  std::array<std::uint8_t, kBins> lut{};
  for (int v = 0; v < kBins; ++v) lut[v] = clamp_u8(255.0 * std::pow(v / 255.0, gamma));
  Image out = img;
  for (auto& v : out.pixels) v = lut[v];
  return out;
}

Image contrast_brightness(const Image& img, double alpha, double beta) {
  Image out = img;
  for (auto& v : out.pixels) v = clamp_u8(alpha * v + beta);
  return out;
}

}  // namespace cervifuse::augment
