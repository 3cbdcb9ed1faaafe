#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cervifuse/augment/ops.hpp"
#include "cervifuse/common/error.hpp"
#include "cervifuse/common/log.hpp"

namespace cervifuse::augment {

namespace {

void require_rgb(const Image& img, const char* op) {
  if (img.channels != 3) throw InvalidParameter(std::string(op) + " needs a 3-channel image");
}

}  // namespace

Image channel_shuffle(const Image& img, std::array<int, 3> perm) {
  if (img.channels == 1) {
    log().warn("channel_shuffle on a single-channel image is a no-op");
    return img;
  }
  require_rgb(img, "channel_shuffle");
  auto sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::array<int, 3>{0, 1, 2}) throw InvalidParameter("channel_shuffle: not a permutation");
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = img.pixels[i * 3 + perm[c]];
  return out;
}

Image grayscale(const Image& img) {
  const auto y = luma(img);
  Image out = img;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (int c = 0; c < img.channels; ++c) out.pixels[i * img.channels + c] = y[i];
  return out;
}

Image hue_saturation(const Image& img, double hue_shift_deg, double saturation_scale) {
  if (img.channels == 1) return img;
  require_rgb(img, "hue_saturation");
  if (saturation_scale < 0) throw InvalidParameter("saturation scale must be non-negative");
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pixels[i * 3] / 255.0, g = img.pixels[i * 3 + 1] / 255.0, b = img.pixels[i * 3 + 2] / 255.0;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double delta = mx - mn;
    if (delta == 0.0) continue;  // gray pixels have no hue
    double hue;
    if (mx == r) hue = 60.0 * std::fmod((g - b) / delta + 6.0, 6.0);
    else if (mx == g) hue = 60.0 * ((b - r) / delta + 2.0);
    else hue = 60.0 * ((r - g) / delta + 4.0);
    const double sat = std::min(1.0, delta / mx * saturation_scale);
    const double val = mx;
    hue = std::fmod(hue + hue_shift_deg, 360.0);
    if (hue < 0) hue += 360.0;
    const double chroma = val * sat;
    const double hp = hue / 60.0;
    const double xx = chroma * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    switch (static_cast<int>(hp) % 6) {
      case 0: r1 = chroma; g1 = xx; break;
      case 1: r1 = xx; g1 = chroma; break;
      case 2: g1 = chroma; b1 = xx; break;
      case 3: g1 = xx; b1 = chroma; break;
      case 4: r1 = xx; b1 = chroma; break;
      default: r1 = chroma; b1 = xx; break;
    }
    const double m = val - chroma;
    out.pixels[i * 3] = clamp_u8((r1 + m) * 255.0);
    out.pixels[i * 3 + 1] = clamp_u8((g1 + m) * 255.0);
    out.pixels[i * 3 + 2] = clamp_u8((b1 + m) * 255.0);
  }
  return out;
}

Image quantize(const Image& img, int max_colors) {
  if (max_colors < 1) throw InvalidParameter("quantize: max_colors must be >= 1");
  const int ch = img.channels;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (n == 0) return img;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  struct Box {
    std::size_t begin, end;
  };
  auto range_of = [&](const Box& b, int& channel) {
    int best = -1;
    for (int c = 0; c < ch; ++c) {
      int lo = 255, hi = 0;
      for (std::size_t k = b.begin; k < b.end; ++k) {
        const int v = img.pixels[order[k] * ch + c];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best) {
        best = hi - lo;
        channel = c;
      }
    }
    return best;
  };

  std::vector<Box> boxes{{0, n}};
  while (static_cast<int>(boxes.size()) < max_colors) {
    int pick = -1, pick_channel = 0, widest = 0;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      int channel = 0;
      const int r = range_of(boxes[b], channel);
      if (r > widest) {
        widest = r;
        pick = static_cast<int>(b);
        pick_channel = channel;
      }
    }
    if (pick < 0) break;  // every box is a single color
    Box box = boxes[pick];
    std::stable_sort(order.begin() + box.begin, order.begin() + box.end, [&](std::size_t a, std::size_t b) {
      return img.pixels[a * ch + pick_channel] < img.pixels[b * ch + pick_channel];
    });
    // split at the median, moved so that equal values stay together where possible
    std::size_t mid = box.begin + (box.end - box.begin) / 2;
    const auto value = [&](std::size_t k) { return img.pixels[order[k] * ch + pick_channel]; };
    std::size_t up = mid;
    while (up < box.end && value(up) == value(mid - 1)) ++up;
    std::size_t down = mid;
    while (down > box.begin && value(down - 1) == value(mid)) --down;
    if (up < box.end) mid = up;
    else if (down > box.begin) mid = down;
    boxes[pick] = {box.begin, mid};
    boxes.push_back({mid, box.end});
  }

  Image out = img;
  for (const auto& b : boxes) {
    for (int c = 0; c < ch; ++c) {
      double sum = 0;
      for (std::size_t k = b.begin; k < b.end; ++k) sum += img.pixels[order[k] * ch + c];
      const auto mean = clamp_u8(sum / static_cast<double>(b.end - b.begin));
      for (std::size_t k = b.begin; k < b.end; ++k) out.pixels[order[k] * ch + c] = mean;
    }
  }
  return out;
}

std::size_t distinct_colors(const Image& img) {
  std::set<std::uint32_t> colors;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t key = 0;
    for (int c = 0; c < img.channels; ++c) key = (key << 8) | img.pixels[i * img.channels + c];
    colors.insert(key);
  }
  return colors.size();
}

}  // namespace cervifuse::augment
