#include <cmath>
#include <numbers>

#include "cervifuse/augment/ops.hpp"
#include "cervifuse/common/error.hpp"

namespace cervifuse::augment {

namespace {

Image broadcast(const std::vector<std::uint8_t>& plane, int width, int height, int channels) {
  Image out(width, height, channels);
  for (std::size_t i = 0; i < plane.size(); ++i)
    for (int c = 0; c < channels; ++c) out.pixels[i * channels + c] = plane[i];
  return out;
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidParameter("edge blend alpha must be in [0, 1]");
}

}  // namespace

Gradients sobel(const Image& img) {
  const auto y = luma(img);
  const int w = img.width, h = img.height;
  Gradients g{w, h, std::vector<int>(y.size()), std::vector<int>(y.size())};
  auto px = [&](int xx, int yy) {
    xx = std::clamp(xx, 0, w - 1);
    yy = std::clamp(yy, 0, h - 1);
    return static_cast<int>(y[static_cast<std::size_t>(yy) * w + xx]);
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int a = px(c - 1, r - 1), b = px(c, r - 1), d = px(c + 1, r - 1);
      const int e = px(c - 1, r), f = px(c + 1, r);
      const int k = px(c - 1, r + 1), l = px(c, r + 1), m = px(c + 1, r + 1);
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      g.gx[i] = (d + 2 * f + m) - (a + 2 * e + k);
      g.gy[i] = (k + 2 * l + m) - (a + 2 * b + d);
    }
  }
  return g;
}

Image blend(const Image& a, const Image& b, double alpha) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw DimensionError("blend: image shapes differ");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  Image out = a;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = clamp_u8((1 - alpha) * a.pixels[i] + alpha * b.pixels[i]);
  return out;
}

Image edge_detect(const Image& img, double alpha) {
  check_alpha(alpha);
  if (alpha == 0.0) return img;
  const auto g = sobel(img);
  std::vector<std::uint8_t> mag(g.gx.size());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = clamp_u8(std::hypot(g.gx[i], g.gy[i]) / 4.0);
  return blend(img, broadcast(mag, img.width, img.height, img.channels), alpha);
}

Image directed_edge_detect(const Image& img, double alpha, double direction_deg) {
  check_alpha(alpha);
  if (alpha == 0.0) return img;
  const auto g = sobel(img);
  const double t = direction_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  std::vector<std::uint8_t> resp(g.gx.size());
  for (std::size_t i = 0; i < resp.size(); ++i) resp[i] = clamp_u8((g.gx[i] * c + g.gy[i] * s) / 4.0);
  return blend(img, broadcast(resp, img.width, img.height, img.channels), alpha);
}

Image canny(const Image& img, double low, double high) {
  if (!(low >= 0.0 && low < high)) throw InvalidParameter("canny: need 0 <= low < high");
  const auto g = sobel(img);
  const int w = img.width, h = img.height;
  const std::size_t n = g.gx.size();
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::hypot(g.gx[i], g.gy[i]) / 4.0;
  auto m_at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return mag[static_cast<std::size_t>(y) * w + x];
  };

  // 0 none, 1 weak, 2 strong
  std::vector<std::uint8_t> cls(n, 0);
  const double tan22 = std::tan(std::numbers::pi / 8), tan67 = std::tan(3 * std::numbers::pi / 8);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = mag[i];
      if (m <= low) continue;
      const double ax = std::abs(g.gx[i]), ay = std::abs(g.gy[i]);
      // neighbours along the gradient direction
      int dx, dy;
      if (ay <= ax * tan22) {
        dx = 1;
        dy = 0;
      } else if (ay >= ax * tan67) {
        dx = 0;
        dy = 1;
      } else {
        dx = 1;
        dy = ((g.gx[i] > 0) == (g.gy[i] > 0)) ? 1 : -1;
      }
      if (m > m_at(x - dx, y - dy) && m >= m_at(x + dx, y + dy)) cls[i] = m > high ? 2 : 1;
    }
  }

  std::vector<std::uint8_t> edges(n, 0);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < n; ++i) {
    if (cls[i] != 2 || edges[i]) continue;
    edges[i] = 255;
    stack.push_back(i);
    while (!stack.empty()) {
      const std::size_t j = stack.back();
      stack.pop_back();
      const int x = static_cast<int>(j % w), y = static_cast<int>(j / w);
      for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          const int nx = x + ox, ny = y + oy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t k = static_cast<std::size_t>(ny) * w + nx;
          if (cls[k] != 0 && !edges[k]) {
            edges[k] = 255;
            stack.push_back(k);
          }
        }
      }
    }
  }
  return broadcast(edges, w, h, img.channels);
}

}  // namespace cervifuse::augment
