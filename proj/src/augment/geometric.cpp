#include "cervifuse/augment/geometric.hpp"

#include <cmath>
#include <numbers>

#include "cervifuse/common/error.hpp"

namespace cervifuse::augment {

std::array<double, 6> affine_matrix(const AffineParams& p, int width, int height) {
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double sh = std::tan(p.shear_deg * std::numbers::pi / 180.0);
  const double c = std::cos(th), s = std::sin(th);
  // linear = Flip * Rot * Shear * Scale
  double a = c * p.scale, b = (c * sh - s) * p.scale;
  double d = s * p.scale, e = (s * sh + c) * p.scale;
  if (p.flip_h) {
    a = -a;
    b = -b;
  }
  if (p.flip_v) {
    d = -d;
    e = -e;
  }
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  return {a, b, cx - a * cx - b * cy + p.tx, d, e, cy - d * cx - e * cy + p.ty};
}

double sample_bilinear(const Image& img, double x, double y, int c) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
  const double bottom = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

Image affine(const Image& img, const AffineParams& p) {
  if (img.empty()) throw InvalidParameter("affine: empty image");
  if (p.scale == 0.0 || !std::isfinite(p.scale)) throw InvalidParameter("affine: scale must be non-zero");
  const auto m = affine_matrix(p, img.width, img.height);
  const double det = m[0] * m[4] - m[1] * m[3];
  if (std::abs(det) < 1e-12) throw InvalidParameter("affine: transform is singular");
  // inverse of the linear part
  const double ia = m[4] / det, ib = -m[1] / det, id = -m[3] / det, ie = m[0] / det;
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double u = x - m[2], v = y - m[5];
      const double sx = ia * u + ib * v, sy = id * u + ie * v;
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = clamp_u8(sample_bilinear(img, sx, sy, c));
    }
  }
  return out;
}

Image scale_brightness(const Image& img, double factor) {
  Image out = img;
  if (factor == 1.0) return out;
  for (auto& v : out.pixels) v = clamp_u8(v * factor);
  return out;
}

}  // namespace cervifuse::augment
