#pragma once

#include <array>

#include "cervifuse/image/image.hpp"

namespace cervifuse::augment {

/// Affine parameters, all about the image centre. Translation is in pixels;
/// positive rotation turns +x towards +y (clockwise on screen, y down).
struct AffineParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
  double shear_deg = 0.0;
  bool flip_h = false;
  bool flip_v = false;
};

/// Forward 2x3 matrix [a b c; d e f] mapping source (x, y) to destination
/// (a*x + b*y + c, d*x + e*y + f) for an image of the given size.
std::array<double, 6> affine_matrix(const AffineParams& p, int width, int height);

/// Warps by inverse mapping with bilinear sampling; samples outside the
/// source are taken from the nearest edge pixel. Output keeps the input
/// dimensions. Throws InvalidParameter for zero scale or an empty image.
Image affine(const Image& img, const AffineParams& p);

/// Multiplies every channel value by `factor`, clamping to [0, 255].
Image scale_brightness(const Image& img, double factor);

/// Bilinear sample of channel c at a real-valued position with edge clamping.
double sample_bilinear(const Image& img, double x, double y, int c);

}  // namespace cervifuse::augment
