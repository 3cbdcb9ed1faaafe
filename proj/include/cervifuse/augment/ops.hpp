#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cervifuse/image/image.hpp"

namespace cervifuse::augment {

/// Integer luma (299 R + 587 G + 114 B + 500) / 1000. Gray input is returned as is.
std::vector<std::uint8_t> luma(const Image& img);

/// Contrast limited adaptive histogram equalization of the luma channel.
/// Chroma is kept by shifting all channels by the luma change. tiles is
/// {columns, rows}. Throws InvalidParameter if the image is smaller than
/// the grid or clip_limit <= 0.
Image clahe(const Image& img, std::array<int, 2> tiles = {8, 8}, double clip_limit = 2.0);

/// CLAHE applied to every channel independently.
Image all_channel_clahe(const Image& img, std::array<int, 2> tiles = {8, 8}, double clip_limit = 2.0);

/// CLAHE on a single plane.
std::vector<std::uint8_t> clahe_plane(const std::vector<std::uint8_t>& plane, int width, int height,
                                      std::array<int, 2> tiles, double clip_limit);

/// 255 * (v / 255)^gamma per channel.
Image gamma_contrast(const Image& img, double gamma);

/// alpha * v + beta per channel, clamped.
Image contrast_brightness(const Image& img, double alpha, double beta);

/// Sobel gradients of the luma with replicated borders (unnormalized, +-1020 range).
struct Gradients {
  int width = 0, height = 0;
  std::vector<int> gx, gy;
};
Gradients sobel(const Image& img);

/// Gradient magnitude / 4 blended over the image: (1 - alpha) * img + alpha * edges.
Image edge_detect(const Image& img, double alpha);

/// Directional response max(0, gx cos t + gy sin t) / 4 blended by alpha.
Image directed_edge_detect(const Image& img, double alpha, double direction_deg);

/// Binary edge map (0 or 255, same channel count as the input) from Sobel
/// magnitude / 4, non-maximum suppression and 8-connected hysteresis.
/// Requires 0 <= low < high.
Image canny(const Image& img, double low = 50.0, double high = 150.0);

/// (1 - alpha) * a + alpha * b, element-wise.
Image blend(const Image& a, const Image& b, double alpha);

/// Reorders RGB channels: out channel c takes input channel perm[c].
/// Single-channel input is returned unchanged with a warning.
Image channel_shuffle(const Image& img, std::array<int, 3> perm);

/// Replaces every channel by the integer luma.
Image grayscale(const Image& img);

/// Rotates hue by hue_shift_deg and scales saturation.
Image hue_saturation(const Image& img, double hue_shift_deg, double saturation_scale);

/// Median-cut palette reduction to at most max_colors colors.
Image quantize(const Image& img, int max_colors = 16);

std::size_t distinct_colors(const Image& img);

}  // namespace cervifuse::augment
