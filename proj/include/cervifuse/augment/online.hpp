#pragma once

#include <cstdint>
#include <vector>

#include "cervifuse/image/image.hpp"

namespace cervifuse::augment {

/// Random transforms applied to each training image every epoch.
struct OnlineAugConfig {
  bool enabled = true;
  double rotation_deg = 5.0;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  double brightness_lo = 0.5;
  double brightness_hi = 1.3;
  bool channel_shift = true;
  double channel_shift_intensity = 1.0;

  /// Throws InvalidParameter for negative rotation or a bad brightness range.
  void validate() const;
  /// A config whose every draw is the identity.
  static OnlineAugConfig identity();
};

/// Transforms one image with a stream derived from (epoch_seed, sample_index).
/// Rotation uses bilinear sampling with nearest-edge fill.
Image online_augment(const Image& img, const OnlineAugConfig& cfg, std::uint64_t epoch_seed,
                     std::uint64_t sample_index);

/// Batch form; element i uses sample index first_index + i.
std::vector<Image> online_augment(const std::vector<Image>& batch, const OnlineAugConfig& cfg,
                                  std::uint64_t epoch_seed, std::uint64_t first_index = 0);

}  // namespace cervifuse::augment
