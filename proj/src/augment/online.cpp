#include "cervifuse/augment/online.hpp"

#include <cmath>

#include "cervifuse/augment/geometric.hpp"
#include "cervifuse/common/error.hpp"
#include "cervifuse/common/rng.hpp"

namespace cervifuse::augment {

void OnlineAugConfig::validate() const {
  if (!(rotation_deg >= 0)) throw InvalidParameter("online augmentation: rotation must be >= 0");
  if (!(brightness_lo > 0 && brightness_lo <= brightness_hi))
    throw InvalidParameter("online augmentation: brightness range must satisfy 0 < low <= high");
  if (!(channel_shift_intensity >= 0)) throw InvalidParameter("online augmentation: channel shift must be >= 0");
}

OnlineAugConfig OnlineAugConfig::identity() {
  OnlineAugConfig c;
  c.rotation_deg = 0;
  c.horizontal_flip = false;
  c.vertical_flip = false;
  c.brightness_lo = c.brightness_hi = 1.0;
  c.channel_shift = false;
  return c;
}

Image online_augment(const Image& img, const OnlineAugConfig& cfg, std::uint64_t epoch_seed,
                     std::uint64_t sample_index) {
  cfg.validate();
  if (!cfg.enabled) return img;
  Rng rng(derive_seed(epoch_seed, sample_index));
  // Every draw happens regardless of the flags so streams stay aligned.
  const double rot = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  const bool fh = rng.bernoulli(0.5) && cfg.horizontal_flip;
  const bool fv = rng.bernoulli(0.5) && cfg.vertical_flip;
  const double bright = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
  const double shift = rng.uniform(-cfg.channel_shift_intensity, cfg.channel_shift_intensity);

  Image out = img;
  if (rot != 0.0 || fh || fv) {
    AffineParams p;
    p.rotation_deg = rot;
    p.flip_h = fh;
    p.flip_v = fv;
    out = affine(out, p);
  }
  out = scale_brightness(out, bright);
  if (cfg.channel_shift && shift != 0.0)
    for (auto& v : out.pixels) v = clamp_u8(v + shift);
  return out;
}

std::vector<Image> online_augment(const std::vector<Image>& batch, const OnlineAugConfig& cfg,
                                  std::uint64_t epoch_seed, std::uint64_t first_index) {
  std::vector<Image> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(online_augment(batch[i], cfg, epoch_seed, first_index + i));
  return out;
}

}  // namespace cervifuse::augment
