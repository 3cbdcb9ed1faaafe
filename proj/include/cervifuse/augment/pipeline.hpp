#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cervifuse/common/rng.hpp"
#include "cervifuse/dataset/manifest.hpp"
#include "cervifuse/image/image.hpp"

namespace cervifuse::augment {

enum class OpKind {
  affine,
  clahe,
  all_channel_clahe,
  gamma_contrast,
  edge_detect,
  directed_edge_detect,
  canny,
  channel_shuffle,
  grayscale,
  hue_saturation,
  color_quantize,
  contrast_brightness,
};

const char* to_string(OpKind k);
OpKind parse_op_kind(const std::string& s);

struct Range {
  double lo = 0.0, hi = 0.0;
  double sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

/// One randomized transform. Only the ranges relevant to `kind` are read.
struct AugOp {
  OpKind kind = OpKind::affine;
  // affine: one of these sub-transforms is drawn per application
  Range rotation{-25, 25};
  Range scale{0.8, 1.2};
  Range translate{-0.1, 0.1};  // fraction of width / height
  Range shear{-16, 16};
  bool allow_flips = true;
  // clahe family
  int tiles = 8;
  Range clip{2.0, 2.0};
  Range gamma{0.5, 2.0};
  // edges
  Range alpha{0.0, 0.75};
  Range direction{0.0, 360.0};
  double canny_low = 50.0, canny_high = 150.0;
  // photometric
  Range hue{-20, 20};
  Range saturation{0.5, 1.5};
  int colors = 16;
  Range contrast{0.75, 1.25};
  Range brightness{-30, 30};

  /// Throws InvalidParameter on inverted ranges or out-of-domain values.
  void validate() const;
  Image apply(const Image& img, Rng& rng) const;
};

/// Applies one op chosen by weight with the given probability.
struct AugGroup {
  std::string name;
  std::vector<AugOp> ops;
  std::vector<double> weights;  // empty means uniform
  double probability = 1.0;

  void validate() const;
  Image apply(const Image& img, Rng& rng) const;
};

struct AugPipeline {
  std::vector<AugGroup> groups;
  int copies_per_image = 6;
  std::uint64_t master_seed = 0;

  /// affine and CLAHE-family groups always, then edges, canny, photometric
  /// and contrast/brightness groups each with probability 0.3.
  static AugPipeline standard(int copies, std::uint64_t seed);

  void validate() const;
  /// Copy k (1-based) of the image with manifest row index source_index.
  Image augment_copy(const Image& img, std::int64_t source_index, int k) const;
};

/// Writes copies_per_image augmented PNGs for every original training row to
/// `<out_dir>/<raw_label>/<stem>__aug<k>.png` and appends their rows after
/// the existing ones. Validation and test rows are untouched. Throws
/// IoError when the output cannot be written.
dataset::Manifest generate_offline(const dataset::Manifest& manifest, const AugPipeline& pipeline,
                                   const std::filesystem::path& out_dir, int workers = 0);

}  // namespace cervifuse::augment
