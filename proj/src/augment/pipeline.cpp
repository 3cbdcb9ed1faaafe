#include "cervifuse/augment/pipeline.hpp"

#include <cmath>
#include <map>
#include <set>

#include "cervifuse/augment/geometric.hpp"
#include "cervifuse/augment/ops.hpp"
#include "cervifuse/common/error.hpp"
#include "cervifuse/common/log.hpp"
#include "cervifuse/common/parallel.hpp"

namespace fs = std::filesystem;

namespace cervifuse::augment {

namespace {

const std::map<OpKind, const char*> kNames = {
    {OpKind::affine, "affine"},
    {OpKind::clahe, "clahe"},
    {OpKind::all_channel_clahe, "all_channel_clahe"},
    {OpKind::gamma_contrast, "gamma_contrast"},
    {OpKind::edge_detect, "edge_detect"},
    {OpKind::directed_edge_detect, "directed_edge_detect"},
    {OpKind::canny, "canny"},
    {OpKind::channel_shuffle, "channel_shuffle"},
    {OpKind::grayscale, "grayscale"},
    {OpKind::hue_saturation, "hue_saturation"},
    {OpKind::color_quantize, "color_quantize"},
    {OpKind::contrast_brightness, "contrast_brightness"},
};

void check_range(const Range& r, const char* what) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi)
    throw InvalidParameter(std::string("augment: inverted or non-finite range for ") + what);
}

AugOp op(OpKind k) {
  AugOp o;
  o.kind = k;
  return o;
}

}  // namespace

const char* to_string(OpKind k) { return kNames.at(k); }

OpKind parse_op_kind(const std::string& s) {
  for (const auto& [k, name] : kNames)
    if (s == name) return k;
  throw InvalidParameter("unknown augmentation op '" + s + "'");
}

void AugOp::validate() const {
  check_range(rotation, "rotation");
  check_range(scale, "scale");
  check_range(translate, "translate");
  check_range(shear, "shear");
  check_range(clip, "clip");
  check_range(gamma, "gamma");
  check_range(alpha, "alpha");
  check_range(direction, "direction");
  check_range(hue, "hue");
  check_range(saturation, "saturation");
  check_range(contrast, "contrast");
  check_range(brightness, "brightness");
  if (scale.lo <= 0) throw InvalidParameter("augment: scale range must be positive");
  if (std::abs(shear.lo) >= 89 || std::abs(shear.hi) >= 89) throw InvalidParameter("augment: shear must stay below 89 degrees");
  if (tiles < 1) throw InvalidParameter("augment: clahe tiles must be >= 1");
  if (clip.lo <= 0) throw InvalidParameter("augment: clahe clip must be positive");
  if (gamma.lo <= 0) throw InvalidParameter("augment: gamma must be positive");
  if (alpha.lo < 0 || alpha.hi > 1) throw InvalidParameter("augment: alpha must lie in [0, 1]");
  if (!(canny_low >= 0 && canny_low < canny_high)) throw InvalidParameter("augment: need 0 <= canny low < high");
  if (saturation.lo < 0) throw InvalidParameter("augment: saturation scale must be non-negative");
  if (colors < 1) throw InvalidParameter("augment: colors must be >= 1");
}

Image AugOp::apply(const Image& img, Rng& rng) const {
  switch (kind) {
    case OpKind::affine: {
      AffineParams p;
      const std::uint64_t choices = allow_flips ? 6 : 4;
      switch (rng.uniform_index(choices)) {
        case 0: p.rotation_deg = rotation.sample(rng); break;
        case 1: p.scale = scale.sample(rng); break;
        case 2:
          p.tx = translate.sample(rng) * img.width;
          p.ty = translate.sample(rng) * img.height;
          break;
        case 3: p.shear_deg = shear.sample(rng); break;
        case 4: p.flip_h = true; break;
        default: p.flip_v = true; break;
      }
      return affine(img, p);
    }
    case OpKind::clahe: {
      const int t = std::min({tiles, img.width, img.height});
      return augment::clahe(img, {t, t}, clip.sample(rng));
    }
    case OpKind::all_channel_clahe: {
      const int t = std::min({tiles, img.width, img.height});
      return augment::all_channel_clahe(img, {t, t}, clip.sample(rng));
    }
    case OpKind::gamma_contrast: return augment::gamma_contrast(img, gamma.sample(rng));
    case OpKind::edge_detect: return augment::edge_detect(img, alpha.sample(rng));
    case OpKind::directed_edge_detect: {
      const double a = alpha.sample(rng);
      return augment::directed_edge_detect(img, a, direction.sample(rng));
    }
    case OpKind::canny: {
      const double a = alpha.sample(rng);
      return blend(img, augment::canny(img, canny_low, canny_high), a);
    }
    case OpKind::channel_shuffle: {
      std::array<int, 3> perm{0, 1, 2};
      rng.shuffle(std::span<int>(perm));
      return augment::channel_shuffle(img, perm);
    }
    case OpKind::grayscale: return augment::grayscale(img);
    case OpKind::hue_saturation: {
      const double h = hue.sample(rng);
      return augment::hue_saturation(img, h, saturation.sample(rng));
    }
    case OpKind::color_quantize: return augment::quantize(img, colors);
    case OpKind::contrast_brightness: {
      const double a = contrast.sample(rng);
      return augment::contrast_brightness(img, a, brightness.sample(rng));
    }
  }
  throw InvalidParameter("augment: unhandled op");
}

void AugGroup::validate() const {
  if (ops.empty()) throw InvalidParameter("augment group '" + name + "' has no ops");
  if (!weights.empty() && weights.size() != ops.size())
    throw InvalidParameter("augment group '" + name + "': one weight per op required");
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw InvalidParameter("augment group '" + name + "': weights must be >= 0");
    total += w;
  }
  if (!weights.empty() && total <= 0) throw InvalidParameter("augment group '" + name + "': weights sum to zero");
  if (!(probability >= 0 && probability <= 1))
    throw InvalidParameter("augment group '" + name + "': probability must lie in [0, 1]");
  for (const auto& o : ops) o.validate();
}

Image AugGroup::apply(const Image& img, Rng& rng) const {
  if (!rng.bernoulli(probability)) return img;
  std::size_t pick = 0;
  if (weights.empty()) {
    pick = rng.uniform_index(ops.size());
  } else {
    double total = 0;
    for (double w : weights) total += w;
    double u = rng.uniform() * total;
    pick = ops.size() - 1;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      if (u < weights[i]) {
        pick = i;
        break;
      }
      u -= weights[i];
    }
  }
  return ops[pick].apply(img, rng);
}

AugPipeline AugPipeline::standard(int copies, std::uint64_t seed) {
  AugPipeline p;
  p.copies_per_image = copies;
  p.master_seed = seed;
  p.groups.push_back({"affine", {op(OpKind::affine)}, {}, 1.0});
  p.groups.push_back({"clahe", {op(OpKind::clahe), op(OpKind::all_channel_clahe), op(OpKind::gamma_contrast)}, {}, 1.0});
  p.groups.push_back({"edges", {op(OpKind::edge_detect), op(OpKind::directed_edge_detect)}, {}, 0.3});
  AugOp canny_op = op(OpKind::canny);
  canny_op.alpha = {0.0, 1.0};
  p.groups.push_back({"canny", {canny_op}, {}, 0.3});
  p.groups.push_back({"photometric",
                      {op(OpKind::channel_shuffle), op(OpKind::grayscale), op(OpKind::hue_saturation),
                       op(OpKind::color_quantize)},
                      {},
                      0.3});
  p.groups.push_back({"contrast", {op(OpKind::contrast_brightness)}, {}, 0.3});
  return p;
}

void AugPipeline::validate() const {
  if (copies_per_image < 0) throw InvalidParameter("augment: copies_per_image must be >= 0");
  for (const auto& g : groups) g.validate();
}

Image AugPipeline::augment_copy(const Image& img, std::int64_t source_index, int k) const {
  Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(source_index), static_cast<std::uint64_t>(k)));
  Image out = img;
  for (const auto& g : groups) out = g.apply(out, rng);
  return out;
}

dataset::Manifest generate_offline(const dataset::Manifest& manifest, const AugPipeline& pipeline,
                                   const fs::path& out_dir, int workers) {
  pipeline.validate();
  dataset::Manifest out = manifest;
  if (pipeline.copies_per_image == 0) return out;

  std::vector<std::size_t> sources;
  std::set<std::string> existing;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const auto& r = manifest.rows[i];
    existing.insert(r.path);
    if (r.split == dataset::Split::train && r.origin == dataset::Origin::original) sources.push_back(i);
  }

  // Output names are fixed before any work so they do not depend on scheduling.
  const int n_copies = pipeline.copies_per_image;
  std::vector<std::vector<fs::path>> targets(sources.size());
  std::set<std::string> taken;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& r = manifest.rows[sources[s]];
    std::string stem = fs::path(r.path).stem().string();
    const fs::path dir = out_dir / r.raw_label;
    if (taken.count((dir / (stem + "__aug1.png")).generic_string()))
      stem += "_" + std::to_string(r.source_index);
    for (int k = 1; k <= n_copies; ++k) {
      const fs::path p = dir / (stem + "__aug" + std::to_string(k) + ".png");
      if (existing.count(p.generic_string())) throw DuplicatePath("augmented output collides with " + p.string());
      taken.insert(p.generic_string());
      targets[s].push_back(p);
    }
  }

  try {
    for (const auto& s : sources) fs::create_directories(out_dir / manifest.rows[s].raw_label);
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create augmentation output: ") + e.what());
  }

  parallel_for(
      sources.size(),
      [&](std::size_t s) {
        const auto& r = manifest.rows[sources[s]];
        const Image src = read_image(r.path);
        for (int k = 1; k <= n_copies; ++k) write_png(targets[s][k - 1], pipeline.augment_copy(src, r.source_index, k));
      },
      workers > 0 ? static_cast<std::size_t>(workers) : 0);

  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& r = manifest.rows[sources[s]];
    for (int k = 1; k <= n_copies; ++k) {
      dataset::ImageSample a = r;
      a.path = targets[s][k - 1].generic_string();
      a.origin = dataset::Origin::augmented;
      out.rows.push_back(std::move(a));
    }
  }
  log().info("augmented {} training images into {} copies", sources.size(), sources.size() * n_copies);
  return out;
}

}  // namespace cervifuse::augment
