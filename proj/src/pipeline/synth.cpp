#include "cervifuse/pipeline/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>

#include "cervifuse/common/error.hpp"
#include "cervifuse/common/rng.hpp"

namespace fs = std::filesystem;

namespace cervifuse::pipeline {

namespace {

constexpr std::array<const char*, 7> kShapes{"disk", "square", "triangle", "ring", "cross", "stripes", "dots"};

std::array<double, 3> hsv(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1)), m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h / 60.0)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {255 * (r + m), 255 * (g + m), 255 * (b + m)};
}

// Whether (u, v), in shape-local units where the shape spans [-1, 1], is
// inside the foreground of shape k.
bool inside(int k, double u, double v) {
  const double r = std::hypot(u, v);
  switch (k) {
    case 0: return r <= 1.0;
    case 1: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case 2: return v <= 0.8 && v >= -1.0 + 2.0 * std::abs(u) * 0.9;
    case 3: return r <= 1.0 && r >= 0.6;
    case 4: return (std::abs(u) <= 0.25 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.25 && std::abs(u) <= 1.0);
    case 5: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && static_cast<int>(std::floor((v + 1.0) * 3.0)) % 2 == 0;
    default: {
      if (std::abs(u) > 1.0 || std::abs(v) > 1.0) return false;
      const double cu = std::round(u * 1.5) / 1.5, cv = std::round(v * 1.5) / 1.5;
      return std::hypot(u - cu, v - cv) <= 0.22;
    }
  }
}

void check(const SynthSpec& spec) {
  if (spec.classes < 2 || spec.classes > 7) throw InvalidParameter("synth: classes must be in [2, 7]");
  if (spec.per_class < 1) throw InvalidParameter("synth: per_class must be >= 1");
  if (spec.size < 16) throw InvalidParameter("synth: size must be >= 16");
}

}  // namespace

std::vector<std::string> synth_class_names(int classes) {
  if (classes < 2 || classes > 7) throw InvalidParameter("synth: classes must be in [2, 7]");
  return {kShapes.begin(), kShapes.begin() + classes};
}

Image synth_image(const SynthSpec& spec, int c, int i) {
  check(spec);
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
  const int n = spec.size;
  const double hue = 360.0 * c / spec.classes + rng.uniform(-8, 8);
  const auto bg = hsv(hue, 0.35 + rng.uniform(-0.05, 0.05), 0.85);
  const auto fg = hsv(hue + 180.0, 0.7, 0.6 + rng.uniform(-0.05, 0.05));
  const double cx = (n - 1) / 2.0 + rng.uniform(-0.12, 0.12) * n;
  const double cy = (n - 1) / 2.0 + rng.uniform(-0.12, 0.12) * n;
  const double radius = n * (0.28 + rng.uniform(-0.04, 0.04));
  const double angle = rng.uniform(-0.3, 0.3);
  const double cs = std::cos(angle), sn = std::sin(angle);

  Image img(n, n, 3);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = (x - cx) / radius, dy = (y - cy) / radius;
      const bool on = inside(c, cs * dx + sn * dy, -sn * dx + cs * dy);
      const auto& col = on ? fg : bg;
      const double noise = rng.uniform(-4, 4);
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = clamp_u8(col[ch] + noise);
    }
  }
  return img;
}

std::vector<fs::path> synthesize(const fs::path& out_dir, const SynthSpec& spec) {
  check(spec);
  const auto names = synth_class_names(spec.classes);
  std::vector<fs::path> written;
  for (int c = 0; c < spec.classes; ++c) {
    const fs::path dir = out_dir / names[c];
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (int i = 0; i < spec.per_class; ++i) {
      char file[64];
      std::snprintf(file, sizeof file, "%s_%03d.png", names[c].c_str(), i);
      write_png(dir / file, synth_image(spec, c, i));
      written.push_back(dir / file);
    }
  }
  return written;
}

}  // namespace cervifuse::pipeline
