#include <cmath>
#include <fstream>
#include <map>

#include "cervifuse/augment/geometric.hpp"
#include "cervifuse/augment/online.hpp"
#include "cervifuse/augment/ops.hpp"
#include "cervifuse/augment/pipeline.hpp"
#include "cervifuse/common/error.hpp"
#include "cervifuse/common/rng.hpp"
#include "doctest.h"
#include "support/tempdir.hpp"

using namespace cervifuse;
using namespace cervifuse::augment;
namespace fs = std::filesystem;

namespace {

Image random_image(int w, int h, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, c);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.uniform_index(256));
  return img;
}

Image smooth_image(int w, int h) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = clamp_u8(128 + 60 * std::sin(x / 7.0) * std::cos(y / 9.0));
      img.at(x, y, 1) = clamp_u8(100 + 50 * std::cos((x + y) / 11.0));
      img.at(x, y, 2) = clamp_u8(90 + 40 * std::sin(y / 8.0));
    }
  return img;
}

// Random single-channel image with a skewed histogram.
Image skewed_gray(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 1);
  const double power = rng.uniform(0.3, 3.0);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(255.0 * std::pow(rng.uniform(), power));
  return img;
}

// Plain global histogram equalization straight from the CDF.
std::vector<std::uint8_t> global_he_oracle(const Image& img) {
  std::array<long, 256> hist{};
  for (auto v : img.pixels) ++hist[v];
  std::array<long, 256> cdf{};
  long run = 0;
  for (int v = 0; v < 256; ++v) cdf[v] = run += hist[v];
  const double n = static_cast<double>(img.pixels.size());
  std::vector<std::uint8_t> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(std::lround(255.0 * cdf[img.pixels[i]] / n));
  return out;
}

std::size_t count_nonzero(const Image& img) {
  std::size_t n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) n += img.at(x, y, 0) != 0;
  return n;
}

dataset::Manifest image_manifest(const fs::path& root, const std::vector<int>& per_class, int size) {
  dataset::Manifest m;
  m.scheme.name = "synthetic";
  std::int64_t idx = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const std::string name = "c" + std::to_string(c);
    m.scheme.classes.push_back(name);
    m.scheme.mapping[name] = static_cast<int>(c);
    fs::create_directories(root / name);
    for (int i = 0; i < per_class[c]; ++i) {
      const fs::path p = root / name / ("img" + std::to_string(i) + ".png");
      write_png(p, random_image(size, size, 3, static_cast<std::uint64_t>(idx) + 17));
      m.rows.push_back({p.generic_string(), name, static_cast<int>(c), dataset::Split::train,
                        dataset::Origin::original, idx++});
    }
  }
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_SUITE("augment geometry") {
  TEST_CASE("identity affine is bit-exact") {
    const auto img = random_image(13, 9, 3, 1);
    CHECK(affine(img, AffineParams{}) == img);
  }

  TEST_CASE("quarter turn permutes indices") {
    Image img(4, 4, 1);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) img.at(x, y, 0) = static_cast<std::uint8_t>(10 * y + x + 1);
    AffineParams p;
    p.rotation_deg = 90;
    const auto out = affine(img, p);
    // x right, y down: source (x, y) lands on (3 - y, x)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(out.at(3 - y, x, 0) == img.at(x, y, 0));
  }

  TEST_CASE("flips mirror the image") {
    const auto img = random_image(5, 4, 3, 2);
    AffineParams h;
    h.flip_h = true;
    AffineParams v;
    v.flip_v = true;
    const auto oh = affine(img, h), ov = affine(img, v);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x)
        for (int c = 0; c < 3; ++c) {
          CHECK(oh.at(4 - x, y, c) == img.at(x, y, c));
          CHECK(ov.at(x, 3 - y, c) == img.at(x, y, c));
        }
  }

  TEST_CASE("rotation round trip stays within two gray levels away from borders") {
    const auto img = smooth_image(64, 64);
    for (double theta : {3.0, 12.0, 25.0, -17.0}) {
      AffineParams fwd, back;
      fwd.rotation_deg = theta;
      back.rotation_deg = -theta;
      const auto rt = affine(affine(img, fwd), back);
      int worst = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          if (std::hypot(x - 31.5, y - 31.5) > 22) continue;
          for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(rt.at(x, y, c) - img.at(x, y, c)));
        }
      CHECK(worst <= 2);
    }
  }

  TEST_CASE("zero scale is rejected") {
    AffineParams p;
    p.scale = 0;
    CHECK_THROWS_AS(affine(random_image(4, 4, 3, 3), p), InvalidParameter);
  }
}

TEST_SUITE("augment contrast") {
  TEST_CASE("single-tile unclipped CLAHE equals global equalization") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto img = skewed_gray(37 + static_cast<int>(seed), 29, seed);
      const auto out = clahe(img, {1, 1}, 256.0);
      const auto want = global_he_oracle(img);
      int worst = 0;
      for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(out.pixels[i] - want[i]));
      CHECK(worst <= 1);
    }
  }

  TEST_CASE("constant input gives constant output") {
    Image img(40, 40, 3, 77);
    const auto out = clahe(img, {8, 8}, 2.0);
    for (auto v : out.pixels) CHECK(v == out.pixels[0]);
  }

  TEST_CASE("CLAHE keeps the value range and shape") {
    const auto img = random_image(33, 21, 3, 5);
    const auto out = clahe(img);
    CHECK(out.width == img.width);
    CHECK(out.height == img.height);
    CHECK(out.channels == 3);
    CHECK(all_channel_clahe(img).pixels.size() == img.pixels.size());
    CHECK_THROWS_AS(clahe(random_image(4, 4, 3, 1), {8, 8}, 2.0), InvalidParameter);
    CHECK_THROWS_AS(clahe(img, {2, 2}, 0.0), InvalidParameter);
  }

  TEST_CASE("gamma and contrast identities") {
    const auto img = random_image(9, 9, 3, 6);
    CHECK(gamma_contrast(img, 1.0) == img);
    CHECK(contrast_brightness(img, 1.0, 0.0) == img);
    const auto dark = contrast_brightness(img, 0.0, -5.0);
    for (auto v : dark.pixels) CHECK(v == 0);
  }
}

TEST_SUITE("augment edges") {
  TEST_CASE("black in, black out; zero alpha is identity") {
    Image black(12, 12, 3);
    CHECK(edge_detect(black, 1.0) == black);
    CHECK(directed_edge_detect(black, 1.0, 30) == black);
    const auto img = random_image(12, 12, 3, 7);
    CHECK(edge_detect(img, 0.0) == img);
  }

  TEST_CASE("vertical step responds on the two columns beside the step") {
    Image img(16, 16, 1);
    for (int y = 0; y < 16; ++y)
      for (int x = 8; x < 16; ++x) img.at(x, y, 0) = 200;
    // gx = (1 + 2 + 1) * 200 across the step, divided by 4
    const auto e = edge_detect(img, 1.0);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(e.at(x, y, 0) == ((x == 7 || x == 8) ? 200 : 0));
    const auto left = directed_edge_detect(img, 1.0, 180.0);
    CHECK(count_nonzero(left) == 0);
    const auto right = directed_edge_detect(img, 1.0, 0.0);
    CHECK(right.at(7, 5, 0) == 200);
  }

  TEST_CASE("canny on a constant image is empty") {
    CHECK(count_nonzero(canny(Image(20, 20, 3, 90))) == 0);
    CHECK_THROWS_AS(canny(Image(4, 4, 1), 100, 50), InvalidParameter);
  }

  TEST_CASE("canny traces a closed contour around a square") {
    const int size = 48, lo = 14, hi = 33;  // square covers [lo, hi]
    Image img(size, size, 1);
    for (int y = lo; y <= hi; ++y)
      for (int x = lo; x <= hi; ++x) img.at(x, y, 0) = 255;
    const auto e = canny(img);
    auto on = [&](int x, int y) { return x >= 0 && y >= 0 && x < size && y < size && e.at(x, y, 0) == 255; };
    // band of pixels within one step of the square boundary
    auto in_band = [&](int x, int y) {
      const bool outer = x >= lo - 1 && x <= hi + 1 && y >= lo - 1 && y <= hi + 1;
      const bool inner = x >= lo + 1 && x <= hi - 1 && y >= lo + 1 && y <= hi - 1;
      return outer && !inner;
    };
    std::size_t band_hits = 0, stray = 0, open_ends = 0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        if (!on(x, y)) continue;
        if (!in_band(x, y)) {
          ++stray;
          continue;
        }
        ++band_hits;
        int nb = 0;
        for (int oy = -1; oy <= 1; ++oy)
          for (int ox = -1; ox <= 1; ++ox) nb += (ox || oy) && on(x + ox, y + oy);
        open_ends += nb < 2;
      }
    const int side = hi - lo + 1;
    CHECK(stray == 0);
    CHECK(open_ends == 0);
    CHECK(band_hits >= static_cast<std::size_t>(4 * (side - 2)));
    // every side of the square is crossed by the contour
    for (int t = lo + 1; t < hi; ++t) {
      CHECK((on(lo - 1, t) || on(lo, t)));
      CHECK((on(hi, t) || on(hi + 1, t)));
      CHECK((on(t, lo - 1) || on(t, lo)));
      CHECK((on(t, hi) || on(t, hi + 1)));
    }
  }

  TEST_CASE("raising the low threshold never adds edge pixels") {
    const auto img = smooth_image(48, 48);
    auto noisy = img;
    Rng rng(9);
    for (auto& v : noisy.pixels) v = clamp_u8(v + 40 * rng.normal());
    std::size_t previous = SIZE_MAX;
    Image prev_map;
    for (double low : {0.0, 10.0, 30.0, 60.0, 100.0, 149.0}) {
      const auto e = canny(noisy, low, 150.0);
      const auto n = count_nonzero(e);
      CHECK(n <= previous);
      if (!prev_map.empty())
        for (std::size_t i = 0; i < e.pixels.size(); ++i) CHECK((e.pixels[i] == 0 || prev_map.pixels[i] != 0));
      previous = n;
      prev_map = e;
    }
  }
}

TEST_SUITE("augment photometric") {
  TEST_CASE("identity permutation and gray input") {
    const auto img = random_image(7, 5, 3, 10);
    CHECK(channel_shuffle(img, {0, 1, 2}) == img);
    const auto swapped = channel_shuffle(img, {2, 1, 0});
    CHECK(swapped.at(3, 2, 0) == img.at(3, 2, 2));
    const auto gray1 = random_image(7, 5, 1, 11);
    CHECK(channel_shuffle(gray1, {2, 1, 0}) == gray1);
    CHECK_THROWS_AS(channel_shuffle(img, {0, 0, 1}), InvalidParameter);
  }

  TEST_CASE("grayscale of a gray image is unchanged") {
    auto img = random_image(9, 9, 3, 12);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) img.pixels[i + 1] = img.pixels[i + 2] = img.pixels[i];
    CHECK(grayscale(img) == img);
    CHECK(hue_saturation(img, 40, 1.0) == img);
  }

  TEST_CASE("quantization leaves at most sixteen colors") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto img = random_image(40, 30, 3, seed + 100);
      CHECK(distinct_colors(img) > 16);
      const auto q = quantize(img, 16);
      CHECK(distinct_colors(q) <= 16);
      CHECK(q.width == img.width);
    }
    Image two(8, 8, 3, 10);
    two.at(1, 1, 0) = 200;
    CHECK(quantize(two, 16) == two);
  }

  TEST_CASE("hue rotation by a full turn is identity within rounding") {
    const auto img = random_image(10, 10, 3, 13);
    const auto out = hue_saturation(img, 360.0, 1.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(out.pixels[i] - img.pixels[i]) <= 1);
  }
}

TEST_SUITE("augment pipeline") {
  TEST_CASE("every op keeps the shape and range") {
    const auto img = random_image(24, 20, 3, 14);
    for (const auto& g : AugPipeline::standard(6, 1).groups)
      for (const auto& op : g.ops) {
        Rng rng(5);
        const auto out = op.apply(img, rng);
        CHECK(out.width == 24);
        CHECK(out.height == 20);
        CHECK(out.channels == 3);
      }
  }

  TEST_CASE("invalid ranges are rejected") {
    auto p = AugPipeline::standard(6, 1);
    p.groups[0].ops[0].rotation = {10, -10};
    CHECK_THROWS_AS(p.validate(), InvalidParameter);
    p = AugPipeline::standard(6, 1);
    p.groups[1].weights = {1, -1, 0};
    CHECK_THROWS_AS(p.validate(), InvalidParameter);
    CHECK(parse_op_kind("canny") == OpKind::canny);
  }

  TEST_CASE("offline generation multiplies training rows") {
    cftest::TempDir dir("offline");
    auto m = image_manifest(dir / "src", {60, 40}, 8);
    // hold out a few rows to check they are untouched
    m.rows[0].split = dataset::Split::val;
    m.rows[1].split = dataset::Split::test;
    const auto n_train = m.count(dataset::Split::train);
    const auto out = generate_offline(m, AugPipeline::standard(6, 42), dir / "aug");
    CHECK(out.count(dataset::Split::train) == 7 * n_train);
    CHECK(out.count(dataset::Split::train, 0) == 7 * m.count(dataset::Split::train, 0));
    CHECK(out.count(dataset::Split::train, 1) == 7 * m.count(dataset::Split::train, 1));
    CHECK(out.count(dataset::Split::val) == 1);
    CHECK(out.count(dataset::Split::test) == 1);
    for (std::size_t i = 0; i < m.rows.size(); ++i) CHECK(out.rows[i] == m.rows[i]);
    for (std::size_t i = m.rows.size(); i < out.rows.size(); ++i) {
      const auto& r = out.rows[i];
      CHECK(r.origin == dataset::Origin::augmented);
      CHECK(r.split == dataset::Split::train);
      CHECK(fs::exists(r.path));
      CHECK(m.rows[static_cast<std::size_t>(r.source_index)].split == dataset::Split::train);
    }
    CHECK(out.rows[m.rows.size()].path.find("__aug1.png") != std::string::npos);
  }

  TEST_CASE("100 rows and six copies give 700; zero copies change nothing") {
    cftest::TempDir dir("hundred");
    const auto m = image_manifest(dir / "src", {50, 50}, 6);
    CHECK(generate_offline(m, AugPipeline::standard(6, 1), dir / "aug").count(dataset::Split::train) == 700);
    CHECK(generate_offline(m, AugPipeline::standard(0, 1), dir / "none") == m);
    CHECK_FALSE(fs::exists(dir / "none"));
  }

  TEST_CASE("regeneration is byte-identical and worker count does not matter") {
    cftest::TempDir dir("regen");
    const auto m = image_manifest(dir / "src", {6, 6}, 20);
    const auto a = generate_offline(m, AugPipeline::standard(3, 9), dir / "a", 1);
    const auto b = generate_offline(m, AugPipeline::standard(3, 9), dir / "b", 4);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = m.rows.size(); i < a.rows.size(); ++i) {
      CHECK(fs::path(a.rows[i].path).filename() == fs::path(b.rows[i].path).filename());
      CHECK(slurp(a.rows[i].path) == slurp(b.rows[i].path));
    }
    const auto c = generate_offline(m, AugPipeline::standard(3, 10), dir / "c", 1);
    std::size_t differing = 0;
    for (std::size_t i = m.rows.size(); i < a.rows.size(); ++i) differing += slurp(a.rows[i].path) != slurp(c.rows[i].path);
    CHECK(differing > 0);
  }

  TEST_CASE("unwritable output is an I/O error") {
    cftest::TempDir dir("unwritable");
    const auto m = image_manifest(dir / "src", {5}, 6);
    std::ofstream(dir / "blocker") << "x";
    CHECK_THROWS_AS(generate_offline(m, AugPipeline::standard(1, 1), dir / "blocker" / "aug"), IoError);
  }
}

TEST_SUITE("online augmentation") {
  TEST_CASE("disabled randomness is the identity") {
    const auto img = random_image(16, 16, 3, 20);
    for (std::uint64_t s = 0; s < 5; ++s) CHECK(online_augment(img, OnlineAugConfig::identity(), 3, s) == img);
    auto off = OnlineAugConfig{};
    off.enabled = false;
    CHECK(online_augment(img, off, 3, 0) == img);
    CHECK(scale_brightness(img, 1.0) == img);
  }

  TEST_CASE("same epoch seed replays the same batch") {
    std::vector<Image> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_image(16, 16, 3, 30 + i));
    const OnlineAugConfig cfg;
    CHECK(online_augment(batch, cfg, 77) == online_augment(batch, cfg, 77));
    CHECK_FALSE(online_augment(batch, cfg, 77) == online_augment(batch, cfg, 78));
  }

  TEST_CASE("config validation") {
    OnlineAugConfig c;
    c.brightness_lo = 1.4;
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
    c = {};
    c.rotation_deg = -1;
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
  }
}
