#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cervifuse/image/image.hpp"

namespace cervifuse::pipeline {

struct SynthSpec {
  int classes = 5;
  int per_class = 30;
  int size = 64;
  std::uint64_t seed = 0;
};

/// Folder names for the first `classes` synthetic classes, each one a shape
/// drawn over its own background hue.
std::vector<std::string> synth_class_names(int classes);

/// Image i of class c. Pure function of (spec.seed, c, i).
Image synth_image(const SynthSpec& spec, int c, int i);

/// Writes `<out_dir>/<class>/<class>_<iii>.png`. Throws InvalidParameter
/// unless 2 <= classes <= 7, per_class >= 1 and size >= 16.
std::vector<std::filesystem::path> synthesize(const std::filesystem::path& out_dir, const SynthSpec& spec);

}  // namespace cervifuse::pipeline
