#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cervifuse::dataset {

enum class Split { train, val, test };
enum class Origin { original, augmented };

const char* to_string(Split s);
const char* to_string(Origin o);
Split parse_split(const std::string& s);
Origin parse_origin(const std::string& s);

struct ImageSample {
  std::string path;
  std::string raw_label;
  int mapped_label = 0;
  Split split = Split::train;
  Origin origin = Origin::original;
  // Row index of the original this sample derives from (itself for originals).
  std::int64_t source_index = 0;

  bool operator==(const ImageSample&) const = default;
};

/// Maps normalized raw labels to class ids. A raw label mapped to
/// kExclude is dropped at ingestion.
struct ClassScheme {
  static constexpr int kExclude = -1;

  std::string name;
  std::vector<std::string> classes;
  std::map<std::string, int> mapping;

  /// Class id, kExclude, or nullopt for a label the scheme does not know.
  std::optional<int> lookup(const std::string& raw_label) const;
  std::size_t num_classes() const { return classes.size(); }
  /// Throws InvalidParameter when a class has no raw label or an id is out of range.
  void validate() const;

  bool operator==(const ClassScheme&) const = default;
};

/// Lowercase, drop a leading "im_", and turn '-' and ' ' into '_'.
std::string normalize_label(const std::string& raw);

/// Built-in schemes: sipakmed5, sipakmed3, sipakmed2, herlev7, herlev2.
ClassScheme builtin_scheme(const std::string& name);
std::vector<std::string> builtin_scheme_names();

/// One class per subdirectory of `root`, in sorted order.
ClassScheme folder_scheme(const std::filesystem::path& root);

struct Manifest {
  std::vector<ImageSample> rows;
  ClassScheme scheme;
  std::uint64_t seed = 0;

  std::size_t count(Split s) const;
  std::size_t count(Split s, int label) const;
  std::vector<ImageSample> select(Split s) const;

  bool operator==(const Manifest&) const = default;
};

/// One row per image file (png, jpg, jpeg, bmp, tif, tiff) under
/// `root/<raw_label>/`. Rows are sorted by path. Throws UnmappedLabel for
/// subdirectories the scheme does not know.
Manifest ingest(const std::filesystem::path& root, const ClassScheme& scheme);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Per-class counts: test = ceil(n * test), val = ceil of the val share of
/// the remainder, train takes the rest.
SplitCounts split_counts(std::size_t n, const SplitFractions& f = {});

/// Shuffles each class with a seed derived from (seed, class id) and assigns
/// train, val and test in that order. Requires at least 5 samples per class.
Manifest stratified_split(const Manifest& m, std::uint64_t seed, const SplitFractions& f = {});

/// CSV with header path,raw_label,mapped_label,split,origin,source_index plus
/// a `<path>.meta.json` sidecar carrying the scheme and seed.
void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

std::string manifest_csv(const Manifest& m);
std::filesystem::path meta_path(const std::filesystem::path& manifest_path);

}  // namespace cervifuse::dataset
