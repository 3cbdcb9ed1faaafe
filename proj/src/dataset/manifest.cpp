#include "cervifuse/dataset/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cervifuse/common/error.hpp"
#include "cervifuse/common/log.hpp"
#include "cervifuse/common/rng.hpp"

namespace fs = std::filesystem;

namespace cervifuse::dataset {

namespace {

constexpr const char* kHeader = "path,raw_label,mapped_label,split,origin,source_index";
constexpr std::size_t kMinClassSize = 5;

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  fields.push_back(std::move(cur));
  return fields;
}

template <typename Int>
Int parse_int(const std::string& s, const char* field, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<Int>(v);
  } catch (const std::exception&) {
    throw ParseError(std::string("bad ") + field + " '" + s + "'", line_no);
  }
}

ClassScheme make_scheme(std::string name, std::vector<std::string> classes,
                        std::map<std::string, int> mapping) {
  ClassScheme s{std::move(name), std::move(classes), std::move(mapping)};
  s.validate();
  return s;
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

const char* to_string(Origin o) { return o == Origin::original ? "original" : "augmented"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + s + "'");
}

Origin parse_origin(const std::string& s) {
  if (s == "original") return Origin::original;
  if (s == "augmented") return Origin::augmented;
  throw ParseError("unknown origin '" + s + "'");
}

std::string normalize_label(const std::string& raw) {
  std::string s;
  s.reserve(raw.size());
  for (unsigned char c : raw) {
    if (c == '-' || c == ' ') s += '_';
    else s += static_cast<char>(std::tolower(c));
  }
  if (s.rfind("im_", 0) == 0) s.erase(0, 3);
  return s;
}

std::optional<int> ClassScheme::lookup(const std::string& raw_label) const {
  auto it = mapping.find(normalize_label(raw_label));
  if (it == mapping.end()) return std::nullopt;
  return it->second;
}

void ClassScheme::validate() const {
  if (classes.empty()) throw InvalidParameter("scheme '" + name + "' has no classes");
  std::vector<bool> covered(classes.size(), false);
  for (const auto& [raw, id] : mapping) {
    if (id == kExclude) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= classes.size())
      throw InvalidParameter("scheme '" + name + "': label '" + raw + "' maps to invalid class " + std::to_string(id));
    covered[id] = true;
  }
  for (std::size_t c = 0; c < classes.size(); ++c)
    if (!covered[c]) throw InvalidParameter("scheme '" + name + "': class '" + classes[c] + "' has no raw label");
}

ClassScheme builtin_scheme(const std::string& name) {
  constexpr int X = ClassScheme::kExclude;
  if (name == "sipakmed5")
    return make_scheme(name, {"superficial_intermediate", "parabasal", "koilocytotic", "dyskeratotic", "metaplastic"},
                       {{"superficial_intermediate", 0}, {"superficial", 0}, {"parabasal", 1},
                        {"koilocytotic", 2}, {"dyskeratotic", 3}, {"metaplastic", 4}});
  if (name == "sipakmed3")
    return make_scheme(name, {"abnormal", "benign", "normal"},
                       {{"superficial_intermediate", 2}, {"superficial", 2}, {"parabasal", 2},
                        {"koilocytotic", 0}, {"dyskeratotic", 0}, {"metaplastic", 1}});
  if (name == "sipakmed2")
    return make_scheme(name, {"abnormal", "normal"},
                       {{"superficial_intermediate", 1}, {"superficial", 1}, {"parabasal", 1},
                        {"koilocytotic", 0}, {"dyskeratotic", 0}, {"metaplastic", X}});
  const std::map<std::string, int> herlev7 = {
      {"normal_superficiel", 0}, {"normal_superficial", 0}, {"superficial_squamous", 0},
      {"normal_intermediate", 1}, {"intermediate_squamous", 1},
      {"normal_columnar", 2}, {"columnar", 2},
      {"light_dysplastic", 3}, {"mild_dysplasia", 3},
      {"moderate_dysplastic", 4}, {"moderate_dysplasia", 4},
      {"severe_dysplastic", 5}, {"severe_dysplasia", 5},
      {"carcinoma_in_situ", 6}};
  if (name == "herlev7")
    return make_scheme(name,
                       {"normal_superficial", "normal_intermediate", "normal_columnar", "light_dysplastic",
                        "moderate_dysplastic", "severe_dysplastic", "carcinoma_in_situ"},
                       herlev7);
  if (name == "herlev2") {
    std::map<std::string, int> m;
    for (const auto& [raw, id] : herlev7) m[raw] = id <= 2 ? 1 : 0;
    return make_scheme(name, {"abnormal", "normal"}, m);
  }
  throw InvalidParameter("unknown class scheme '" + name + "'");
}

std::vector<std::string> builtin_scheme_names() {
  return {"sipakmed5", "sipakmed3", "sipakmed2", "herlev7", "herlev2"};
}

ClassScheme folder_scheme(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) names.insert(normalize_label(entry.path().filename().string()));
  ClassScheme s;
  s.name = "folders";
  for (const auto& n : names) {
    s.mapping[n] = static_cast<int>(s.classes.size());
    s.classes.push_back(n);
  }
  s.validate();
  return s;
}

std::size_t Manifest::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.split == s; }));
}

std::size_t Manifest::count(Split s, int label) const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.split == s && r.mapped_label == label; }));
}

std::vector<ImageSample> Manifest::select(Split s) const {
  std::vector<ImageSample> out;
  for (const auto& r : rows)
    if (r.split == s) out.push_back(r);
  return out;
}

Manifest ingest(const fs::path& root, const ClassScheme& scheme) {
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  scheme.validate();
  Manifest m;
  m.scheme = scheme;
  std::vector<std::string> unknown;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const std::string raw = dir.filename().string();
    const auto id = scheme.lookup(raw);
    if (!id) {
      unknown.push_back(raw);
      continue;
    }
    if (*id == ClassScheme::kExclude) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    for (const auto& f : files) m.rows.push_back({f.generic_string(), normalize_label(raw), *id});
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw UnmappedLabel("scheme '" + scheme.name + "' has no mapping for: " + list);
  }
  std::sort(m.rows.begin(), m.rows.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  for (std::size_t i = 0; i < m.rows.size(); ++i) m.rows[i].source_index = static_cast<std::int64_t>(i);
  if (m.rows.empty()) log().warn("no images found under {}", root.string());
  return m;
}

SplitCounts split_counts(std::size_t n, const SplitFractions& f) {
  constexpr double kEps = 1e-9;
  SplitCounts c;
  c.test = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * f.test - kEps));
  const std::size_t rest = n - std::min(c.test, n);
  const double val_share = f.val / (f.train + f.val);
  c.val = std::min(rest, static_cast<std::size_t>(std::ceil(static_cast<double>(rest) * val_share - kEps)));
  c.train = rest - c.val;
  c.test = n - rest;
  return c;
}

Manifest stratified_split(const Manifest& m, std::uint64_t seed, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9 ||
      f.train + f.val <= 0)
    throw InvalidParameter("split fractions must be non-negative and sum to 1");
  Manifest out = m;
  out.seed = seed;
  const std::size_t classes = m.scheme.num_classes();
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const auto& r = m.rows[i];
    if (r.origin != Origin::original) throw StateError("cannot split a manifest that already holds augmented rows");
    if (r.mapped_label < 0 || static_cast<std::size_t>(r.mapped_label) >= classes)
      throw InvalidLabel("row " + std::to_string(i) + " has label outside the scheme");
    members[r.mapped_label].push_back(i);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = members[c];
    if (idx.size() < kMinClassSize)
      throw StratificationError("class '" + m.scheme.classes[c] + "' has " + std::to_string(idx.size()) +
                                " samples, at least " + std::to_string(kMinClassSize) + " required");
    Rng rng(derive_seed(seed, c));
    rng.shuffle(std::span<std::size_t>(idx));
    const auto counts = split_counts(idx.size(), f);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.rows[idx[k]].split = k < counts.train ? Split::train
                               : k < counts.train + counts.val ? Split::val
                                                               : Split::test;
    }
  }
  return out;
}

std::string manifest_csv(const Manifest& m) {
  std::set<std::string> seen;
  std::ostringstream os;
  os << kHeader << '\n';
  for (const auto& r : m.rows) {
    if (!seen.insert(r.path).second) throw DuplicatePath("duplicate manifest path: " + r.path);
    os << csv_field(r.path) << ',' << csv_field(r.raw_label) << ',' << r.mapped_label << ',' << to_string(r.split)
       << ',' << to_string(r.origin) << ',' << r.source_index << '\n';
  }
  return os.str();
}

fs::path meta_path(const fs::path& manifest_path) {
  return fs::path(manifest_path.string() + ".meta.json");
}

void save_manifest(const Manifest& m, const fs::path& path) {
  const std::string csv = manifest_csv(m);
  nlohmann::ordered_json meta;
  meta["scheme"] = {{"name", m.scheme.name}, {"classes", m.scheme.classes}, {"mapping", m.scheme.mapping}};
  meta["seed"] = m.seed;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << csv;
  std::ofstream ms(meta_path(path), std::ios::binary);
  if (!ms) throw IoError("cannot write manifest metadata " + meta_path(path).string());
  ms << meta.dump(2) << '\n';
  if (!os || !ms) throw IoError("write failed for manifest " + path.string());
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read manifest " + path.string());
  Manifest m;
  {
    std::ifstream ms(meta_path(path), std::ios::binary);
    if (!ms) throw IoError("missing manifest metadata " + meta_path(path).string());
    try {
      const auto meta = nlohmann::json::parse(ms);
      m.scheme.name = meta.at("scheme").at("name").get<std::string>();
      m.scheme.classes = meta.at("scheme").at("classes").get<std::vector<std::string>>();
      m.scheme.mapping = meta.at("scheme").at("mapping").get<std::map<std::string, int>>();
      m.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bad manifest metadata " + meta_path(path).string() + ": " + e.what());
    }
  }
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kHeader) throw ParseError("unexpected manifest header", line_no);
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv_line(line, line_no);
    if (f.size() != 6)
      throw ParseError("expected 6 fields, found " + std::to_string(f.size()), line_no);
    ImageSample s;
    s.path = f[0];
    s.raw_label = f[1];
    s.mapped_label = parse_int<int>(f[2], "mapped_label", line_no);
    try {
      s.split = parse_split(f[3]);
      s.origin = parse_origin(f[4]);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
    s.source_index = parse_int<std::int64_t>(f[5], "source_index", line_no);
    if (s.path.empty()) throw ParseError("empty path", line_no);
    if (s.mapped_label < 0 || static_cast<std::size_t>(s.mapped_label) >= m.scheme.num_classes())
      throw ParseError("mapped_label out of range for scheme '" + m.scheme.name + "'", line_no);
    if (!seen.insert(s.path).second) throw ParseError("duplicate path " + s.path, line_no);
    m.rows.push_back(std::move(s));
  }
  if (line_no == 0) throw ParseError("empty manifest file (missing header)", 1);
  return m;
}

}  // namespace cervifuse::dataset
