#include "cervifuse/pipeline/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "cervifuse/common/error.hpp"
#include "cervifuse/common/hash.hpp"

namespace fs = std::filesystem;

namespace cervifuse::pipeline {

namespace {

/// Typed access to one TOML table that remembers its field path and
/// rejects keys nobody asked for.
class Section {
 public:
  Section(const toml::table& t, std::string path) : table_(t), path_(std::move(path)) {}

  std::string field(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  const toml::node* get(std::string_view key) {
    seen_.insert(std::string(key));
    return table_.get(key);
  }

  [[noreturn]] void fail(std::string_view key, const std::string& msg) const { throw ConfigError(field(key) + ": " + msg); }

  std::int64_t integer(std::string_view key, std::int64_t fallback, bool required = false) {
    const auto* n = get(key);
    if (!n) {
      if (required) fail(key, "is required");
      return fallback;
    }
    if (const auto* v = n->as_integer()) return v->get();
    fail(key, "expected an integer");
  }

  double number(std::string_view key, double fallback) {
    const auto* n = get(key);
    if (!n) return fallback;
    return as_number(*n, field(key));
  }

  bool boolean(std::string_view key, bool fallback) {
    const auto* n = get(key);
    if (!n) return fallback;
    if (const auto* v = n->as_boolean()) return v->get();
    fail(key, "expected true or false");
  }

  std::string string(std::string_view key, const std::string& fallback, bool required = false) {
    const auto* n = get(key);
    if (!n) {
      if (required) fail(key, "is required");
      return fallback;
    }
    if (const auto* v = n->as_string()) return v->get();
    fail(key, "expected a string");
  }

  std::vector<double> numbers(std::string_view key, std::size_t expected) {
    const auto* n = get(key);
    if (!n) return {};
    const auto* arr = n->as_array();
    if (!arr || arr->size() != expected) fail(key, "expected an array of " + std::to_string(expected) + " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < arr->size(); ++i) out.push_back(as_number(*arr->get(i), field(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : table_) {
      if (!seen_.count(std::string(k.str()))) throw ConfigError(field(k.str()) + ": unknown key");
    }
  }

  static double as_number(const toml::node& n, const std::string& where) {
    if (const auto* v = n.as_floating_point()) return v->get();
    if (const auto* v = n.as_integer()) return static_cast<double>(v->get());
    throw ConfigError(where + ": expected a number");
  }

 private:
  const toml::table& table_;
  std::string path_;
  std::set<std::string> seen_;
};

const toml::table* subtable(Section& parent, std::string_view key) {
  const auto* n = parent.get(key);
  if (!n) return nullptr;
  if (const auto* t = n->as_table()) return t;
  throw ConfigError(parent.field(key) + ": expected a table");
}

std::vector<fusion::Phase> read_phases(Section& s, std::string_view key, std::vector<fusion::Phase> fallback) {
  const auto* n = s.get(key);
  if (!n) return fallback;
  const auto* arr = n->as_array();
  if (!arr) throw ConfigError(s.field(key) + ": expected an array of {epochs, lr} tables");
  std::vector<fusion::Phase> out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const auto* t = arr->get(i)->as_table();
    const std::string where = s.field(key) + "[" + std::to_string(i) + "]";
    if (!t) throw ConfigError(where + ": expected a table");
    Section p(*t, where);
    fusion::Phase ph;
    ph.epochs = static_cast<int>(p.integer("epochs", 0, true));
    ph.lr = p.number("lr", 1e-3);
    if (ph.epochs < 0) p.fail("epochs", "must be >= 0");
    if (!(ph.lr > 0.0)) p.fail("lr", "must be > 0");
    p.finish();
    out.push_back(ph);
  }
  return out;
}

void read_train(Section& s, TrainConfig& t) {
  t.phases = read_phases(s, "phases", t.phases);
  const auto batch = s.integer("batch_size", static_cast<std::int64_t>(t.batch_size));
  if (batch < 2) s.fail("batch_size", "must be >= 2");
  t.batch_size = static_cast<std::size_t>(batch);
  t.dropout = s.number("dropout", t.dropout);
  if (!(t.dropout >= 0.0 && t.dropout < 1.0)) s.fail("dropout", "must be in [0, 1)");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

nlohmann::ordered_json phases_json(const std::vector<fusion::Phase>& phases) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& p : phases) out.push_back({{"epochs", p.epochs}, {"lr", p.lr}});
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir, std::string_view source_name) {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source_name << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }

  ExperimentConfig cfg;
  Section top(root, "");
  const auto seed = top.integer("seed", 0, true);
  if (seed < 0) top.fail("seed", "must be >= 0");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.output_dir = resolve(base_dir, top.string("output_dir", "runs"));
  cfg.workers = static_cast<int>(top.integer("workers", 0));
  if (cfg.workers < 0) top.fail("workers", "must be >= 0");

  const auto* ds = subtable(top, "dataset");
  if (!ds) throw ConfigError("dataset: is required");
  {
    Section s(*ds, "dataset");
    cfg.dataset_root = resolve(base_dir, s.string("root", "", true));
    cfg.scheme = s.string("scheme", cfg.scheme);
    if (const auto f = s.numbers("split", 3); !f.empty()) cfg.split = {f[0], f[1], f[2]};
    s.finish();
  }

  if (const auto* t = subtable(top, "augment")) {
    Section s(*t, "augment");
    cfg.augment_copies = static_cast<int>(s.integer("copies", cfg.augment_copies));
    if (cfg.augment_copies < 0) s.fail("copies", "must be >= 0");
    s.finish();
  }

  if (const auto* t = subtable(top, "online")) {
    Section s(*t, "online");
    auto& o = cfg.online;
    o.enabled = s.boolean("enabled", o.enabled);
    o.rotation_deg = s.number("rotation_deg", o.rotation_deg);
    o.horizontal_flip = s.boolean("horizontal_flip", o.horizontal_flip);
    o.vertical_flip = s.boolean("vertical_flip", o.vertical_flip);
    if (const auto b = s.numbers("brightness", 2); !b.empty()) {
      o.brightness_lo = b[0];
      o.brightness_hi = b[1];
    }
    o.channel_shift = s.boolean("channel_shift", o.channel_shift);
    o.channel_shift_intensity = s.number("channel_shift_intensity", o.channel_shift_intensity);
    try {
      o.validate();
    } catch (const InvalidParameter& e) {
      throw ConfigError(std::string("online: ") + e.what());
    }
    s.finish();
  }

  {
    const auto* n = top.get("backbone");
    const auto* arr = n ? n->as_array() : nullptr;
    if (!arr || arr->empty()) throw ConfigError("backbone: at least one [[backbone]] table is required");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const std::string where = "backbone[" + std::to_string(i) + "]";
      const auto* t = arr->get(i)->as_table();
      if (!t) throw ConfigError(where + ": expected a table");
      Section s(*t, where);
      backbone::BackboneSpec b;
      b.id = s.string("id", "", true);
      if (b.id.empty() || b.id.find_first_of("/\\. ") != std::string::npos)
        s.fail("id", "must be a non-empty name without '/', '.', or spaces");
      if (!ids.insert(b.id).second) s.fail("id", "duplicate backbone id '" + b.id + "'");
      b.kind = s.string("kind", "toy");
      if (b.kind != "toy" && b.kind != "onnx") s.fail("kind", "expected \"toy\" or \"onnx\"");
      const auto model = s.string("model", "");
      if (b.kind == "onnx") {
        if (model.empty()) s.fail("model", "is required for onnx backbones");
        b.model = resolve(base_dir, model);
      } else if (!model.empty()) {
        s.fail("model", "only applies to onnx backbones");
      }
      const auto bseed = s.integer("seed", 0);
      if (bseed < 0) s.fail("seed", "must be >= 0");
      b.seed = static_cast<std::uint64_t>(bseed);
      b.input_size = static_cast<int>(s.integer("input_size", b.input_size));
      if (b.input_size < 8) s.fail("input_size", "must be >= 8");
      const auto dim = s.integer("output_dim", 0);
      if (dim < 0) s.fail("output_dim", "must be >= 0");
      b.output_dim = static_cast<std::size_t>(dim);
      s.finish();
      cfg.backbones.push_back(std::move(b));
    }
  }

  if (const auto* t = subtable(top, "head")) {
    Section s(*t, "head");
    read_train(s, cfg.head);
    const auto dim = s.integer("feature_dim", static_cast<std::int64_t>(cfg.feature_dim));
    if (dim < 1) s.fail("feature_dim", "must be >= 1");
    cfg.feature_dim = static_cast<std::size_t>(dim);
    s.finish();
  }
  if (const auto* t = subtable(top, "fusion")) {
    Section s(*t, "fusion");
    read_train(s, cfg.fusion);
    s.finish();
  }
  top.finish();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  const auto base = fs::absolute(path).parent_path();
  return parse_config(ss.str(), base, path.string());
}

void validate_config(const ExperimentConfig& cfg) {
  if (!fs::is_directory(cfg.dataset_root)) throw ConfigError("dataset.root: directory not found: " + cfg.dataset_root.string());
  if (cfg.scheme != "folder") {
    const auto names = dataset::builtin_scheme_names();
    if (std::find(names.begin(), names.end(), cfg.scheme) == names.end()) {
      std::string list = "folder";
      for (const auto& n : names) list += ", " + n;
      throw ConfigError("dataset.scheme: unknown scheme '" + cfg.scheme + "' (known: " + list + ")");
    }
  }
  const auto& f = cfg.split;
  if (!(f.train > 0 && f.val >= 0 && f.test > 0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("dataset.split: fractions must be positive and sum to 1");
  for (std::size_t i = 0; i < cfg.backbones.size(); ++i) {
    const auto& b = cfg.backbones[i];
    if (b.kind == "onnx" && !fs::is_regular_file(b.model))
      throw ConfigError("backbone[" + std::to_string(i) + "].model: file not found: " + b.model.string());
  }
}

std::string canonical_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["dataset"] = {{"root", cfg.dataset_root.generic_string()},
                  {"scheme", cfg.scheme},
                  {"split", {cfg.split.train, cfg.split.val, cfg.split.test}}};
  j["augment"] = {{"copies", cfg.augment_copies}};
  const auto& o = cfg.online;
  j["online"] = {{"enabled", o.enabled},
                 {"rotation_deg", o.rotation_deg},
                 {"horizontal_flip", o.horizontal_flip},
                 {"vertical_flip", o.vertical_flip},
                 {"brightness", {o.brightness_lo, o.brightness_hi}},
                 {"channel_shift", o.channel_shift},
                 {"channel_shift_intensity", o.channel_shift_intensity}};
  auto& bbs = j["backbone"] = nlohmann::ordered_json::array();
  for (const auto& b : cfg.backbones) {
    bbs.push_back({{"id", b.id},
                   {"kind", b.kind},
                   {"model", b.model.generic_string()},
                   {"seed", b.seed},
                   {"input_size", b.input_size},
                   {"output_dim", b.output_dim}});
  }
  j["head"] = {{"phases", phases_json(cfg.head.phases)},
               {"batch_size", cfg.head.batch_size},
               {"dropout", cfg.head.dropout},
               {"feature_dim", cfg.feature_dim}};
  j["fusion"] = {{"phases", phases_json(cfg.fusion.phases)},
                 {"batch_size", cfg.fusion.batch_size},
                 {"dropout", cfg.fusion.dropout}};
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(canonical_json(cfg)).substr(0, 16); }

}  // namespace cervifuse::pipeline
