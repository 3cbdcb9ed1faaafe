#include "cervifuse/pipeline/runner.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cervifuse/augment/pipeline.hpp"
#include "cervifuse/common/error.hpp"
#include "cervifuse/common/hash.hpp"
#include "cervifuse/common/log.hpp"
#include "cervifuse/common/parallel.hpp"
#include "cervifuse/common/rng.hpp"
#include "cervifuse/eval/metrics.hpp"
#include "cervifuse/eval/report.hpp"
#include "cervifuse/fusion/features.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace cervifuse::pipeline {

namespace {

constexpr const char* kSplits[] = {"train", "val", "test"};

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("write failed for " + p.string());
}

std::string history_csv(const fusion::History& h) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lr,loss,accuracy,val_loss,val_accuracy\n";
  for (const auto& r : h) {
    os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.accuracy << ',';
    if (r.val_loss) os << *r.val_loss;
    os << ',';
    if (r.val_accuracy) os << *r.val_accuracy;
    os << '\n';
  }
  return os.str();
}

std::vector<Image> load_images(const std::vector<dataset::ImageSample>& rows, int workers) {
  std::vector<Image> out(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) { out[i] = read_image(rows[i].path); }, static_cast<std::size_t>(workers));
  return out;
}

fusion::Schedule schedule(const TrainConfig& t, std::uint64_t seed) {
  fusion::Schedule s;
  s.phases = t.phases;
  s.batch_size = t.batch_size;
  s.seed = seed;
  return s;
}

/// Stage bookkeeping inside one run directory.
class Ledger {
 public:
  Ledger(const fs::path& dir, const std::string& hash, std::uint64_t seed) : dir_(dir), hash_(hash), seed_(seed) {}

  fs::path record_path(Stage s) const { return dir_ / "stages" / (std::string(to_string(s)) + ".json"); }

  std::string rel(const fs::path& p) const { return p.lexically_relative(dir_).generic_string(); }

  /// Throws MissingArtifact "<what> missing; run <stage>" when the producing
  /// stage has not completed, and ValidationError when its outputs were
  /// produced by another config or changed afterwards.
  json require(Stage producer, const std::string& what) const {
    const auto path = record_path(producer);
    if (!fs::exists(path))
      throw MissingArtifact(what + " missing; run " + to_string(producer) + " (expected " + path.string() + ")");
    json rec;
    try {
      rec = json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("stage record " + path.string() + " is unreadable: " + e.what());
    }
    if (rec.value("config_hash", std::string()) != hash_)
      throw ValidationError("stage record " + path.string() + " belongs to config " + rec.value("config_hash", std::string("?")) +
                            ", not " + hash_ + "; rerun " + to_string(producer));
    for (const auto& [file, digest] : rec.at("outputs").items()) {
      const auto p = dir_ / file;
      if (!fs::exists(p)) throw MissingArtifact(what + " missing (" + p.string() + "); run " + to_string(producer));
      if (sha256_file(p) != digest.get<std::string>())
        throw ValidationError(p.string() + " changed after " + to_string(producer) + " wrote it; rerun " + to_string(producer));
    }
    return rec;
  }

  void write(Stage s, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs, json extra = json::object()) const {
    json rec;
    rec["stage"] = to_string(s);
    rec["config_hash"] = hash_;
    rec["seed"] = seed_;
    rec["inputs"] = json::object();
    for (const auto& p : inputs) rec["inputs"][rel(p)] = sha256_file(p);
    rec["outputs"] = json::object();
    for (const auto& p : outputs) rec["outputs"][rel(p)] = sha256_file(p);
    for (auto& [k, v] : extra.items()) rec[k] = v;
    write_text(record_path(s), rec.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string hash_;
  std::uint64_t seed_;
};

class StageTimer {
 public:
  explicit StageTimer(Stage s) : stage_(s), start_(std::chrono::steady_clock::now()) { log().info("{}: started", to_string(s)); }
  ~StageTimer() {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (std::uncaught_exceptions() > 0)
      log().info("{}: failed after {:.2f} s", to_string(stage_), secs);
    else
      log().info("{}: finished in {:.2f} s", to_string(stage_), secs);
  }

 private:
  Stage stage_;
  std::chrono::steady_clock::time_point start_;
};

fs::path manifest_file(const fs::path& dir) { return dir / "data" / "manifest.csv"; }
fs::path augmented_manifest_file(const fs::path& dir) { return dir / "data" / "manifest_aug.csv"; }
fs::path trunk_features(const fs::path& dir, const std::string& id, const char* split) {
  return dir / "trunk" / (id + "." + split + ".fmx");
}
fs::path head_features(const fs::path& dir, const std::string& id, const char* split) {
  return dir / "features" / (id + "." + split + ".fmx");
}
fs::path prediction_file(const fs::path& dir, const std::string& name) { return dir / "predictions" / (name + ".json"); }
fs::path metrics_file(const fs::path& dir, const std::string& name) { return dir / "eval" / (name + ".metrics.json"); }
fs::path with_json(const fs::path& p) { return fs::path(p.string() + ".json"); }

dataset::ClassScheme scheme_for(const ExperimentConfig& cfg) {
  return cfg.scheme == "folder" ? dataset::folder_scheme(cfg.dataset_root) : dataset::builtin_scheme(cfg.scheme);
}

std::string dataset_digest(const dataset::Manifest& m) {
  std::string listing;
  for (const auto& r : m.rows) listing += r.path + '\t' + sha256_file(r.path) + '\n';
  return sha256_hex(listing);
}

fusion::FeatureMatrix load_checked(const fs::path& p, const std::string& hash) {
  auto m = fusion::load_feature_matrix(p);
  if (m.config_hash != hash)
    throw ValidationError(p.string() + " was produced by config " + m.config_hash + ", not " + hash);
  return m;
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::split: return "split";
    case Stage::augment: return "augment";
    case Stage::extract: return "extract";
    case Stage::train_head: return "train-head";
    case Stage::train_fusion: return "train-fusion";
    case Stage::predict_lf: return "predict-lf";
    case Stage::eval: return "eval";
    case Stage::report: return "report";
  }
  return "?";
}

void save_predictions(const fs::path& path, const PredictionSet& p) {
  if (p.labels.size() != p.sample_ids.size() || p.predicted.size() != p.labels.size() || p.probs.rows() != p.labels.size())
    throw DimensionError("prediction set '" + p.name + "' has inconsistent lengths");
  json j;
  j["name"] = p.name;
  j["config_hash"] = p.config_hash;
  j["classes"] = p.classes;
  j["sample_ids"] = p.sample_ids;
  j["labels"] = p.labels;
  j["predicted"] = p.predicted;
  auto& probs = j["probs"] = json::array();
  for (std::size_t i = 0; i < p.probs.rows(); ++i) {
    const auto row = p.probs.row(i);
    probs.push_back(std::vector<float>(row.begin(), row.end()));
  }
  write_text(path, j.dump(1) + "\n");
}

PredictionSet load_predictions(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifact("predictions not found: " + path.string());
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    PredictionSet p;
    p.name = j.at("name").get<std::string>();
    p.config_hash = j.at("config_hash").get<std::string>();
    p.classes = j.at("classes").get<std::vector<std::string>>();
    p.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    p.labels = j.at("labels").get<std::vector<int>>();
    p.predicted = j.at("predicted").get<std::vector<int>>();
    const auto rows = j.at("probs").get<std::vector<std::vector<float>>>();
    p.probs = nn::TensorF({rows.size(), p.classes.size()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != p.classes.size()) throw ParseError(path.string() + ": probability row " + std::to_string(i) + " has the wrong width");
      std::copy(rows[i].begin(), rows[i].end(), p.probs.row(i).begin());
    }
    if (p.labels.size() != rows.size() || p.predicted.size() != rows.size() || p.sample_ids.size() != rows.size())
      throw ParseError(path.string() + ": inconsistent lengths");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed predictions " + path.string() + ": " + e.what());
  }
}

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      const auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (written != static_cast<ssize_t>(pid.size())) throw IoError("cannot write " + path_.string());
      return;
    }
    if (errno != EEXIST) throw IoError("cannot create " + path_.string() + ": " + std::strerror(errno));
    long owner = 0;
    std::ifstream(path_) >> owner;
    if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM))
      throw StateError("run directory " + dir.string() + " is locked by process " + std::to_string(owner));
    log().warn("removing stale lock {}", path_.string());
    fs::remove(path_);
  }
  throw StateError("cannot lock " + dir.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Runner::Runner(ExperimentConfig cfg, const std::string& config_text)
    : cfg_(std::move(cfg)),
      hash_(config_hash(cfg_)),
      dir_(cfg_.output_dir / ("run-" + hash_)),
      lock_(dir_) {
  validate_config(cfg_);
  if (!config_text.empty()) write_text(dir_ / "config.toml", config_text);
  write_text(dir_ / "config.json", canonical_json(cfg_));
  log().info("run directory {}", dir_.string());
}

std::vector<std::string> Runner::model_names() const {
  std::vector<std::string> out;
  for (const auto& b : cfg_.backbones) out.push_back(b.id);
  if (cfg_.backbones.size() >= 2) {
    out.push_back("lf");
    out.push_back("hdff");
  }
  return out;
}

void Runner::split() {
  StageTimer t(Stage::split);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  auto m = dataset::ingest(cfg_.dataset_root, scheme_for(cfg_));
  if (m.rows.empty()) throw ValidationError("dataset.root: no images under " + cfg_.dataset_root.string());
  m = dataset::stratified_split(m, cfg_.seed, cfg_.split);
  const auto out = manifest_file(dir_);
  dataset::save_manifest(m, out);
  log().info("split: {} train, {} val, {} test", m.count(dataset::Split::train), m.count(dataset::Split::val),
             m.count(dataset::Split::test));
  ledger.write(Stage::split, {}, {out, dataset::meta_path(out)}, {{"dataset_digest", dataset_digest(m)}});
}

void Runner::augment() {
  StageTimer t(Stage::augment);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  ledger.require(Stage::split, "manifest");
  const auto in = manifest_file(dir_);
  const auto m = dataset::load_manifest(in);
  const auto pipe = augment::AugPipeline::standard(cfg_.augment_copies, derive_seed(cfg_.seed, 1));
  const auto out_dir = dir_ / "data" / "augmented";
  if (fs::exists(out_dir)) fs::remove_all(out_dir);
  const auto expanded = augment::generate_offline(m, pipe, out_dir, cfg_.workers);
  const auto out = augmented_manifest_file(dir_);
  dataset::save_manifest(expanded, out);
  log().info("augment: {} training rows from {} originals", expanded.count(dataset::Split::train), m.count(dataset::Split::train));
  ledger.write(Stage::augment, {in}, {out, dataset::meta_path(out)});
}

void Runner::extract() {
  StageTimer t(Stage::extract);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  ledger.require(Stage::augment, "augmented manifest");
  const auto in = augmented_manifest_file(dir_);
  const auto m = dataset::load_manifest(in);

  std::vector<fs::path> outputs;
  json checksums = json::object();
  for (const auto& spec : cfg_.backbones) {
    const auto trunk = backbone::load_trunk(spec);
    checksums[spec.id] = trunk->checksum();
    for (const char* split : kSplits) {
      const auto rows = m.select(dataset::parse_split(split));
      fusion::FeatureMatrix fm;
      fm.backbone_id = spec.id;
      fm.split = split;
      fm.class_names = m.scheme.classes;
      fm.config_hash = hash_;
      fm.rows = backbone::trunk_forward(*trunk, load_images(rows, cfg_.workers), cfg_.workers);
      for (const auto& r : rows) {
        fm.labels.push_back(r.mapped_label);
        fm.sample_ids.push_back(r.path);
      }
      const auto path = trunk_features(dir_, spec.id, split);
      fusion::save_feature_matrix(fm, path);
      outputs.push_back(path);
      outputs.push_back(with_json(path));
      log().info("extract: {} {} -> {} x {}", spec.id, split, fm.rows.rows(), fm.rows.cols());
    }
  }
  ledger.write(Stage::extract, {in}, outputs, {{"trunk_checksums", checksums}});
}

void Runner::train_heads() {
  StageTimer t(Stage::train_head);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  const auto extract_rec = ledger.require(Stage::extract, "trunk features");

  std::vector<fs::path> inputs, outputs;
  for (std::size_t b = 0; b < cfg_.backbones.size(); ++b) {
    const auto& spec = cfg_.backbones[b];
    std::map<std::string, fusion::FeatureMatrix> trunk_rows;
    for (const char* split : kSplits) {
      const auto p = trunk_features(dir_, spec.id, split);
      trunk_rows[split] = load_checked(p, hash_);
      inputs.push_back(p);
    }
    const auto& train = trunk_rows["train"];
    const auto& val = trunk_rows["val"];
    const auto& test = trunk_rows["test"];

    fusion::HeadModel head({spec.id, train.rows.cols(), train.class_names.size(), cfg_.feature_dim, cfg_.head.dropout,
                            derive_seed(cfg_.seed, 100, b)});
    const fusion::Validation validation{&val.rows, &val.labels};

    fusion::EpochInputs epoch_inputs;
    std::unique_ptr<backbone::Trunk> trunk;
    std::vector<Image> train_images;
    if (cfg_.online.enabled) {
      trunk = backbone::load_trunk(spec);
      if (trunk->checksum() != extract_rec.at("trunk_checksums").at(spec.id).get<std::string>())
        throw ValidationError("trunk '" + spec.id + "' differs from the one used by extract; rerun extract");
      const auto m = dataset::load_manifest(augmented_manifest_file(dir_));
      train_images = load_images(m.select(dataset::Split::train), cfg_.workers);
      const std::uint64_t online_seed = derive_seed(cfg_.seed, 400, b);
      epoch_inputs = [&, online_seed](int epoch) {
        const auto batch = augment::online_augment(train_images, cfg_.online, derive_seed(online_seed, epoch));
        return backbone::trunk_forward(*trunk, batch, cfg_.workers);
      };
    }
    const auto history =
        head.train(train.rows, train.labels, schedule(cfg_.head, derive_seed(cfg_.seed, 200, b)), validation, epoch_inputs);
    if (!history.empty())
      log().info("train-head: {} final loss {:.4f}, train acc {:.4f}, val acc {:.4f}", spec.id, history.back().loss,
                 history.back().accuracy, history.back().val_accuracy.value_or(0.0));

    const auto ckpt = dir_ / "heads" / (spec.id + ".ckpt");
    head.save(ckpt);
    const auto hist_path = dir_ / "heads" / (spec.id + ".history.csv");
    write_text(hist_path, history_csv(history));
    outputs.insert(outputs.end(), {ckpt, with_json(ckpt), hist_path});

    const auto pred = head.predict(test.rows);
    const auto pred_path = prediction_file(dir_, spec.id);
    save_predictions(pred_path, {spec.id, test.class_names, test.sample_ids, test.labels, pred.labels, pred.probs, hash_});
    outputs.push_back(pred_path);

    const auto train_feats = head.features(train.rows);
    const auto norm = fusion::Normalization::fit(train_feats);
    for (const char* split : kSplits) {
      const auto& src = trunk_rows[split];
      fusion::FeatureMatrix fm;
      fm.backbone_id = spec.id;
      fm.split = split;
      fm.rows = norm.apply(std::string(split) == "train" ? train_feats : head.features(src.rows));
      fm.labels = src.labels;
      fm.sample_ids = src.sample_ids;
      fm.class_names = src.class_names;
      fm.normalization = norm;
      fm.config_hash = hash_;
      const auto path = head_features(dir_, spec.id, split);
      fusion::save_feature_matrix(fm, path);
      outputs.push_back(path);
      outputs.push_back(with_json(path));
    }
  }
  ledger.write(Stage::train_head, inputs, outputs);
}

void Runner::train_fusion() {
  StageTimer t(Stage::train_fusion);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  ledger.require(Stage::extract, "features");
  ledger.require(Stage::train_head, "head features");
  if (cfg_.backbones.size() < 2) throw ConfigError("backbone: feature fusion needs at least two backbones");

  std::vector<fs::path> inputs;
  std::map<std::string, std::vector<fusion::FeatureMatrix>> blocks;
  for (const char* split : kSplits) {
    for (const auto& spec : cfg_.backbones) {
      const auto p = head_features(dir_, spec.id, split);
      blocks[split].push_back(load_checked(p, hash_));
      inputs.push_back(p);
    }
  }
  const auto x_train = fusion::concat_features(blocks["train"]);
  const auto x_val = fusion::concat_features(blocks["val"]);
  const auto x_test = fusion::concat_features(blocks["test"]);
  const auto& train = blocks["train"].front();
  const auto& val = blocks["val"].front();
  const auto& test = blocks["test"].front();

  std::vector<std::string> ids;
  for (const auto& spec : cfg_.backbones) ids.push_back(spec.id);
  fusion::FusionModel model({ids, train.rows.cols(), train.class_names.size(), cfg_.fusion.dropout, derive_seed(cfg_.seed, 300)});
  const auto history = model.train(x_train, train.labels, schedule(cfg_.fusion, derive_seed(cfg_.seed, 301)),
                                   fusion::Validation{&x_val, &val.labels});
  if (!history.empty())
    log().info("train-fusion: final loss {:.4f}, train acc {:.4f}, val acc {:.4f}", history.back().loss,
               history.back().accuracy, history.back().val_accuracy.value_or(0.0));

  const auto ckpt = dir_ / "fusion" / "hdff.ckpt";
  model.save(ckpt);
  const auto hist_path = dir_ / "fusion" / "hdff.history.csv";
  write_text(hist_path, history_csv(history));
  const auto pred = model.predict(x_test);
  const auto pred_path = prediction_file(dir_, "hdff");
  save_predictions(pred_path, {"hdff", test.class_names, test.sample_ids, test.labels, pred.labels, pred.probs, hash_});
  ledger.write(Stage::train_fusion, inputs, {ckpt, with_json(ckpt), hist_path, pred_path});
}

void Runner::predict_lf() {
  StageTimer t(Stage::predict_lf);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  ledger.require(Stage::train_head, "head predictions");
  std::vector<fs::path> inputs;
  std::vector<PredictionSet> sets;
  for (const auto& spec : cfg_.backbones) {
    const auto p = prediction_file(dir_, spec.id);
    sets.push_back(load_predictions(p));
    inputs.push_back(p);
  }
  std::vector<std::vector<int>> votes;
  std::vector<nn::TensorF> probs;
  for (const auto& s : sets) {
    if (s.sample_ids != sets.front().sample_ids) throw AlignmentError("prediction sets disagree on sample order");
    votes.push_back(s.predicted);
    probs.push_back(s.probs);
  }
  PredictionSet lf = sets.front();
  lf.name = "lf";
  lf.predicted = fusion::majority_vote(votes, probs);
  // mean of the member probabilities, reported alongside the vote
  for (std::size_t i = 0; i < lf.probs.size(); ++i) {
    double sum = 0;
    for (const auto& p : probs) sum += p[i];
    lf.probs[i] = static_cast<float>(sum / static_cast<double>(probs.size()));
  }
  const auto out = prediction_file(dir_, "lf");
  save_predictions(out, lf);
  ledger.write(Stage::predict_lf, inputs, {out});
}

void Runner::eval() {
  StageTimer t(Stage::eval);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  ledger.require(Stage::train_head, "head predictions");
  if (cfg_.backbones.size() >= 2) {
    ledger.require(Stage::predict_lf, "late-fusion predictions");
    ledger.require(Stage::train_fusion, "fusion predictions");
  }
  std::vector<fs::path> inputs, outputs;
  for (const auto& name : model_names()) {
    const auto in = prediction_file(dir_, name);
    const auto p = load_predictions(in);
    if (p.config_hash != hash_) throw ValidationError(in.string() + " was produced by config " + p.config_hash);
    const auto cm = eval::confusion(p.labels, p.predicted, p.classes);
    const auto report = eval::metrics(cm);
    const auto json_path = metrics_file(dir_, name);
    eval::write_metrics_json(json_path, report, cm);
    const auto png = dir_ / "eval" / (name + ".confusion.png");
    eval::write_confusion_png(png, cm, name);
    inputs.push_back(in);
    outputs.insert(outputs.end(), {json_path, png});
    log().info("eval: {} accuracy {:.2f}% ({}/{})", name, eval::rounded_percent(report.correct, report.total),
               report.correct, report.total);
  }
  ledger.write(Stage::eval, inputs, outputs);
}

std::string Runner::report() {
  StageTimer t(Stage::report);
  const Ledger ledger(dir_, hash_, cfg_.seed);
  ledger.require(Stage::eval, "metrics");
  std::vector<eval::Run> runs;
  std::vector<fs::path> inputs;
  for (const auto& name : model_names()) {
    const auto p = metrics_file(dir_, name);
    runs.push_back({name, eval::read_metrics_json(p)});
    inputs.push_back(p);
  }
  const auto cmp = eval::compare(runs);
  const auto out = dir_ / "report";
  eval::write_comparison(out, cmp, "Test accuracy (%)");
  ledger.write(Stage::report, inputs, {out / "comparison.csv", out / "comparison.txt", out / "accuracy.png"});
  return eval::comparison_text(cmp);
}

std::string Runner::run_all() {
  split();
  augment();
  extract();
  train_heads();
  if (cfg_.backbones.size() >= 2) {
    predict_lf();
    train_fusion();
  }
  eval();
  const auto text = report();
  json trunks = json::array();
  for (const auto& c : verify_trunks()) {
    trunks.push_back({{"id", c.id}, {"recorded", c.recorded}, {"current", c.current}, {"unchanged", c.unchanged()}});
    if (!c.unchanged()) log().error("trunk '{}' checksum changed during the run", c.id);
  }
  write_text(dir_ / "report" / "trunks.json", trunks.dump(2) + "\n");
  return text;
}

std::vector<TrunkCheck> Runner::verify_trunks() const {
  const Ledger ledger(dir_, hash_, cfg_.seed);
  const auto rec = ledger.require(Stage::extract, "trunk checksums");
  std::vector<TrunkCheck> out;
  for (const auto& spec : cfg_.backbones) {
    const auto trunk = backbone::load_trunk(spec);
    out.push_back({spec.id, rec.at("trunk_checksums").at(spec.id).get<std::string>(), trunk->checksum()});
  }
  return out;
}

std::vector<fs::path> feature_maps(const ExperimentConfig& cfg, const std::string& backbone_id, const fs::path& image,
                                   const fs::path& out_dir) {
  for (const auto& spec : cfg.backbones) {
    if (spec.id != backbone_id) continue;
    const auto trunk = backbone::load_trunk(spec);
    const auto stages = trunk->stage_names();
    if (stages.empty()) throw ValidationError("backbone '" + backbone_id + "' exposes no intermediate stages");
    return backbone::dump_feature_maps(*trunk, read_image(image), stages, out_dir);
  }
  throw ConfigError("backbone: no backbone with id '" + backbone_id + "'");
}

}  // namespace cervifuse::pipeline
