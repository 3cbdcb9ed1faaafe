#include "cervifuse/fusion/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cervifuse/common/error.hpp"
#include "cervifuse/common/log.hpp"
#include "cervifuse/nn/checkpoint.hpp"
#include "cervifuse/nn/optim.hpp"

namespace fs = std::filesystem;

namespace cervifuse::fusion {

namespace {

nn::TensorF gather_rows(const nn::TensorF& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.cols();
  nn::TensorF out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = x.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

int argmax(std::span<const float> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::pair<double, double> score(const Prediction& p, const std::vector<int>& labels) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    loss -= std::log(std::max(static_cast<double>(p.probs.at(i, labels[i])), 1e-12));
    correct += p.labels[i] == labels[i];
  }
  const double n = static_cast<double>(labels.size());
  return {loss / n, static_cast<double>(correct) / n};
}

void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw InvalidLabel("label " + std::to_string(l) + " out of range");
}

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }

nlohmann::json read_sidecar(const fs::path& path, const char* kind) {
  std::ifstream is(sidecar(path));
  if (!is) throw LoadError("missing model sidecar " + sidecar(path).string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed model sidecar " + sidecar(path).string() + ": " + e.what());
  }
  if (j.value("kind", std::string()) != kind)
    throw LoadError(sidecar(path).string() + " does not describe a " + kind + " model");
  return j;
}

void write_sidecar(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream os(sidecar(path));
  if (!os) throw IoError("cannot write " + sidecar(path).string());
  os << j.dump(2) << '\n';
}

}  // namespace

int Schedule::total_epochs() const {
  int n = 0;
  for (const auto& p : phases) n += p.epochs;
  return n;
}

void Schedule::validate() const {
  if (batch_size < 2) throw InvalidParameter("batch size must be at least 2");
  for (const auto& p : phases) {
    if (p.epochs < 0) throw InvalidParameter("phase epochs must be >= 0");
    if (!(p.lr > 0)) throw InvalidParameter("phase learning rate must be positive");
  }
}

History train_network(nn::Network<float>& net, const nn::TensorF& x, const std::vector<int>& labels,
                      const Schedule& schedule, const Validation& val, const EpochInputs& inputs) {
  schedule.validate();
  nn::require_matrix(x, "training input");
  const std::size_t n = x.rows();
  if (labels.size() != n) throw DimensionError("label count does not match training rows");
  History history;
  if (schedule.total_epochs() == 0) return history;
  if (n < 2) throw BatchTooSmall("training needs at least 2 rows");

  nn::AdamState<float> adam;
  auto params = net.parameters();
  std::vector<std::size_t> order(n);
  int epoch = 0;
  for (const auto& phase : schedule.phases) {
    adam.lr = phase.lr;
    for (int e = 0; e < phase.epochs; ++e) {
      ++epoch;
      nn::TensorF provided;
      if (inputs) {
        provided = inputs(epoch);
        if (provided.shape() != x.shape()) throw DimensionError("epoch inputs changed shape");
      }
      const nn::TensorF& xe = inputs ? provided : x;

      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(schedule.seed, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(std::span<std::size_t>(order));

      double loss_sum = 0.0;
      std::size_t correct = 0;
      for (std::size_t start = 0; start < n;) {
        std::size_t end = std::min(n, start + schedule.batch_size);
        if (n - end == 1) end = n;
        const std::span<const std::size_t> idx(order.data() + start, end - start);
        const auto xb = gather_rows(xe, idx);
        std::vector<int> lb(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) lb[i] = labels[idx[i]];

        const auto logits = net.forward(xb, nn::Mode::train);
        const auto sce = nn::softmax_cross_entropy(logits, lb);
        if (!std::isfinite(sce.loss)) throw DivergenceError("training loss is not finite", epoch);
        net.backward(sce.grad_logits);
        nn::adam_step(params, adam);

        loss_sum += sce.loss * static_cast<double>(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) correct += argmax(sce.probs.row(i)) == lb[i];
        start = end;
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.lr = phase.lr;
      rec.loss = loss_sum / static_cast<double>(n);
      rec.accuracy = static_cast<double>(correct) / static_cast<double>(n);
      if (val.x && val.labels && !val.labels->empty()) {
        const auto [vl, va] = score(predict(net, *val.x), *val.labels);
        rec.val_loss = vl;
        rec.val_accuracy = va;
      }
      history.push_back(rec);
    }
  }
  net.clear_caches();
  return history;
}

Prediction predict(nn::Network<float>& net, const nn::TensorF& x, std::size_t chunk) {
  nn::require_matrix(x, "prediction input");
  const std::size_t n = x.rows();
  Prediction p;
  std::size_t classes = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto probs = nn::softmax(net.forward(gather_rows(x, idx), nn::Mode::infer));
    if (p.probs.empty()) {
      classes = probs.cols();
      p.probs = nn::TensorF({n, classes});
    }
    std::copy(probs.data().begin(), probs.data().end(), p.probs.data().begin() + static_cast<std::ptrdiff_t>(start * classes));
  }
  net.clear_caches();
  p.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.labels[i] = argmax(p.probs.row(i));
  return p;
}

HeadModel::HeadModel(HeadConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.input_dim == 0 || cfg_.feature_dim == 0) throw InvalidParameter("head dimensions must be positive");
  if (cfg_.classes < 2) throw InvalidParameter("a head needs at least 2 classes");
  net_ = head_network<float>(cfg_.input_dim, cfg_.classes, cfg_.seed, cfg_.dropout, cfg_.feature_dim);
}

History HeadModel::train(const nn::TensorF& x, const std::vector<int>& labels, const Schedule& schedule,
                         const Validation& val, const EpochInputs& inputs) {
  nn::require_matrix(x, "head input");
  if (x.cols() != cfg_.input_dim)
    throw DimensionError("head '" + cfg_.backbone_id + "' expects width " + std::to_string(cfg_.input_dim) + ", got " +
                         std::to_string(x.cols()));
  check_labels(labels, x.rows(), cfg_.classes);
  auto h = train_network(net_, x, labels, schedule, val, inputs);
  trained_ = true;
  return h;
}

nn::TensorF HeadModel::features(const nn::TensorF& trunk_features, std::size_t chunk) {
  if (!trained_) throw StateError("head '" + cfg_.backbone_id + "' must be trained before extracting features");
  nn::require_matrix(trunk_features, "head input");
  if (trunk_features.cols() != cfg_.input_dim) throw DimensionError("head input width mismatch");
  const std::size_t n = trunk_features.rows();
  nn::TensorF out({n, cfg_.feature_dim});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto f = net_.forward_range(gather_rows(trunk_features, idx), nn::Mode::infer, 0, 2);
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * cfg_.feature_dim));
  }
  net_.clear_caches();
  return out;
}

Prediction HeadModel::predict(const nn::TensorF& trunk_features) {
  if (trunk_features.rank() != 2 || trunk_features.cols() != cfg_.input_dim)
    throw DimensionError("head '" + cfg_.backbone_id + "' expects width " + std::to_string(cfg_.input_dim));
  return fusion::predict(net_, trunk_features);
}

void HeadModel::save(const fs::path& path) {
  nn::save_checkpoint(path, nn::network_state(net_));
  nlohmann::ordered_json j;
  j["kind"] = "head";
  j["backbone_id"] = cfg_.backbone_id;
  j["input_dim"] = cfg_.input_dim;
  j["classes"] = cfg_.classes;
  j["feature_dim"] = cfg_.feature_dim;
  j["dropout"] = cfg_.dropout;
  j["seed"] = cfg_.seed;
  j["trained"] = trained_;
  write_sidecar(path, j);
}

HeadModel HeadModel::load(const fs::path& path) {
  const auto j = read_sidecar(path, "head");
  HeadConfig cfg;
  try {
    cfg.backbone_id = j.at("backbone_id").get<std::string>();
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed head sidecar: " + std::string(e.what()));
  }
  HeadModel m(cfg);
  nn::load_network_state(m.net_, nn::load_checkpoint(path));
  m.trained_ = j.value("trained", false);
  return m;
}

FusionModel::FusionModel(FusionConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.backbone_ids.size() < 2) throw InvalidParameter("fusion needs at least 2 feature blocks");
  if (cfg_.block_dim == 0) throw InvalidParameter("fusion block width must be positive");
  if (cfg_.classes < 2) throw InvalidParameter("fusion needs at least 2 classes");
  net_ = fusion_network<float>(cfg_.input_dim(), cfg_.classes, cfg_.seed, cfg_.dropout);
}

History FusionModel::train(const nn::TensorF& x, const std::vector<int>& labels, const Schedule& schedule,
                           const Validation& val) {
  nn::require_matrix(x, "fusion input");
  if (x.cols() != cfg_.input_dim())
    throw DimensionError("fusion expects width " + std::to_string(cfg_.input_dim()) + ", got " + std::to_string(x.cols()));
  check_labels(labels, x.rows(), cfg_.classes);
  auto h = train_network(net_, x, labels, schedule, val);
  trained_ = true;
  return h;
}

Prediction FusionModel::predict(const nn::TensorF& x) {
  if (x.rank() != 2 || x.cols() != cfg_.input_dim())
    throw DimensionError("fusion expects width " + std::to_string(cfg_.input_dim()));
  return fusion::predict(net_, x);
}

void FusionModel::save(const fs::path& path) {
  nn::save_checkpoint(path, nn::network_state(net_));
  nlohmann::ordered_json j;
  j["kind"] = "fusion";
  j["backbone_ids"] = cfg_.backbone_ids;
  j["block_dim"] = cfg_.block_dim;
  j["classes"] = cfg_.classes;
  j["dropout"] = cfg_.dropout;
  j["seed"] = cfg_.seed;
  j["trained"] = trained_;
  write_sidecar(path, j);
}

FusionModel FusionModel::load(const fs::path& path) {
  const auto j = read_sidecar(path, "fusion");
  FusionConfig cfg;
  try {
    cfg.backbone_ids = j.at("backbone_ids").get<std::vector<std::string>>();
    cfg.block_dim = j.at("block_dim").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed fusion sidecar: " + std::string(e.what()));
  }
  FusionModel m(cfg);
  nn::load_network_state(m.net_, nn::load_checkpoint(path));
  m.trained_ = j.value("trained", false);
  return m;
}

std::vector<int> majority_vote(const std::vector<std::vector<int>>& votes, const std::vector<nn::TensorF>& probs) {
  if (votes.empty()) throw InvalidParameter("majority vote needs at least one model");
  if (probs.size() != votes.size()) throw DimensionError("one probability matrix per voter required");
  const std::size_t m = votes.size(), n = votes[0].size();
  const std::size_t c = probs[0].rank() == 2 ? probs[0].cols() : 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (votes[k].size() != n) throw DimensionError("voters disagree on sample count");
    if (probs[k].rank() != 2 || probs[k].rows() != n || probs[k].cols() != c)
      throw DimensionError("probability matrices must all be N x C");
  }
  std::vector<int> out(n);
  std::vector<int> counts(c);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t k = 0; k < m; ++k) {
      const int v = votes[k][i];
      if (v < 0 || static_cast<std::size_t>(v) >= c) throw InvalidLabel("vote " + std::to_string(v) + " out of range");
      ++counts[v];
    }
    const int top = *std::max_element(counts.begin(), counts.end());
    int best = -1;
    double best_conf = -1.0;
    for (std::size_t cls = 0; cls < c; ++cls) {
      if (counts[cls] != top) continue;
      double conf = 0.0;
      for (std::size_t k = 0; k < m; ++k) conf += probs[k].at(i, cls);
      conf /= static_cast<double>(m);
      if (conf > best_conf) {
        best_conf = conf;
        best = static_cast<int>(cls);
      }
    }
    out[i] = best;
  }
  return out;
}

}  // namespace cervifuse::fusion
