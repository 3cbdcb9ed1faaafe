#include "cervifuse/fusion/features.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "cervifuse/common/binary_io.hpp"
#include "cervifuse/common/error.hpp"

namespace fs = std::filesystem;

namespace cervifuse::fusion {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'X', '1'};

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }

}  // namespace

Normalization Normalization::fit(const nn::TensorF& rows) {
  nn::require_matrix(rows, "normalization input");
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n == 0) throw DimensionError("cannot fit normalization on zero rows");
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = rows.at(i, j) - mean[j];
      var[j] += c * c;
    }
  Normalization out;
  out.mean.resize(d);
  out.std.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double s = std::sqrt(var[j] / static_cast<double>(n));
    out.mean[j] = static_cast<float>(mean[j]);
    out.std[j] = s > 0.0 ? static_cast<float>(s) : 1.0f;
  }
  return out;
}

nn::TensorF Normalization::apply(const nn::TensorF& rows) const {
  nn::require_matrix(rows, "normalization input");
  if (rows.cols() != mean.size()) throw DimensionError("normalization width mismatch");
  nn::TensorF out(rows.shape());
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t j = 0; j < rows.cols(); ++j)
      out.at(i, j) = static_cast<float>((static_cast<double>(rows.at(i, j)) - mean[j]) / std[j]);
  return out;
}

void FeatureMatrix::validate() const {
  nn::require_matrix(rows, "feature matrix");
  if (rows.rows() != labels.size() || sample_ids.size() != labels.size())
    throw DimensionError("feature matrix '" + backbone_id + "': rows, labels and sample ids disagree");
  if (!normalization.mean.empty() && normalization.mean.size() != rows.cols())
    throw DimensionError("feature matrix '" + backbone_id + "': normalization width mismatch");
  if (!rows.all_finite()) throw DimensionError("feature matrix '" + backbone_id + "' holds non-finite values");
}

void save_feature_matrix(const FeatureMatrix& m, const fs::path& path) {
  m.validate();
  if (m.rows.rows() > std::numeric_limits<std::uint32_t>::max() || m.rows.cols() > std::numeric_limits<std::uint32_t>::max())
    throw DimensionError("feature matrix too large for the store");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    binary::write_bytes(os, kMagic, 4);
    binary::write(os, static_cast<std::uint32_t>(m.rows.rows()));
    binary::write(os, static_cast<std::uint32_t>(m.rows.cols()));
    binary::write_bytes(os, m.rows.data().data(), m.rows.size() * sizeof(float));
    if (!os) throw IoError("write failed for " + path.string());
  }
  nlohmann::ordered_json j;
  j["backbone_id"] = m.backbone_id;
  j["split"] = m.split;
  j["labels"] = m.labels;
  j["sample_ids"] = m.sample_ids;
  j["class_names"] = m.class_names;
  j["normalization"] = {{"method", "zscore"}, {"mean", m.normalization.mean}, {"std", m.normalization.std}};
  j["config_hash"] = m.config_hash;
  std::ofstream js(sidecar(path));
  if (!js) throw IoError("cannot write " + sidecar(path).string());
  js << j.dump(1) << '\n';
}

FeatureMatrix load_feature_matrix(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact("feature matrix not found: " + path.string());
  char magic[4];
  binary::read_bytes(is, magic, 4, "feature matrix magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError(path.string() + " is not a feature matrix");
  const auto rows = binary::read<std::uint32_t>(is, "row count");
  const auto cols = binary::read<std::uint32_t>(is, "column count");
  FeatureMatrix m;
  m.rows = nn::TensorF({rows, cols});
  binary::read_bytes(is, m.rows.data().data(), m.rows.size() * sizeof(float), "feature payload");
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + " has trailing bytes");

  std::ifstream js(sidecar(path));
  if (!js) throw MissingArtifact("feature matrix sidecar not found: " + sidecar(path).string());
  try {
    const auto j = nlohmann::json::parse(js);
    m.backbone_id = j.at("backbone_id").get<std::string>();
    m.split = j.at("split").get<std::string>();
    m.labels = j.at("labels").get<std::vector<int>>();
    m.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.normalization.mean = j.at("normalization").at("mean").get<std::vector<float>>();
    m.normalization.std = j.at("normalization").at("std").get<std::vector<float>>();
    m.config_hash = j.value("config_hash", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed feature sidecar " + sidecar(path).string() + ": " + e.what());
  }
  m.validate();
  return m;
}

nn::TensorF concat_features(const std::vector<const FeatureMatrix*>& blocks) {
  if (blocks.empty()) throw InvalidParameter("nothing to concatenate");
  const FeatureMatrix& first = *blocks.front();
  const std::size_t n = first.rows.rows();
  std::size_t width = 0;
  for (const auto* b : blocks) {
    nn::require_matrix(b->rows, "feature block");
    if (b->rows.rows() != n)
      throw AlignmentError("block '" + b->backbone_id + "' has " + std::to_string(b->rows.rows()) + " rows, expected " +
                           std::to_string(n));
    if (b->sample_ids != first.sample_ids) throw AlignmentError("block '" + b->backbone_id + "' is not in the same sample order");
    if (b->labels != first.labels) throw AlignmentError("block '" + b->backbone_id + "' disagrees on labels");
    width += b->rows.cols();
  }
  nn::TensorF out({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = out.row(i).begin();
    for (const auto* b : blocks) {
      const auto src = b->rows.row(i);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

nn::TensorF concat_features(const std::vector<FeatureMatrix>& blocks) {
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& b : blocks) ptrs.push_back(&b);
  return concat_features(ptrs);
}

}  // namespace cervifuse::fusion
