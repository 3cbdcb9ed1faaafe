#include "cervifuse/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cervifuse/common/error.hpp"

namespace fs = std::filesystem;

namespace cervifuse::eval {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact("metrics file not found: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts)
    for (auto v : row) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                          const std::vector<std::string>& classes) {
  if (truth.size() != predicted.size())
    throw DimensionError("confusion: " + std::to_string(truth.size()) + " labels but " + std::to_string(predicted.size()) +
                         " predictions");
  const int c = static_cast<int>(classes.size());
  if (c == 0) throw InvalidParameter("confusion: no classes");
  ConfusionMatrix cm{classes, std::vector<std::vector<std::uint64_t>>(classes.size(), std::vector<std::uint64_t>(classes.size(), 0))};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= c || p < 0 || p >= c)
      throw InvalidLabel("confusion: label pair (" + std::to_string(t) + ", " + std::to_string(p) + ") at sample " +
                         std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    ++cm.counts[t][p];
  }
  return cm;
}

std::vector<std::string> MetricsReport::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : per_class) out.push_back(c.name);
  return out;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::size_t c = cm.size();
  if (cm.counts.size() != c) throw DimensionError("confusion matrix rows do not match class count");
  for (const auto& row : cm.counts)
    if (row.size() != c) throw DimensionError("confusion matrix is not square");
  const std::uint64_t total = cm.total();
  if (total == 0) throw InvalidParameter("metrics: confusion matrix is empty");

  MetricsReport r;
  r.total = total;
  r.correct = cm.trace();
  r.accuracy = ratio(r.correct, total);
  for (std::size_t k = 0; k < c; ++k) {
    ClassMetrics m;
    m.name = cm.classes[k];
    m.tp = cm.counts[k][k];
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      m.fn += cm.counts[k][j];
      m.fp += cm.counts[j][k];
    }
    m.tn = total - m.tp - m.fn - m.fp;
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.per_class.push_back(std::move(m));
  }
  r.macro_precision /= static_cast<double>(c);
  r.macro_recall /= static_cast<double>(c);
  r.macro_f1 /= static_cast<double>(c);
  return r;
}

double rounded_percent(std::uint64_t correct, std::uint64_t total) {
  if (total == 0) throw InvalidParameter("rounded_percent: zero total");
  const std::uint64_t basis_points = (20000 * correct + total) / (2 * total);
  return static_cast<double>(basis_points) / 100.0;
}

std::string significant(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%#.*g", digits, v);
  return buf;
}

std::string metrics_json(const MetricsReport& r, const ConfusionMatrix& cm) {
  nlohmann::ordered_json j;
  j["classes"] = cm.classes;
  j["confusion"] = cm.counts;
  j["total"] = r.total;
  j["correct"] = r.correct;
  j["accuracy"] = r.accuracy;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  auto& per = j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& m : r.per_class) {
    per.push_back({{"name", m.name},
                   {"tp", m.tp},
                   {"tn", m.tn},
                   {"fp", m.fp},
                   {"fn", m.fn},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1}});
  }
  return j.dump(2) + "\n";
}

MetricsReport parse_metrics_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.total = j.at("total").get<std::uint64_t>();
    r.correct = j.at("correct").get<std::uint64_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_precision = j.at("macro_precision").get<double>();
    r.macro_recall = j.at("macro_recall").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    for (const auto& m : j.at("per_class")) {
      ClassMetrics c;
      c.name = m.at("name").get<std::string>();
      c.tp = m.at("tp").get<std::uint64_t>();
      c.tn = m.at("tn").get<std::uint64_t>();
      c.fp = m.at("fp").get<std::uint64_t>();
      c.fn = m.at("fn").get<std::uint64_t>();
      c.precision = m.at("precision").get<double>();
      c.recall = m.at("recall").get<double>();
      c.f1 = m.at("f1").get<double>();
      r.per_class.push_back(std::move(c));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed metrics json: ") + e.what());
  }
}

void write_metrics_json(const fs::path& path, const MetricsReport& r, const ConfusionMatrix& cm) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << metrics_json(r, cm);
}

MetricsReport read_metrics_json(const fs::path& path) { return parse_metrics_json(read_text(path)); }

void write_confusion_png(const fs::path& path, const ConfusionMatrix& cm, const std::string& title) {
  const int c = static_cast<int>(cm.size());
  const int cell = 64, left = 190, top = 60, right = 20, bottom = 170;
  cv::Mat canvas(top + c * cell + bottom, left + c * cell + right, CV_8UC3, cv::Scalar(255, 255, 255));

  // colour by row-normalized count so small classes stay readable
  cv::Mat level(c, c, CV_8UC1);
  for (int t = 0; t < c; ++t) {
    std::uint64_t row = 0;
    for (auto v : cm.counts[t]) row += v;
    for (int p = 0; p < c; ++p) level.at<std::uint8_t>(t, p) = static_cast<std::uint8_t>(row ? 255 * cm.counts[t][p] / row : 0);
  }
  cv::Mat colours;
  cv::applyColorMap(level, colours, cv::COLORMAP_VIRIDIS);

  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  cv::putText(canvas, title, {10, 30}, font, 0.7, {0, 0, 0}, 1, cv::LINE_AA);
  for (int t = 0; t < c; ++t) {
    for (int p = 0; p < c; ++p) {
      const cv::Rect box(left + p * cell, top + t * cell, cell, cell);
      const auto bgr = colours.at<cv::Vec3b>(t, p);
      cv::rectangle(canvas, box, cv::Scalar(bgr[0], bgr[1], bgr[2]), cv::FILLED);
      cv::rectangle(canvas, box, {255, 255, 255}, 1);
      const std::string text = std::to_string(cm.counts[t][p]);
      const cv::Scalar ink = level.at<std::uint8_t>(t, p) > 140 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255);
      int base = 0;
      const auto sz = cv::getTextSize(text, font, 0.5, 1, &base);
      cv::putText(canvas, text, {box.x + (cell - sz.width) / 2, box.y + (cell + sz.height) / 2}, font, 0.5, ink, 1, cv::LINE_AA);
    }
    cv::putText(canvas, cm.classes[t].substr(0, 22), {8, top + t * cell + cell / 2 + 5}, font, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
  }
  // predicted-class labels written vertically under the grid
  for (int p = 0; p < c; ++p) {
    const std::string label = cm.classes[p].substr(0, 22);
    int base = 0;
    const auto sz = cv::getTextSize(label, font, 0.45, 1, &base);
    cv::Mat strip(sz.height + base + 4, sz.width + 4, CV_8UC3, cv::Scalar(255, 255, 255));
    cv::putText(strip, label, {2, sz.height + 1}, font, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
    cv::Mat rotated;
    cv::rotate(strip, rotated, cv::ROTATE_90_COUNTERCLOCKWISE);
    const int x = left + p * cell + (cell - rotated.cols) / 2;
    const int h = std::min(rotated.rows, bottom - 30);
    rotated(cv::Rect(0, rotated.rows - h, rotated.cols, h)).copyTo(canvas(cv::Rect(x, top + c * cell + 6, rotated.cols, h)));
  }
  cv::putText(canvas, "predicted", {left, canvas.rows - 8}, font, 0.5, {0, 0, 0}, 1, cv::LINE_AA);

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw IoError("cannot write " + path.string());
}

}  // namespace cervifuse::eval
