#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cervifuse::eval {

/// Rows are the true class, columns the prediction.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::uint64_t>> counts;

  std::size_t size() const { return classes.size(); }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws InvalidLabel for labels outside [0, classes.size()).
ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                          const std::vector<std::string>& classes);

/// One-vs-rest figures for a single class. 0/0 is reported as 0.
struct ClassMetrics {
  std::string name;
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool operator==(const ClassMetrics&) const = default;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;

  std::vector<std::string> class_names() const;
  bool operator==(const MetricsReport&) const = default;
};

/// Throws InvalidParameter on an empty matrix.
MetricsReport metrics(const ConfusionMatrix& cm);

/// Accuracy as a percentage rounded half up to two decimals, computed on
/// the integer counts (e.g. 651/652 -> 99.85).
double rounded_percent(std::uint64_t correct, std::uint64_t total);

/// Formats with the given number of significant digits.
std::string significant(double v, int digits = 4);

std::string metrics_json(const MetricsReport& r, const ConfusionMatrix& cm);
MetricsReport parse_metrics_json(const std::string& text);
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& r, const ConfusionMatrix& cm);
MetricsReport read_metrics_json(const std::filesystem::path& path);

/// Confusion matrix rendered as a heatmap with counts in every cell.
void write_confusion_png(const std::filesystem::path& path, const ConfusionMatrix& cm, const std::string& title);

}  // namespace cervifuse::eval
