#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cervifuse/eval/metrics.hpp"

namespace cervifuse::eval {

struct Run {
  std::string name;
  MetricsReport report;
};

/// One table line per run.
struct ReportRow {
  std::string name;
  double avg_precision = 0.0;
  double avg_recall = 0.0;
  double avg_f1 = 0.0;
  double accuracy = 0.0;
  bool operator==(const ReportRow&) const = default;
};

struct Comparison {
  std::vector<std::string> classes;
  std::vector<ReportRow> rows;
};

/// Throws ComparisonError when runs use different class lists or names repeat.
Comparison compare(const std::vector<Run>& runs);

/// Full-precision CSV: name,avg_precision,avg_recall,avg_f1,accuracy.
std::string comparison_csv(const Comparison& c);
std::vector<ReportRow> parse_comparison_csv(const std::string& text);

/// Aligned plain-text table, four significant digits.
std::string comparison_text(const Comparison& c);

/// Accuracy bar chart, one bar per run.
void write_accuracy_chart(const std::filesystem::path& path, const Comparison& c, const std::string& title);

/// Writes comparison.csv, comparison.txt and accuracy.png into dir.
void write_comparison(const std::filesystem::path& dir, const Comparison& c, const std::string& title);

}  // namespace cervifuse::eval
