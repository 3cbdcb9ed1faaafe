#include "cervifuse/eval/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cervifuse/common/error.hpp"

namespace fs = std::filesystem;

namespace cervifuse::eval {

namespace {

std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  if (quoted) throw ParseError("comparison csv line " + std::to_string(line_no) + ": unterminated quote");
  return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ParseError("comparison csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

constexpr const char* kHeader = "name,avg_precision,avg_recall,avg_f1,accuracy";

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

}  // namespace

Comparison compare(const std::vector<Run>& runs) {
  if (runs.empty()) throw ComparisonError("nothing to compare");
  Comparison c;
  c.classes = runs.front().report.class_names();
  std::set<std::string> seen;
  for (const auto& run : runs) {
    if (run.report.class_names() != c.classes)
      throw ComparisonError("run '" + run.name + "' uses a different class scheme from '" + runs.front().name + "'");
    if (!seen.insert(run.name).second) throw ComparisonError("duplicate run name '" + run.name + "'");
    c.rows.push_back({run.name, run.report.macro_precision, run.report.macro_recall, run.report.macro_f1, run.report.accuracy});
  }
  return c;
}

std::string comparison_csv(const Comparison& c) {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : c.rows)
    out += csv_field(r.name) + "," + full(r.avg_precision) + "," + full(r.avg_recall) + "," + full(r.avg_f1) + "," +
           full(r.accuracy) + "\n";
  return out;
}

std::vector<ReportRow> parse_comparison_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kHeader) throw ParseError("comparison csv: unexpected header");
  std::vector<ReportRow> rows;
  for (std::size_t line_no = 2; std::getline(is, line); ++line_no) {
    if (line.empty()) continue;
    const auto f = split_csv(line, line_no);
    if (f.size() != 5) throw ParseError("comparison csv line " + std::to_string(line_no) + ": expected 5 fields");
    rows.push_back({f[0], parse_double(f[1], line_no), parse_double(f[2], line_no), parse_double(f[3], line_no),
                    parse_double(f[4], line_no)});
  }
  return rows;
}

std::string comparison_text(const Comparison& c) {
  std::size_t w = 5;
  for (const auto& r : c.rows) w = std::max(w, r.name.size());
  auto pad = [](std::string s, std::size_t n) {
    s.resize(std::max(n, s.size()), ' ');
    return s;
  };
  std::string out = pad("Model", w) + "  " + pad("Avg P", 8) + "  " + pad("Avg R", 8) + "  " + pad("Avg F1", 8) + "  Acc\n";
  for (const auto& r : c.rows)
    out += pad(r.name, w) + "  " + pad(significant(r.avg_precision), 8) + "  " + pad(significant(r.avg_recall), 8) + "  " +
           pad(significant(r.avg_f1), 8) + "  " + significant(r.accuracy) + "\n";
  return out;
}

void write_accuracy_chart(const fs::path& path, const Comparison& c, const std::string& title) {
  const int n = static_cast<int>(c.rows.size());
  const int bar = 70, gap = 30, left = 60, top = 60, plot_h = 300, bottom = 60;
  cv::Mat canvas(top + plot_h + bottom, left + n * (bar + gap) + gap, CV_8UC3, cv::Scalar(255, 255, 255));
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  cv::putText(canvas, title, {10, 30}, font, 0.7, {0, 0, 0}, 1, cv::LINE_AA);
  for (int tick = 0; tick <= 100; tick += 20) {
    const int y = top + plot_h - plot_h * tick / 100;
    cv::line(canvas, {left - 5, y}, {canvas.cols - 10, y}, {220, 220, 220}, 1);
    cv::putText(canvas, std::to_string(tick), {10, y + 5}, font, 0.4, {80, 80, 80}, 1, cv::LINE_AA);
  }
  const cv::Scalar palette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214}, {189, 103, 148}, {75, 86, 140}};
  for (int i = 0; i < n; ++i) {
    const auto& r = c.rows[i];
    const int x = left + gap + i * (bar + gap);
    const int h = static_cast<int>(std::lround(plot_h * std::clamp(r.accuracy, 0.0, 1.0)));
    cv::rectangle(canvas, cv::Rect(x, top + plot_h - h, bar, h), palette[i % 6], cv::FILLED);
    char pct[16];
    std::snprintf(pct, sizeof pct, "%.2f", 100.0 * r.accuracy);
    cv::putText(canvas, pct, {x + 6, top + plot_h - h - 6}, font, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
    cv::putText(canvas, r.name.substr(0, 10), {x, top + plot_h + 22}, font, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw IoError("cannot write " + path.string());
}

void write_comparison(const fs::path& dir, const Comparison& c, const std::string& title) {
  write_file(dir / "comparison.csv", comparison_csv(c));
  write_file(dir / "comparison.txt", comparison_text(c));
  write_accuracy_chart(dir / "accuracy.png", c, title);
}

}  // namespace cervifuse::eval
