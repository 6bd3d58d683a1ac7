#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/errors.hpp"

namespace fedmerge {

/// Shortest-faithful decimal for a double: 17 significant digits always
/// round-trip to the same bits.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::optional<double> parse_double(const std::string& cell) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t')) --end;
  if (begin == end) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

inline std::optional<long> parse_label(const std::string& cell) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t')) --end;
  if (begin == end) return std::nullopt;
  long value = 0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

}  // namespace detail

/// Loads a comma-delimited dataset: each row is feature values followed by an
/// integer label; an optional single header line is skipped. class_count is
/// max(label)+1 unless a larger override is given.
inline Dataset load_delimited(const std::filesystem::path& path,
                              int class_count_override = 0) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open dataset file: " + path.string());
  }
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (first_content_line) {
      first_content_line = false;
      bool any_numeric = false;
      for (const auto& c : cells) {
        if (detail::parse_double(c)) any_numeric = true;
      }
      if (!any_numeric) continue;  // header
    }
    if (cells.size() < 2) {
      throw ParseError(line_no, "expected at least one feature and a label");
    }
    if (width == 0) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw ParseError(line_no, "ragged row: expected " + std::to_string(width) +
                                    " cells, got " + std::to_string(cells.size()));
    }
    std::vector<double> feats(cells.size() - 1);
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
      auto v = detail::parse_double(cells[i]);
      if (!v) throw ParseError(line_no, "non-numeric cell '" + cells[i] + "'");
      feats[i] = *v;
    }
    auto lbl = detail::parse_label(cells.back());
    if (!lbl) throw ParseError(line_no, "non-integer label '" + cells.back() + "'");
    if (*lbl < 0) throw ParseError(line_no, "label out of range: " + cells.back());
    rows.push_back(std::move(feats));
    labels.push_back(static_cast<int>(*lbl));
  }
  if (rows.empty()) {
    throw ParseError(line_no == 0 ? 1 : line_no, "no data rows");
  }
  int class_count = 0;
  for (int y : labels) class_count = std::max(class_count, y + 1);
  class_count = std::max(class_count, class_count_override);
  Tensor f({rows.size(), width - 1});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r].begin(), rows[r].end(), f.data.begin() + r * (width - 1));
  }
  return Dataset(std::move(f), std::move(labels), class_count);
}

inline void save_delimited(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write dataset file: " + path.string());
  }
  const std::size_t d = data.feature_dim();
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = data.row(i);
    for (std::size_t j = 0; j < d; ++j) out << format_double(row[j]) << ',';
    out << data.labels[i] << '\n';
  }
}

}  // namespace fedmerge
