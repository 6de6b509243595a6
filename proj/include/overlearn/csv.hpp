#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "overlearn/common.hpp"
#include "overlearn/error.hpp"

namespace overlearn {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& cell, const std::string& context) {
  const std::string t = trim(cell);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size())
    throw ParseError(context + ": not a number: '" + cell + "'");
  return v;
}

inline long parse_long(const std::string& cell, const std::string& context) {
  const std::string t = trim(cell);
  char* end = nullptr;
  const long v = std::strtol(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size())
    throw ParseError(context + ": not an integer: '" + cell + "'");
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // raw cells, caller types them
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  for (auto& h : split_csv_line(line)) t.header.push_back(trim(h));
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    t.rows.push_back(split_csv_line(line));
  }
  return t;
}

/// Writes a matrix as CSV with columns named `<prefix>0..<prefix>{d-1}`.
inline void write_matrix_csv(const std::string& path, const Matrix& m,
                             const std::string& prefix) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    out << (j ? "," : "") << prefix << j;
  out << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out << (j ? "," : "") << format_double(m(i, j));
    out << "\n";
  }
}

inline Matrix read_matrix_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const auto cols = static_cast<Eigen::Index>(t.header.size());
  Matrix m(static_cast<Eigen::Index>(t.rows.size()), cols);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (static_cast<Eigen::Index>(t.rows[i].size()) != cols)
      throw ParseError(path + ": row " + std::to_string(i + 2) + " has " +
                       std::to_string(t.rows[i].size()) + " cells, expected " +
                       std::to_string(cols));
    for (Eigen::Index j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), j) =
          parse_double(t.rows[i][static_cast<std::size_t>(j)],
                       path + ": row " + std::to_string(i + 2));
  }
  return m;
}

/// Single-column integer label CSV (header names the column).
inline void write_labels_csv(const std::string& path, const std::vector<int>& labels,
                             const std::string& column = "s") {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << column << "\n";
  for (int v : labels) out << v << "\n";
}

inline std::vector<int> read_labels_csv(const std::string& path,
                                        const std::string& column = "s") {
  const CsvTable t = read_csv(path);
  std::size_t col = t.header.size();
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] == column) col = j;
  if (col == t.header.size())
    throw ParseError(path + ": missing column '" + column + "'");
  std::vector<int> labels;
  labels.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (col >= t.rows[i].size())
      throw ParseError(path + ": row " + std::to_string(i + 2) + " too short");
    labels.push_back(static_cast<int>(
        parse_long(t.rows[i][col], path + ": row " + std::to_string(i + 2))));
  }
  return labels;
}

}  // namespace overlearn
