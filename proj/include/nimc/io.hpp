#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nimc/types.hpp"

namespace nimc {

// Decimal text with enough digits to round-trip doubles exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline double parse_double(const std::string& tok, const std::string& path, long line) {
  const char* s = tok.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0') throw ParseError(path, line, "not a number: '" + tok + "'");
  if (!std::isfinite(v)) throw ParseError(path, line, "non-finite value: '" + tok + "'");
  return v;
}

inline long parse_index(const std::string& tok, const std::string& path, long line) {
  const char* s = tok.c_str();
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (end == s || *end != '\0') throw ParseError(path, line, "not an integer: '" + tok + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  return out;
}

}  // namespace detail

// Matrix file: "# rows cols" header, then `rows` comma-separated lines.
inline void save_matrix(const std::string& path, const Matd& m) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open for writing: " + path);
  f << "# " << m.rows() << " " << m.cols() << "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) f << ",";
      f << format_double(m(i, j));
    }
    f << "\n";
  }
  if (!f) throw Error("write failed: " + path);
}

inline Matd load_matrix(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open: " + path);
  std::string line;
  long lineno = 1;
  if (!std::getline(f, line)) throw ParseError(path, 1, "empty file");
  long rows = 0, cols = 0;
  {
    std::stringstream ss(line);
    std::string hash;
    ss >> hash >> rows >> cols;
    if (hash != "#" || ss.fail() || rows < 1 || cols < 1)
      throw ParseError(path, 1, "expected header '# rows cols'");
  }
  Matd m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    ++lineno;
    if (!std::getline(f, line)) throw ParseError(path, lineno, "unexpected end of file");
    const auto toks = detail::split_csv(line);
    if (static_cast<long>(toks.size()) != cols)
      throw ParseError(path, lineno,
                       "expected " + std::to_string(cols) + " values, got " +
                           std::to_string(toks.size()));
    for (long j = 0; j < cols; ++j) m(i, j) = detail::parse_double(toks[j], path, lineno);
  }
  return m;
}

inline void save_features(const std::string& x_path, const std::string& y_path,
                          const FeatureSetd& fs) {
  save_matrix(x_path, fs.X);
  save_matrix(y_path, fs.Y);
}

inline FeatureSetd load_features(const std::string& x_path, const std::string& y_path) {
  return {load_matrix(x_path), load_matrix(y_path)};
}

// Observation file: "row,col,value" header, one 0-based triple per line.
inline void save_observations(const std::string& path, const ObservationSetd& obs) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open for writing: " + path);
  f << "row,col,value\n";
  for (const auto& o : obs)
    f << o.row << "," << o.col << "," << format_double(o.value) << "\n";
  if (!f) throw Error("write failed: " + path);
}

// Bounds are optional: pass n1 = n2 = 0 to skip the range check.
inline ObservationSetd load_observations(const std::string& path, Index n1 = 0, Index n2 = 0) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open: " + path);
  std::string line;
  long lineno = 1;
  if (!std::getline(f, line) || line != "row,col,value")
    throw ParseError(path, 1, "expected header 'row,col,value'");
  ObservationSetd obs;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto toks = detail::split_csv(line);
    if (toks.size() != 3) throw ParseError(path, lineno, "expected 'row,col,value'");
    const long i = detail::parse_index(toks[0], path, lineno);
    const long j = detail::parse_index(toks[1], path, lineno);
    const double a = detail::parse_double(toks[2], path, lineno);
    if (i < 0 || j < 0 || (n1 > 0 && i >= n1) || (n2 > 0 && j >= n2))
      throw ParseError(path, lineno, "index out of range: (" + toks[0] + "," + toks[1] + ")");
    obs.push_back({static_cast<Index>(i), static_cast<Index>(j), a});
  }
  return obs;
}

}  // namespace nimc
