#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"
#include "unfolding.hpp"

namespace blockunfold::io {

/// Shortest round-trip form (17 significant digits); inf/nan spelled out.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Error("cannot parse number '" + s + "'");
  }
  if (used != s.size()) throw Error("cannot parse number '" + s + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Matrix text format: a "rows cols" header line, then one line per row of
// whitespace-separated values with 17 significant digits.

inline void write_matrix(std::ostream& os, const Matrix& a) {
  os << a.rows() << ' ' << a.cols() << '\n';
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) os << (j ? " " : "") << format_double(a(i, j));
    os << '\n';
  }
}

inline Matrix read_matrix(std::istream& is) {
  long rows = -1, cols = -1;
  if (!(is >> rows >> cols) || rows < 0 || cols < 0) throw Error("matrix: bad header");
  Matrix a(rows, cols);
  std::string tok;
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      if (!(is >> tok)) throw Error("matrix: truncated payload");
      a(i, j) = parse_double(tok);
    }
  return a;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("missing or unreadable file: " + path.string());
  return is;
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& a) {
  auto os = open_out(path);
  write_matrix(os, a);
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_matrix(is);
}

// ---------------------------------------------------------------------------
// Checkpoint format:
//   blockunfold-checkpoint 1
//   variant <tag>
//   layers <K>
//   blocks <n> <d>
//   D            followed by a matrix
//   alpha <K values>
//   gamma <count> <values>
//   S <count>    followed by that many matrices
//   B <count>    followed by that many matrices

inline void write_checkpoint(std::ostream& os, const NetworkParams& p) {
  p.validate();
  os << "blockunfold-checkpoint 1\n";
  os << "variant " << to_string(p.variant) << '\n';
  os << "layers " << p.layers() << '\n';
  os << "blocks " << p.shape.n << ' ' << p.shape.d << '\n';
  os << "D\n";
  write_matrix(os, p.D);
  os << "alpha";
  for (double a : p.alpha) os << ' ' << format_double(a);
  os << "\ngamma " << p.gamma.size();
  for (double g : p.gamma) os << ' ' << format_double(g);
  os << "\nS " << p.S.size() << '\n';
  for (const auto& s : p.S) write_matrix(os, s);
  os << "B " << p.B.size() << '\n';
  for (const auto& b : p.B) write_matrix(os, b);
}

inline NetworkParams read_checkpoint(std::istream& is) {
  auto expect = [&](const std::string& word) {
    std::string tok;
    if (!(is >> tok) || tok != word) throw Error("checkpoint: expected '" + word + "'");
  };
  auto read_double = [&] {
    std::string tok;
    if (!(is >> tok)) throw Error("checkpoint: truncated");
    return parse_double(tok);
  };
  expect("blockunfold-checkpoint");
  int version = 0;
  if (!(is >> version) || version != 1) throw Error("checkpoint: unsupported version");
  NetworkParams p;
  std::string tag;
  expect("variant");
  is >> tag;
  p.variant = parse_variant(tag);
  long K = 0, count = 0;
  expect("layers");
  if (!(is >> K) || K < 0) throw Error("checkpoint: bad layer count");
  expect("blocks");
  if (!(is >> p.shape.n >> p.shape.d)) throw Error("checkpoint: bad block shape");
  expect("D");
  p.D = read_matrix(is);
  expect("alpha");
  for (long k = 0; k < K; ++k) p.alpha.push_back(read_double());
  expect("gamma");
  if (!(is >> count) || count < 0) throw Error("checkpoint: bad gamma count");
  for (long k = 0; k < count; ++k) p.gamma.push_back(read_double());
  expect("S");
  if (!(is >> count) || count < 0) throw Error("checkpoint: bad S count");
  for (long k = 0; k < count; ++k) p.S.push_back(read_matrix(is));
  expect("B");
  if (!(is >> count) || count < 0) throw Error("checkpoint: bad B count");
  for (long k = 0; k < count; ++k) p.B.push_back(read_matrix(is));
  p.validate();
  return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const NetworkParams& p) {
  auto os = open_out(path);
  write_checkpoint(os, p);
}

inline NetworkParams load_checkpoint(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_checkpoint(is);
}

// ---------------------------------------------------------------------------
// CSV with a leading "# schema: <name>/<version>" comment line.

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& schema, const std::vector<std::string>& columns)
      : os_(open_out(path)), width_(columns.size()) {
    os_ << "# schema: " << schema << '\n';
    row_strings(columns);
  }

  template <class... Cells>
  void row(const Cells&... cells) {
    if (sizeof...(cells) != width_) throw Error("csv: row width does not match header");
    std::vector<std::string> out{cell(cells)...};
    row_strings(out);
  }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double v) { return format_double(v); }
  template <class I, std::enable_if_t<std::is_integral_v<I>, int> = 0>
  static std::string cell(I v) { return std::to_string(v); }

  void row_strings(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
  }

  std::ofstream os_;
  size_t width_;
};

}  // namespace blockunfold::io
