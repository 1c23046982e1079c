#pragma once

// Plain-text interchange: CSV matrices (one sample per row, optional header)
// and the self-describing model file written by the fit command. Numbers are
// serialized with 17 significant digits so round-trips are exact.

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trex/errors.hpp"
#include "trex/estimators.hpp"
#include "trex/factor_model.hpp"

namespace trex {

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline bool parse_double(const std::string& token, double& out) {
  const char* begin = token.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace detail

/// Reads a numeric CSV matrix. A non-numeric first line is treated as a
/// header and skipped; ragged or non-numeric rows raise ParseError with the
/// 1-based line and column of the offence.
inline Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  Index width = -1;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) {
      if (rows.empty()) continue;  // leading blank lines
      // blank line inside or after the data: accept only at the end
      std::string rest;
      std::getline(in, rest, '\0');
      if (detail::trim(rest).empty()) break;
      throw ParseError("blank line inside matrix", lineno, 1);
    }
    auto fields = detail::split_csv_line(line);
    std::vector<double> row;
    row.reserve(fields.size());
    bool numeric = true;
    int bad_col = 0;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(fields[c], v)) {
        numeric = false;
        bad_col = static_cast<int>(c) + 1;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (first_content_line) {
        first_content_line = false;  // header line
        continue;
      }
      throw ParseError("non-numeric value at line " + std::to_string(lineno) + ", column " +
                           std::to_string(bad_col),
                       lineno, bad_col);
    }
    first_content_line = false;
    if (width < 0) {
      width = static_cast<Index>(row.size());
    } else if (static_cast<Index>(row.size()) != width) {
      throw ParseError("ragged row at line " + std::to_string(lineno) + ": expected " +
                           std::to_string(width) + " fields, got " +
                           std::to_string(row.size()),
                       lineno, static_cast<int>(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no numeric rows in '" + path + "'", lineno, 1);
  Matrix M(static_cast<Index>(rows.size()), width);
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < width; ++j) M(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return M;
}

inline void write_matrix_csv(const std::string& path, const Matrix& M) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'", 0, 0);
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      if (j > 0) out << ',';
      out << detail::format_double(M(i, j));
    }
    out << '\n';
  }
}

/// Contents of a model file: a factor model (F, d) or a dense scatter
/// matrix, plus fit metadata.
struct ModelFile {
  std::string kind;        // "factor" | "scatter"
  std::string estimator;
  std::string termination;
  int outer_iters = 0;
  std::vector<double> objective_trace;
  std::optional<FactorModel> factor;
  std::optional<Matrix> scatter;
};

/// Self-describing text format, version 1:
///
///   trex-model 1
///   kind factor
///   estimator trex
///   termination tolerance-met
///   outer_iters 12
///   n 50
///   r 5
///   objective_trace <k values on one line>
///   d <n values on one line>
///   F            (factor kind: n lines of r values, row-major)
///   ...
///
/// Scatter kind replaces r/d/F with `scatter` followed by n lines of n values.
inline void write_model_file(const std::string& path, const ModelFile& mf) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'", 0, 0);
  out << "trex-model 1\n";
  out << "kind " << mf.kind << '\n';
  out << "estimator " << mf.estimator << '\n';
  out << "termination " << mf.termination << '\n';
  out << "outer_iters " << mf.outer_iters << '\n';
  const Index n = mf.kind == "factor" ? mf.factor->dim() : mf.scatter->rows();
  out << "n " << n << '\n';
  if (mf.kind == "factor") out << "r " << mf.factor->rank() << '\n';
  out << "objective_trace";
  for (double v : mf.objective_trace) out << ' ' << detail::format_double(v);
  out << '\n';
  if (mf.kind == "factor") {
    out << "d";
    for (Index i = 0; i < n; ++i) out << ' ' << detail::format_double(mf.factor->d()[i]);
    out << '\n';
    out << "F\n";
    const Matrix& F = mf.factor->F();
    for (Index i = 0; i < F.rows(); ++i) {
      for (Index j = 0; j < F.cols(); ++j) {
        if (j > 0) out << ' ';
        out << detail::format_double(F(i, j));
      }
      out << '\n';
    }
  } else {
    out << "scatter\n";
    const Matrix& S = *mf.scatter;
    for (Index i = 0; i < S.rows(); ++i) {
      for (Index j = 0; j < S.cols(); ++j) {
        if (j > 0) out << ' ';
        out << detail::format_double(S(i, j));
      }
      out << '\n';
    }
  }
}

inline ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) {
      throw ParseError("unexpected end of model file", lineno, 1);
    }
    ++lineno;
    return line;
  };
  auto expect_key = [&](const std::string& key) -> std::string {
    std::string l = next_line();
    if (l.rfind(key + " ", 0) != 0) {
      throw ParseError("expected '" + key + "' at line " + std::to_string(lineno), lineno, 1);
    }
    return detail::trim(l.substr(key.size() + 1));
  };
  std::string magic = next_line();
  if (magic != "trex-model 1") {
    throw ParseError("not a trex model file (bad magic line)", 1, 1);
  }
  ModelFile mf;
  mf.kind = expect_key("kind");
  if (mf.kind != "factor" && mf.kind != "scatter") {
    throw ParseError("unknown model kind '" + mf.kind + "'", lineno, 1);
  }
  mf.estimator = expect_key("estimator");
  mf.termination = expect_key("termination");
  mf.outer_iters = std::stoi(expect_key("outer_iters"));
  const Index n = std::stol(expect_key("n"));
  Index r = 0;
  if (mf.kind == "factor") r = std::stol(expect_key("r"));

  auto parse_values = [&](const std::string& text, Index expected, const char* what) {
    std::istringstream ss(text);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      if (!detail::parse_double(tok, v)) {
        throw ParseError(std::string("bad number in ") + what, lineno,
                         static_cast<int>(vals.size()) + 1);
      }
      vals.push_back(v);
    }
    if (expected >= 0 && static_cast<Index>(vals.size()) != expected) {
      throw ParseError(std::string(what) + ": expected " + std::to_string(expected) +
                           " values, got " + std::to_string(vals.size()),
                       lineno, 1);
    }
    return vals;
  };

  mf.objective_trace = parse_values(expect_key("objective_trace"), -1, "objective_trace");
  if (mf.kind == "factor") {
    auto dvals = parse_values(expect_key("d"), n, "d");
    std::string header = next_line();
    if (detail::trim(header) != "F") throw ParseError("expected 'F' block", lineno, 1);
    Matrix F(n, r);
    for (Index i = 0; i < n; ++i) {
      auto row = parse_values(next_line(), r, "F row");
      for (Index j = 0; j < r; ++j) F(i, j) = row[static_cast<std::size_t>(j)];
    }
    Vector d(n);
    for (Index i = 0; i < n; ++i) d[i] = dvals[static_cast<std::size_t>(i)];
    mf.factor.emplace(std::move(F), std::move(d));
  } else {
    std::string header = next_line();
    if (detail::trim(header) != "scatter") throw ParseError("expected 'scatter' block", lineno, 1);
    Matrix S(n, n);
    for (Index i = 0; i < n; ++i) {
      auto row = parse_values(next_line(), n, "scatter row");
      for (Index j = 0; j < n; ++j) S(i, j) = row[static_cast<std::size_t>(j)];
    }
    mf.scatter = std::move(S);
  }
  return mf;
}

}  // namespace trex
