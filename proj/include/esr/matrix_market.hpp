// Copyright 2026 The esr-pcg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "esr/sparse.hpp"

namespace esr {

namespace detail {

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace detail

/// Reads a coordinate Matrix Market stream (real or integer field, general or
/// symmetric). Symmetric files are expanded to full storage and duplicate
/// entries are summed. Indices on disk are 1-based.
inline SparseMatrix parse_matrix_market(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw ParseError(1, "empty input");
  ++line_no;
  std::istringstream header(line);
  std::string banner, object, format, field, symmetry;
  header >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket") throw ParseError(line_no, "missing %%MatrixMarket banner");
  object = detail::lowercase(object);
  format = detail::lowercase(format);
  field = detail::lowercase(field);
  symmetry = detail::lowercase(symmetry);
  if (object != "matrix") throw ParseError(line_no, "unsupported object '" + object + "'");
  if (format != "coordinate") throw ParseError(line_no, "unsupported format '" + format + "'");
  if (field != "real" && field != "integer" && field != "double") {
    throw ParseError(line_no, "unsupported field '" + field + "' (need real)");
  }
  bool symmetric = false;
  if (symmetry == "symmetric") {
    symmetric = true;
  } else if (symmetry != "general") {
    throw ParseError(line_no, "unsupported symmetry '" + symmetry + "'");
  }

  // Size line, after any comments.
  Index rows = 0, cols = 0;
  std::size_t entries = 0;
  bool have_size = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '%') continue;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    long long r = -1, c = -1, e = -1;
    if (!(ss >> r >> c >> e) || r <= 0 || c <= 0 || e < 0) throw ParseError(line_no, "malformed size line");
    rows = static_cast<Index>(r);
    cols = static_cast<Index>(c);
    entries = static_cast<std::size_t>(e);
    have_size = true;
    break;
  }
  if (!have_size) throw ParseError(line_no, "missing size line");
  if (symmetric && rows != cols) throw ParseError(line_no, "symmetric matrix must be square");

  std::vector<Triplet> triplets;
  triplets.reserve(symmetric ? 2 * entries : entries);
  std::size_t read = 0;
  while (read < entries && std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '%') continue;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    long long r = 0, c = 0;
    double v = 0.0;
    if (!(ss >> r >> c >> v)) throw ParseError(line_no, "malformed entry");
    if (r < 1 || c < 1 || static_cast<Index>(r) > rows || static_cast<Index>(c) > cols) {
      throw ParseError(line_no, "index out of bounds");
    }
    const Index i = static_cast<Index>(r - 1);
    const Index j = static_cast<Index>(c - 1);
    triplets.push_back({i, j, v});
    if (symmetric && i != j) triplets.push_back({j, i, v});
    ++read;
  }
  if (read != entries) throw ParseError(line_no, "expected " + std::to_string(entries) + " entries, got " +
                                                     std::to_string(read));
  return SparseMatrix::from_triplets(rows, cols, std::move(triplets));
}

inline SparseMatrix parse_matrix_market(const std::string& text) {
  std::istringstream in(text);
  return parse_matrix_market(in);
}

inline SparseMatrix load_matrix_market(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open matrix file '" + path + "'");
  return parse_matrix_market(in);
}

/// Writes general coordinate form with round-trip precision.
inline void write_matrix_market(std::ostream& out, const SparseMatrix& a) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << a.n_rows << ' ' << a.n_cols << ' ' << a.nnz() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Index r = 0; r < a.n_rows; ++r) {
    const auto cols = a.row_cols(r);
    const auto vals = a.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) out << r + 1 << ' ' << cols[k] + 1 << ' ' << vals[k] << '\n';
  }
}

}  // namespace esr
