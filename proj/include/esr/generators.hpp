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

#include <cstdint>
#include <cstdlib>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "esr/sparse.hpp"

namespace esr {

/// tridiag(−1, 2, −1) of size n.
inline SparseMatrix laplace1d(Index n) {
  if (n == 0) throw InvalidArgument("laplace1d: n must be positive");
  std::vector<Triplet> t;
  t.reserve(3 * n);
  for (Index i = 0; i < n; ++i) {
    if (i > 0) t.push_back({i, i - 1, -1.0});
    t.push_back({i, i, 2.0});
    if (i + 1 < n) t.push_back({i, i + 1, -1.0});
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

/// 5-point stencil on a k×k grid, natural ordering, n = k².
inline SparseMatrix laplace2d(Index k) {
  if (k == 0) throw InvalidArgument("laplace2d: k must be positive");
  const Index n = k * k;
  std::vector<Triplet> t;
  t.reserve(5 * n);
  for (Index gy = 0; gy < k; ++gy) {
    for (Index gx = 0; gx < k; ++gx) {
      const Index i = gy * k + gx;
      if (gy > 0) t.push_back({i, i - k, -1.0});
      if (gx > 0) t.push_back({i, i - 1, -1.0});
      t.push_back({i, i, 4.0});
      if (gx + 1 < k) t.push_back({i, i + 1, -1.0});
      if (gy + 1 < k) t.push_back({i, i + k, -1.0});
    }
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

/// Full band of half-bandwidth b with off-diagonals −1/|i−j| and diagonal
/// (1+δ)·Σ|off-diagonal| (1 for an empty row), hence strictly diagonally dominant.
inline SparseMatrix band(Index n, Index half_bandwidth, double dominance) {
  if (n == 0) throw InvalidArgument("band: n must be positive");
  if (!(dominance > 0.0)) throw InvalidArgument("band: dominance must be positive");
  std::vector<Triplet> t;
  t.reserve(n * (2 * std::min(half_bandwidth, n) + 1));
  for (Index i = 0; i < n; ++i) {
    const Index lo = i >= half_bandwidth ? i - half_bandwidth : 0;
    const Index hi = std::min(n - 1, i + half_bandwidth);
    double offsum = 0.0;
    for (Index j = lo; j <= hi; ++j) {
      if (j == i) continue;
      const double v = -1.0 / static_cast<double>(j > i ? j - i : i - j);
      t.push_back({i, j, v});
      offsum += -v;
    }
    t.push_back({i, i, offsum > 0.0 ? (1.0 + dominance) * offsum : 1.0});
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

/// Dense SPD matrix: 1/(1+|i−j|) off the diagonal, n on it.
inline SparseMatrix dense_spd(Index n) {
  if (n == 0) throw InvalidArgument("dense: n must be positive");
  std::vector<Triplet> t;
  t.reserve(n * n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double v = i == j ? static_cast<double>(n) : 1.0 / static_cast<double>(1 + (j > i ? j - i : i - j));
      t.push_back({i, j, v});
    }
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  return out;
}

inline Index parse_count(const std::string& s, const std::string& spec) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || v < 0) throw InvalidArgument("bad generator spec '" + spec + "'");
  return static_cast<Index>(v);
}

inline double parse_real(const std::string& s, const std::string& spec) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw InvalidArgument("bad generator spec '" + spec + "'");
  return v;
}

}  // namespace detail

/// Parses "laplace1d:N", "laplace2d:K", "band:N,B,DELTA" or "dense:N".
inline SparseMatrix generate_matrix(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw InvalidArgument("bad generator spec '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  const auto args = detail::split(spec.substr(colon + 1), ',');
  if (kind == "laplace1d" && args.size() == 1) return laplace1d(detail::parse_count(args[0], spec));
  if (kind == "laplace2d" && args.size() == 1) return laplace2d(detail::parse_count(args[0], spec));
  if (kind == "dense" && args.size() == 1) return dense_spd(detail::parse_count(args[0], spec));
  if (kind == "band" && args.size() == 3) {
    return band(detail::parse_count(args[0], spec), detail::parse_count(args[1], spec),
                detail::parse_real(args[2], spec));
  }
  throw InvalidArgument("bad generator spec '" + spec + "'");
}

/// Uniform doubles in [-1, 1) from a 64-bit Mersenne stream; bit-reproducible
/// across standard libraries.
inline Vector random_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector v(n);
  for (auto& e : v) e = static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
  return v;
}

}  // namespace esr
