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
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "esr/error.hpp"

namespace esr {

using Index = std::size_t;
using NodeId = std::size_t;
using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Vector kernels. All reductions run in ascending index order.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// ‖a − b‖₂
inline double distance2(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("distance2: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Block-row partition

struct RowRange {
  Index begin = 0;
  Index end = 0;
  Index size() const noexcept { return end - begin; }
  bool contains(Index row) const noexcept { return row >= begin && row < end; }
  friend bool operator==(const RowRange&, const RowRange&) = default;
};

/// Contiguous block rows, one range per node. The first (n mod N) nodes own
/// ceil(n/N) rows, the rest floor(n/N).
class BlockRowPartition {
 public:
  BlockRowPartition() = default;

  BlockRowPartition(Index n, std::size_t node_count) : n_(n), node_count_(node_count) {
    if (node_count == 0 || node_count > n) {
      throw InvalidArgument("partition_rows: need 1 <= node_count <= n (n=" + std::to_string(n) +
                            ", node_count=" + std::to_string(node_count) + ")");
    }
    base_ = n / node_count;
    rem_ = n % node_count;
    ranges_.reserve(node_count);
    Index start = 0;
    for (std::size_t i = 0; i < node_count; ++i) {
      const Index len = base_ + (i < rem_ ? 1 : 0);
      ranges_.push_back({start, start + len});
      start += len;
    }
  }

  std::size_t node_count() const noexcept { return node_count_; }
  Index size() const noexcept { return n_; }
  const RowRange& range(NodeId i) const { return ranges_.at(i); }
  const std::vector<RowRange>& ranges() const noexcept { return ranges_; }
  Index max_block() const noexcept { return base_ + (rem_ > 0 ? 1 : 0); }

  NodeId owner(Index row) const {
    if (row >= n_) throw InvalidArgument("owner: row out of range");
    const Index wide = rem_ * (base_ + 1);
    if (row < wide) return row / (base_ + 1);
    return rem_ + (row - wide) / base_;
  }

 private:
  Index n_ = 0;
  std::size_t node_count_ = 0;
  Index base_ = 0;
  Index rem_ = 0;
  std::vector<RowRange> ranges_;
};

inline BlockRowPartition partition_rows(Index n, std::size_t node_count) {
  return BlockRowPartition(n, node_count);
}

// ---------------------------------------------------------------------------
// CSR matrix

struct Triplet {
  Index row;
  Index col;
  double value;
};

struct SparseMatrix {
  Index n_rows = 0;
  Index n_cols = 0;
  std::vector<Index> row_offsets{0};
  std::vector<Index> col_indices;
  Vector values;

  std::size_t nnz() const noexcept { return values.size(); }
  bool square() const noexcept { return n_rows == n_cols; }

  std::span<const Index> row_cols(Index r) const {
    return {col_indices.data() + row_offsets[r], row_offsets[r + 1] - row_offsets[r]};
  }
  std::span<const double> row_values(Index r) const {
    return {values.data() + row_offsets[r], row_offsets[r + 1] - row_offsets[r]};
  }

  /// Stored value at (r, c), or 0 when absent.
  double at(Index r, Index c) const {
    const auto cols = row_cols(r);
    const auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return 0.0;
    return values[row_offsets[r] + static_cast<Index>(it - cols.begin())];
  }

  /// Builds CSR from unordered triplets; duplicates are summed.
  static SparseMatrix from_triplets(Index n_rows, Index n_cols, std::vector<Triplet> entries) {
    for (const auto& t : entries) {
      if (t.row >= n_rows || t.col >= n_cols) throw InvalidArgument("from_triplets: index out of range");
    }
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    SparseMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    m.row_offsets.assign(n_rows + 1, 0);
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (!m.col_indices.empty() && k > 0 && entries[k].row == entries[k - 1].row &&
          entries[k].col == entries[k - 1].col) {
        m.values.back() += entries[k].value;
        continue;
      }
      m.col_indices.push_back(entries[k].col);
      m.values.push_back(entries[k].value);
      ++m.row_offsets[entries[k].row + 1];
    }
    std::partial_sum(m.row_offsets.begin(), m.row_offsets.end(), m.row_offsets.begin());
    return m;
  }

  static SparseMatrix identity(Index n) {
    std::vector<Triplet> t;
    t.reserve(n);
    for (Index i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    return from_triplets(n, n, std::move(t));
  }

  /// Throws InvalidArgument when the CSR invariants do not hold.
  void validate() const {
    if (row_offsets.size() != n_rows + 1 || row_offsets.front() != 0 ||
        row_offsets.back() != col_indices.size() || col_indices.size() != values.size()) {
      throw InvalidArgument("SparseMatrix: inconsistent CSR arrays");
    }
    for (Index r = 0; r < n_rows; ++r) {
      if (row_offsets[r] > row_offsets[r + 1]) throw InvalidArgument("SparseMatrix: row_offsets decreasing");
      const auto cols = row_cols(r);
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] >= n_cols) throw InvalidArgument("SparseMatrix: column out of range");
        if (k > 0 && cols[k] <= cols[k - 1]) throw InvalidArgument("SparseMatrix: columns not increasing");
      }
    }
  }

  /// Entry (i,j) stored iff (j,i) stored, with bitwise-equal values.
  bool is_exactly_symmetric() const {
    if (!square()) return false;
    for (Index r = 0; r < n_rows; ++r) {
      const auto cols = row_cols(r);
      const auto vals = row_values(r);
      for (std::size_t k = 0; k < cols.size(); ++k) {
        const auto other = row_cols(cols[k]);
        const auto it = std::lower_bound(other.begin(), other.end(), r);
        if (it == other.end() || *it != r) return false;
        if (row_values(cols[k])[static_cast<std::size_t>(it - other.begin())] != vals[k]) return false;
      }
    }
    return true;
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;
};

/// Cheap SPD screen: exact symmetry and a strictly positive stored diagonal.
inline void check_structurally_spd(const SparseMatrix& a) {
  if (!a.square()) throw NotSpdError("matrix is not square");
  if (!a.is_exactly_symmetric()) throw NotSpdError("matrix is not exactly symmetric");
  for (Index r = 0; r < a.n_rows; ++r) {
    if (!(a.at(r, r) > 0.0)) throw NotSpdError("non-positive diagonal at row " + std::to_string(r));
  }
}

/// y = A x, row by row, accumulating in ascending column order.
inline void spmv(const SparseMatrix& a, std::span<const double> x, std::span<double> y) {
  if (x.size() != a.n_cols || y.size() != a.n_rows) throw DimensionMismatch("spmv: dimension mismatch");
  for (Index r = 0; r < a.n_rows; ++r) {
    double s = 0.0;
    for (Index k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) s += a.values[k] * x[a.col_indices[k]];
    y[r] = s;
  }
}

inline Vector spmv(const SparseMatrix& a, std::span<const double> x) {
  Vector y(a.n_rows);
  spmv(a, x, y);
  return y;
}

namespace detail {

inline void check_index_set(std::span<const Index> set, Index bound, const char* what) {
  for (std::size_t k = 0; k < set.size(); ++k) {
    if (set[k] >= bound) throw InvalidArgument(std::string("extract_submatrix: ") + what + " index out of range");
    if (k > 0 && set[k] <= set[k - 1]) {
      throw InvalidArgument(std::string("extract_submatrix: ") + what + " set not strictly sorted");
    }
  }
}

}  // namespace detail

/// A_{rows,cols} with positions renumbered by rank within the index sets.
inline SparseMatrix extract_submatrix(const SparseMatrix& a, std::span<const Index> rows,
                                      std::span<const Index> cols) {
  detail::check_index_set(rows, a.n_rows, "row");
  detail::check_index_set(cols, a.n_cols, "column");
  SparseMatrix sub;
  sub.n_rows = rows.size();
  sub.n_cols = cols.size();
  sub.row_offsets.assign(rows.size() + 1, 0);
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const auto rc = a.row_cols(rows[ri]);
    const auto rv = a.row_values(rows[ri]);
    // Merge the sorted row pattern against the sorted column set.
    std::size_t p = 0;
    std::size_t q = static_cast<std::size_t>(std::lower_bound(cols.begin(), cols.end(), rc.empty() ? 0 : rc.front()) -
                                             cols.begin());
    while (p < rc.size() && q < cols.size()) {
      if (rc[p] < cols[q]) {
        ++p;
      } else if (cols[q] < rc[p]) {
        ++q;
      } else {
        sub.col_indices.push_back(q);
        sub.values.push_back(rv[p]);
        ++p;
        ++q;
      }
    }
    sub.row_offsets[ri + 1] = sub.col_indices.size();
  }
  return sub;
}

// ---------------------------------------------------------------------------
// Dense Cholesky

/// Dense lower Cholesky factor of an SPD matrix. Leading zeros of each row
/// (the matrix envelope) are skipped, so banded inputs factor in O(n b²).
class DenseCholesky {
 public:
  DenseCholesky() = default;

  explicit DenseCholesky(const SparseMatrix& a) {
    if (!a.square()) throw NotSpdError("cholesky: matrix not square");
    n_ = a.n_rows;
    l_.assign(n_ * n_, 0.0);
    first_.assign(n_, 0);
    for (Index r = 0; r < n_; ++r) {
      const auto cols = a.row_cols(r);
      const auto vals = a.row_values(r);
      first_[r] = r;
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] <= r) {
          l_[r * n_ + cols[k]] = vals[k];
          first_[r] = std::min(first_[r], cols[k]);
        }
      }
    }
    for (Index i = 0; i < n_; ++i) {
      double* li = &l_[i * n_];
      for (Index j = first_[i]; j <= i; ++j) {
        const double* lj = &l_[j * n_];
        double s = li[j];
        const Index k0 = std::max(first_[i], first_[j]);
        for (Index k = k0; k < j; ++k) s -= li[k] * lj[k];
        factor_flops_ += 2 * (j - k0) + 1;
        if (j < i) {
          li[j] = s / lj[j];
        } else {
          if (!(s > 0.0)) throw NotSpdError("cholesky: non-positive pivot at row " + std::to_string(i));
          li[i] = std::sqrt(s);
        }
      }
    }
  }

  Index size() const noexcept { return n_; }
  std::size_t factor_flops() const noexcept { return factor_flops_; }

  /// Solves L Lᵀ x = b. `x` may alias `b`.
  void solve(std::span<const double> b, std::span<double> x) const {
    if (b.size() != n_ || x.size() != n_) throw DimensionMismatch("cholesky solve: length mismatch");
    if (x.data() != b.data()) std::copy(b.begin(), b.end(), x.begin());
    for (Index i = 0; i < n_; ++i) {
      const double* li = &l_[i * n_];
      double s = x[i];
      for (Index k = first_[i]; k < i; ++k) s -= li[k] * x[k];
      x[i] = s / li[i];
    }
    for (Index i = n_; i-- > 0;) {
      x[i] /= l_[i * n_ + i];
      const double xi = x[i];
      const double* li = &l_[i * n_];
      for (Index k = first_[i]; k < i; ++k) x[k] -= li[k] * xi;
    }
  }

  Vector solve(std::span<const double> b) const {
    Vector x(n_);
    solve(b, x);
    return x;
  }

  /// Multiply-add count of one solve.
  std::size_t solve_flops() const noexcept {
    std::size_t f = 0;
    for (Index i = 0; i < n_; ++i) f += 2 * (i - first_[i]) + 2;
    return 2 * f;
  }

 private:
  Index n_ = 0;
  Vector l_;
  std::vector<Index> first_;
  std::size_t factor_flops_ = 0;
};

/// Densify-and-Cholesky solve. Intended for blocks up to a few thousand rows.
inline Vector direct_solve(const SparseMatrix& a, std::span<const double> b) {
  if (b.size() != a.n_rows) throw DimensionMismatch("direct_solve: rhs length mismatch");
  return DenseCholesky(a).solve(b);
}

}  // namespace esr
