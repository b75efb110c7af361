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

#include <gtest/gtest.h>

#include "esr/error.hpp"
#include "esr/generators.hpp"

namespace esr {
namespace {

TEST(Generators, Laplace1dIsTextbookStencil) {
  const SparseMatrix a = laplace1d(4);
  const SparseMatrix want = SparseMatrix::from_triplets(
      4, 4, {{0, 0, 2}, {0, 1, -1}, {1, 0, -1}, {1, 1, 2}, {1, 2, -1}, {2, 1, -1}, {2, 2, 2}, {2, 3, -1},
             {3, 2, -1}, {3, 3, 2}});
  EXPECT_EQ(a, want);
}

TEST(Generators, Laplace2dFivePointCount) {
  const Index k = 3;
  const SparseMatrix a = laplace2d(k);
  // Grid neighbours counted directly: each undirected edge contributes two entries.
  std::size_t edges = 0;
  for (Index y = 0; y < k; ++y) {
    for (Index x = 0; x < k; ++x) edges += (x + 1 < k) + (y + 1 < k);
  }
  EXPECT_EQ(a.n_rows, 9u);
  EXPECT_EQ(a.nnz(), 9 + 2 * edges);
  EXPECT_EQ(a.nnz(), 33u);
  EXPECT_EQ(a.at(4, 4), 4.0);
  EXPECT_EQ(a.at(4, 1), -1.0);
  EXPECT_EQ(a.at(2, 3), 0.0);
  EXPECT_TRUE(a.is_exactly_symmetric());
}

TEST(Generators, BandIsSpd) {
  const SparseMatrix a = band(64, 8, 0.1);
  EXPECT_TRUE(a.is_exactly_symmetric());
  EXPECT_NO_THROW(DenseCholesky{a});
  EXPECT_EQ(a.at(10, 18), -1.0 / 8.0);
  EXPECT_EQ(a.at(10, 19), 0.0);
  for (Index r = 0; r < a.n_rows; ++r) {
    double off = 0.0;
    for (Index k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
      if (a.col_indices[k] != r) off += std::abs(a.values[k]);
    }
    EXPECT_DOUBLE_EQ(a.at(r, r), 1.1 * off);
  }
}

TEST(Generators, DenseIsFull) {
  const SparseMatrix a = dense_spd(8);
  EXPECT_EQ(a.nnz(), 64u);
  EXPECT_NO_THROW(DenseCholesky{a});
}

TEST(Generators, SpecStrings) {
  EXPECT_EQ(generate_matrix("laplace1d:6"), laplace1d(6));
  EXPECT_EQ(generate_matrix("laplace2d:4"), laplace2d(4));
  EXPECT_EQ(generate_matrix("band:30,3,0.5"), band(30, 3, 0.5));
  EXPECT_EQ(generate_matrix("dense:5"), dense_spd(5));
  for (const char* bad : {"laplace1d", "laplace1d:x", "laplace1d:0", "band:10,2", "band:10,2,-1", "ring:4", "dense:-3"}) {
    EXPECT_THROW(generate_matrix(bad), InvalidArgument) << bad;
  }
}

TEST(Generators, RandomVectorIsSeededAndBounded) {
  const Vector a = random_vector(1000, 42);
  EXPECT_EQ(a, random_vector(1000, 42));
  EXPECT_NE(a, random_vector(1000, 43));
  for (const double v : a) {
    EXPECT_GE(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

}  // namespace
}  // namespace esr
