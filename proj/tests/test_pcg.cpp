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

#include <random>

#include "esr/error.hpp"
#include "esr/generators.hpp"
#include "esr/pcg.hpp"
#include "test_support.hpp"

namespace esr {
namespace {

struct Problem {
  ClusterState cluster;
  SolverConfig config;
};

Problem setup(const SparseMatrix& a, const Vector& b, std::size_t nodes, std::size_t rho,
            PreconditionerKind kind = PreconditionerKind::block_jacobi, double tol = 1e-10) {
  const BlockRowPartition part(a.n_rows, nodes);
  const RedundancyPlan plan = compute_redundancy_plan(compute_send_sets(a, part), rho, nodes);
  Problem s{build_cluster(a, b, part, plan, kind), {}};
  s.config.rel_tolerance = tol;
  s.config.redundancy = rho;
  s.config.preconditioner = kind;
  return s;
}

SolverState solve(Problem& s, std::size_t max_iterations = 10000) {
  SolverState st = pcg_init(s.cluster, s.config);
  while (!st.converged && st.iteration < max_iterations) pcg_step(s.cluster, st, s.config);
  return st;
}

TEST(PcgInit, StartsFromZero) {
  const SparseMatrix a = laplace1d(6);
  Problem s = setup(a, Vector{1, 2, 3, 4, 5, 6}, 2, 1, PreconditionerKind::identity);
  const SolverState st = pcg_init(s.cluster, s.config);
  EXPECT_EQ(assemble(s.cluster, &NodeState::x), Vector(6, 0.0));
  EXPECT_EQ(assemble(s.cluster, &NodeState::r), (Vector{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(assemble(s.cluster, &NodeState::p), (Vector{1, 2, 3, 4, 5, 6}));
  EXPECT_DOUBLE_EQ(st.rz, 91.0);
  EXPECT_DOUBLE_EQ(st.r_norm0, std::sqrt(91.0));
  EXPECT_FALSE(st.converged);
  EXPECT_EQ(s.cluster.iteration_stats.allreduce_count, 2u);
}

TEST(PcgInit, ZeroRightHandSideIsConverged) {
  Problem s = setup(laplace1d(6), Vector(6, 0.0), 2, 0);
  const SolverState st = pcg_init(s.cluster, s.config);
  EXPECT_TRUE(st.converged);
  EXPECT_EQ(st.r_norm0, 0.0);
}

TEST(PcgInit, RejectsMismatchedConfig) {
  Problem s = setup(laplace1d(6), Vector(6, 1.0), 2, 1);
  SolverConfig other = s.config;
  other.redundancy = 0;
  EXPECT_THROW(pcg_init(s.cluster, other), ConfigError);
  other = s.config;
  other.preconditioner = PreconditionerKind::identity;
  EXPECT_THROW(pcg_init(s.cluster, other), ConfigError);
  other = s.config;
  other.rel_tolerance = 0.0;
  EXPECT_THROW(pcg_init(s.cluster, other), ConfigError);
  other = s.config;
  other.inner.rel_tolerance = 1.0;
  EXPECT_THROW(pcg_init(s.cluster, other), ConfigError);
}

TEST(PcgStep, IdentityConvergesInOneIteration) {
  Problem s = setup(SparseMatrix::identity(5), Vector{3, -1, 4, 1, -5}, 5, 2, PreconditionerKind::identity);
  const SolverState st = solve(s);
  EXPECT_TRUE(st.converged);
  EXPECT_EQ(st.iteration, 1u);
  EXPECT_EQ(assemble(s.cluster, &NodeState::x), (Vector{3, -1, 4, 1, -5}));
}

TEST(PcgStep, ExactBlockJacobiOnBlockDiagonalConvergesInOneIteration) {
  std::vector<Triplet> t;
  for (Index blk = 0; blk < 3; ++blk) {
    for (Index i = 0; i < 4; ++i) {
      t.push_back({4 * blk + i, 4 * blk + i, 5.0 + static_cast<double>(i)});
      if (i + 1 < 4) {
        t.push_back({4 * blk + i, 4 * blk + i + 1, -1.5});
        t.push_back({4 * blk + i + 1, 4 * blk + i, -1.5});
      }
    }
  }
  const SparseMatrix a = SparseMatrix::from_triplets(12, 12, t);
  const Vector b = random_vector(12, 3);
  Problem s = setup(a, b, 3, 1);
  const SolverState st = solve(s);
  EXPECT_EQ(st.iteration, 1u);
  EXPECT_LT(testing::rel_diff(assemble(s.cluster, &NodeState::x), testing::gauss_solve(testing::densify(a), b)), 1e-13);
}

TEST(PcgStep, TridiagonalReachesOnesWithinDimension) {
  const SparseMatrix a = laplace1d(8);
  Problem s = setup(a, spmv(a, Vector(8, 1.0)), 4, 1, PreconditionerKind::identity);
  const SolverState st = solve(s);
  EXPECT_TRUE(st.converged);
  EXPECT_LE(st.iteration, 8u);
  for (const double v : assemble(s.cluster, &NodeState::x)) EXPECT_NEAR(v, 1.0, 1e-10);
}

TEST(PcgStep, RecurrenceResidualTracksTrueResidual) {
  for (const auto& [a, kind] : {std::pair{laplace2d(12), PreconditionerKind::block_jacobi},
                                std::pair{band(400, 10, 0.05), PreconditionerKind::identity},
                                std::pair{laplace1d(200), PreconditionerKind::block_jacobi}}) {
    const Vector b = random_vector(a.n_rows, 9);
    Problem s = setup(a, b, 4, 2, kind);
    const SolverState st = solve(s);
    ASSERT_TRUE(st.converged);
    const Vector x = assemble(s.cluster, &NodeState::x);
    const Vector ax = testing::naive_spmv(a, x);
    Vector true_r(b.size());
    for (std::size_t q = 0; q < b.size(); ++q) true_r[q] = b[q] - ax[q];
    const double gap = distance2(true_r, assemble(s.cluster, &NodeState::r)) / norm2(b);
    EXPECT_LE(gap, 1e-10) << "n=" << a.n_rows;
    EXPECT_LE(norm2(true_r) / norm2(b), 1e-9);
  }
}

TEST(PcgStep, RedundancyDoesNotChangeTheIterates) {
  const SparseMatrix a = band(300, 8, 0.1);
  const Vector b = random_vector(300, 4);
  Problem plain = setup(a, b, 6, 0);
  Problem backed = setup(a, b, 6, 3);
  const SolverState s0 = solve(plain);
  const SolverState s3 = solve(backed);
  EXPECT_EQ(s0.iteration, s3.iteration);
  EXPECT_EQ(s0.trace.r_norm, s3.trace.r_norm);
  EXPECT_EQ(s0.trace.alpha, s3.trace.alpha);
  EXPECT_EQ(assemble(plain.cluster, &NodeState::x), assemble(backed.cluster, &NodeState::x));
  EXPECT_EQ(plain.cluster.iteration_stats.extra_elements, 0u);
  EXPECT_GT(backed.cluster.iteration_stats.extra_elements, 0u);
}

TEST(PcgStep, EnergyErrorDecreasesMonotonically) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 8; ++trial) {
    const Index n = 20 + rng() % 200;
    const SparseMatrix a = testing::random_spd(rng, n, 0.05);
    const Vector b = random_vector(n, trial);
    const Vector xs = direct_solve(a, b);
    Problem s = setup(a, b, 1 + rng() % 6, 0, trial % 2 ? PreconditionerKind::identity : PreconditionerKind::block_jacobi,
                    1e-12);
    SolverState st = pcg_init(s.cluster, s.config);
    double prev = std::numeric_limits<double>::infinity();
    while (!st.converged && st.iteration < 1000) {
      Vector e = assemble(s.cluster, &NodeState::x);
      for (Index q = 0; q < n; ++q) e[q] -= xs[q];
      const double energy = dot(e, testing::naive_spmv(a, e));
      ASSERT_LE(energy, prev * (1.0 + 1e-12) + 1e-24) << "trial " << trial << " iteration " << st.iteration;
      prev = energy;
      pcg_step(s.cluster, st, s.config);
    }
    ASSERT_TRUE(st.converged);
  }
}

TEST(PcgStep, ScalarsAreReplicatedOnEveryNode) {
  Problem s = setup(laplace2d(10), random_vector(100, 2), 5, 2);
  SolverState st = pcg_init(s.cluster, s.config);
  for (int k = 0; k < 7; ++k) pcg_step(s.cluster, st, s.config);
  for (const auto& n : s.cluster.nodes) {
    EXPECT_EQ(n.scalars.iteration, 7u);
    EXPECT_EQ(n.scalars.alpha, st.trace.alpha.back());
    EXPECT_EQ(n.scalars.beta_prev, st.trace.beta.back());
    EXPECT_EQ(n.scalars.rz, st.rz);
    EXPECT_EQ(n.scalars.r_norm, st.r_norm);
    EXPECT_EQ(n.scalars.r_norm0, st.r_norm0);
  }
  EXPECT_EQ(s.cluster.iteration_stats.allreduce_count, 2u + 3u * 7u);
}

TEST(PcgStep, IndefiniteMatrixBreaksDown) {
  const SparseMatrix a = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {1, 1, -1.0}});
  Problem s = setup(a, Vector{1.0, 1.0}, 2, 0, PreconditionerKind::identity);
  SolverState st = pcg_init(s.cluster, s.config);
  EXPECT_THROW(pcg_step(s.cluster, st, s.config), BreakdownError);
}

TEST(ApplyPreconditioner, BlockSolveAndCopy) {
  const SparseMatrix a = laplace1d(9);
  Problem s = setup(a, Vector(9, 1.0), 3, 0);
  const NodeState& n = s.cluster.nodes[1];
  const Vector r{1.0, -2.0, 0.5};
  Vector z(3);
  apply_preconditioner(n, r, z);
  const std::vector<Index> rows{3, 4, 5};
  EXPECT_LT(testing::rel_diff(z, testing::gauss_solve(testing::densify(extract_submatrix(a, rows, rows)), r)), 1e-14);
  Problem id = setup(a, Vector(9, 1.0), 3, 0, PreconditionerKind::identity);
  apply_preconditioner(id.cluster.nodes[1], r, z);
  EXPECT_EQ(z, r);
  NodeState empty;
  EXPECT_THROW(apply_preconditioner(empty, r, z), InvalidArgument);
}

TEST(LocalPcg, SolvesWithAndWithoutBlocks) {
  std::mt19937_64 rng(3);
  const SparseMatrix a = testing::random_spd(rng, 60, 0.1);
  const Vector b = random_vector(60, 1);
  const Vector want = testing::gauss_solve(testing::densify(a), b);
  const LocalSolveResult plain = local_pcg(a, b, {{0, 60, nullptr}}, 1e-13, 500);
  EXPECT_TRUE(plain.converged);
  EXPECT_LT(testing::rel_diff(plain.x, want), 1e-11);
  std::vector<LocalBlock> blocks;
  for (Index begin = 0; begin < 60; begin += 20) {
    std::vector<Index> ids(20);
    std::iota(ids.begin(), ids.end(), begin);
    blocks.push_back({begin, begin + 20, std::make_shared<const DenseCholesky>(extract_submatrix(a, ids, ids))});
  }
  const LocalSolveResult jac = local_pcg(a, b, blocks, 1e-13, 500);
  EXPECT_TRUE(jac.converged);
  EXPECT_LT(testing::rel_diff(jac.x, want), 1e-11);
  EXPECT_GT(jac.flops, 0u);
  const LocalSolveResult capped = local_pcg(a, b, {{0, 60, nullptr}}, 1e-13, 2);
  EXPECT_FALSE(capped.converged);
  EXPECT_EQ(capped.iterations, 2u);
}

}  // namespace
}  // namespace esr
