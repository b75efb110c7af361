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
#include "esr/recovery.hpp"
#include "esr/run.hpp"
#include "test_support.hpp"

namespace esr {
namespace {

struct Problem {
  SparseMatrix a;
  Vector b;
  ClusterState cluster;
  SolverConfig config;
  SolverState state;
};

Problem prepare(SparseMatrix a, std::size_t nodes, std::size_t rho,
                PreconditionerKind kind = PreconditionerKind::block_jacobi, std::uint64_t seed = 1) {
  Problem p;
  p.a = std::move(a);
  p.b = random_vector(p.a.n_rows, seed);
  const BlockRowPartition part(p.a.n_rows, nodes);
  p.cluster = build_cluster(p.a, p.b, part, compute_redundancy_plan(compute_send_sets(p.a, part), rho, nodes), kind);
  p.config.redundancy = rho;
  p.config.preconditioner = kind;
  p.config.rel_tolerance = 1e-10;
  return p;
}

/// Runs j full iterations, then the exchange of iteration j.
void advance_to(Problem& p, std::size_t j) {
  p.state = pcg_init(p.cluster, p.config);
  for (std::size_t k = 0; k < j; ++k) pcg_step(p.cluster, p.state, p.config);
  exchange_spmv(p.cluster);
}

GroundTruth fail(Problem& p, const std::vector<NodeId>& nodes) {
  GroundTruth truth;
  truth.capture(p.cluster, nodes);
  inject_failures(p.cluster, nodes);
  provision_replacements(p.cluster, nodes);
  return truth;
}

Vector gather_truth(const GroundTruth& t, const std::vector<NodeId>& nodes, Vector NodeSnapshot::*member) {
  Vector out;
  for (const NodeId f : nodes) {
    const Vector& v = t.nodes.at(f).*member;
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

TEST(Gather, CollectsCopiesScalarsAndCoupledIterate) {
  Problem p = prepare(laplace1d(8), 4, 1);
  advance_to(p, 3);
  const GroundTruth truth = fail(p, {1});
  const RecoveryTask task = gather_surviving(p.cluster, {1});
  EXPECT_EQ(task.rows, (std::vector<Index>{2, 3}));
  EXPECT_EQ(task.x_cols, (std::vector<Index>{1, 4}));
  EXPECT_EQ(task.x_vals, (Vector{p.cluster.nodes[0].x[1], p.cluster.nodes[2].x[0]}));
  EXPECT_EQ(task.p_current, truth.nodes.at(1).p);
  EXPECT_EQ(task.p_previous, truth.nodes.at(1).p_prev);
  EXPECT_EQ(task.scalars.iteration, 3u);
  EXPECT_EQ(task.scalars.beta_prev, p.state.trace.beta.back());
  EXPECT_EQ(task.generations, 2u);
  EXPECT_GT(task.cost.messages, 0u);
}

TEST(Gather, ElementWithoutSurvivingCopyIsUnrecoverable) {
  // Element 0 is only replicated on node 1 = d_01.
  Problem p = prepare(laplace1d(8), 4, 1);
  advance_to(p, 2);
  fail(p, {0, 1});
  EXPECT_THROW(gather_surviving(p.cluster, {0, 1}), UnrecoverableError);
}

TEST(Gather, RequiresProvisionedReplacements) {
  Problem p = prepare(laplace1d(8), 4, 1);
  advance_to(p, 2);
  EXPECT_THROW(gather_surviving(p.cluster, {2}), InvalidArgument);
  inject_failures(p.cluster, {2});
  EXPECT_THROW(gather_surviving(p.cluster, {2}), InvalidArgument);
}

TEST(Gather, EmptyFailedSetIsANoOp) {
  Problem p = prepare(laplace1d(8), 4, 1);
  advance_to(p, 2);
  RecoveryTask task = gather_surviving(p.cluster, {});
  EXPECT_TRUE(task.empty());
  const RecoveryReport rep = finalize_recovery(p.cluster, task);
  EXPECT_TRUE(rep.reconstructed);
  EXPECT_EQ(p.cluster.recovery_stats, CommStats{});
}

TEST(Reconstruct, StagesRebuildTheLostBlock) {
  Problem p = prepare(laplace1d(12), 3, 1);
  advance_to(p, 4);
  const GroundTruth truth = fail(p, {1});
  RecoveryTask task = gather_surviving(p.cluster, {1});
  reconstruct_p_z(task);
  EXPECT_LT(testing::rel_diff(task.z, gather_truth(truth, {1}, &NodeSnapshot::z)), 1e-13);
  reconstruct_r(p.cluster, task);
  EXPECT_LT(testing::rel_diff(task.r, gather_truth(truth, {1}, &NodeSnapshot::r)), 1e-12);
  reconstruct_x(p.cluster, task);
  EXPECT_TRUE(task.inner_direct);
  EXPECT_LT(task.inner_residual, 1e-14);
  EXPECT_LT(testing::rel_diff(task.x, gather_truth(truth, {1}, &NodeSnapshot::x)), 1e-12);
}

TEST(Reconstruct, IdentityPreconditionerTakesResidualFromDirection) {
  Problem p = prepare(laplace2d(6), 4, 2, PreconditionerKind::identity);
  advance_to(p, 5);
  const GroundTruth truth = fail(p, {2});
  RecoveryTask task = gather_surviving(p.cluster, {2});
  reconstruct_p_z(task);
  reconstruct_r(p.cluster, task);
  EXPECT_EQ(task.r, task.z);
  reconstruct_x(p.cluster, task);
  EXPECT_LT(testing::rel_diff(task.x, gather_truth(truth, {2}, &NodeSnapshot::x)), 1e-11);
}

TEST(Reconstruct, FirstIterationNeedsOnlyOneGeneration) {
  Problem p = prepare(band(60, 4, 0.2), 4, 1);
  advance_to(p, 0);
  const GroundTruth truth = fail(p, {3});
  RecoveryTask task = gather_surviving(p.cluster, {3});
  EXPECT_EQ(task.generations, 1u);
  EXPECT_EQ(task.scalars.beta_prev, 0.0);
  reconstruct_p_z(task);
  reconstruct_r(p.cluster, task);
  reconstruct_x(p.cluster, task);
  const RecoveryReport rep = finalize_recovery(p.cluster, task, &truth);
  ASSERT_TRUE(rep.deviation);
  EXPECT_LT(rep.deviation->max_relative(), 1e-12);
  // x^(0) = 0 is reproduced up to rounding.
  EXPECT_LT(rep.deviation->max_abs, 1e-13);
}

TEST(Reconstruct, ContiguousFailedNodesAreSolvedJointly) {
  Problem p = prepare(band(320, 30, 0.05), 8, 3);
  advance_to(p, 6);
  GroundTruth truth = fail(p, {3, 4, 5});
  std::deque<FailureEvent> none;
  const RecoveryReport rep = run_recovery(p.cluster, {5, 3, 4}, {}, none, &truth);
  EXPECT_EQ(rep.failed, (std::vector<NodeId>{3, 4, 5}));
  ASSERT_TRUE(rep.deviation);
  EXPECT_LT(rep.deviation->max_relative(), 1e-11);
  EXPECT_TRUE(rep.inner_direct);
  EXPECT_GT(rep.flops, 0u);
}

TEST(Reconstruct, IterativeInnerSolveMeetsTolerance) {
  Problem p = prepare(laplace2d(16), 4, 2);
  advance_to(p, 8);
  GroundTruth truth = fail(p, {1, 2});
  InnerSolveConfig inner;
  inner.direct_threshold = 0;
  std::deque<FailureEvent> none;
  const RecoveryReport rep = run_recovery(p.cluster, {1, 2}, inner, none, &truth);
  EXPECT_FALSE(rep.inner_direct);
  EXPECT_GT(rep.inner_iterations, 0u);
  EXPECT_LE(rep.inner_residual, 1e-14);
  EXPECT_LT(rep.deviation->max_relative(), 1e-8);
}

TEST(Reconstruct, StalledInnerSolveRaises) {
  Problem p = prepare(laplace2d(16), 4, 2);
  advance_to(p, 8);
  fail(p, {1, 2});
  InnerSolveConfig inner;
  inner.direct_threshold = 0;
  inner.max_iterations = 1;
  std::deque<FailureEvent> none;
  try {
    run_recovery(p.cluster, {1, 2}, inner, none);
    FAIL() << "expected RecoveryError";
  } catch (const RecoveryError& e) {
    EXPECT_GT(e.inner_residual(), 1e-14);
  }
}

TEST(Finalize, RestoresStateAndBackupCopies) {
  Problem p = prepare(band(200, 10, 0.1), 5, 2);
  advance_to(p, 5);
  fail(p, {1, 3});
  std::deque<FailureEvent> none;
  const RecoveryReport rep = run_recovery(p.cluster, {1, 3}, {}, none);
  EXPECT_TRUE(rep.reconstructed);
  for (const auto& n : p.cluster.nodes) EXPECT_TRUE(n.survivor());
  const CopyAudit audit = audit_copies(p.cluster);
  ASSERT_TRUE(audit.consistent) << audit.issues.front();
  EXPECT_GE(audit.min_current, 3u);
  EXPECT_GE(audit.min_previous, 3u);
  EXPECT_GT(p.cluster.recovery_stats.extra_elements, 0u);
  EXPECT_EQ(p.cluster.recovery_stats, rep.cost);
}

TEST(Finalize, SecondFailureAfterRecoveryIsRecoverable) {
  Problem ref = prepare(band(200, 10, 0.1), 5, 1);
  const SolveResult clean = pcg_run(ref.cluster, ref.config);
  Problem p = prepare(band(200, 10, 0.1), 5, 1);
  FailureSchedule sched{{FailureEvent::at(3, {2}), FailureEvent::at(4, {2}), FailureEvent::at(9, {1})}};
  p.config.verify_recovery = true;
  const SolveResult res = pcg_run(p.cluster, p.config, sched);
  ASSERT_TRUE(res.converged()) << res.diagnostic;
  ASSERT_EQ(res.recoveries.size(), 3u);
  for (const auto& r : res.recoveries) EXPECT_LT(r.deviation->max_relative(), 1e-10);
  EXPECT_EQ(res.iterations, clean.iterations);
  EXPECT_LT(testing::rel_diff(res.x, clean.x), 1e-10);
}

TEST(Overlapping, FailureDuringGatherRestartsOverTheUnion) {
  Problem p = prepare(band(240, 12, 0.1), 8, 2);
  advance_to(p, 4);
  GroundTruth truth = fail(p, {1});
  std::deque<FailureEvent> pending{FailureEvent::during(RecoveryStage::gathered, {4})};
  const RecoveryReport rep = run_recovery(p.cluster, {1}, {}, pending, &truth);
  EXPECT_TRUE(pending.empty());
  EXPECT_EQ(rep.failed, (std::vector<NodeId>{1, 4}));
  EXPECT_EQ(rep.restarted_count, 1u);
  EXPECT_LT(rep.deviation->max_relative(), 1e-11);
}

TEST(Overlapping, ReplacementFailingAgainKeepsTheSet) {
  Problem p = prepare(band(240, 12, 0.1), 8, 2);
  advance_to(p, 4);
  GroundTruth truth = fail(p, {1});
  std::deque<FailureEvent> pending{FailureEvent::during(RecoveryStage::reconstructed_r, {1})};
  const RecoveryReport rep = run_recovery(p.cluster, {1}, {}, pending, &truth);
  EXPECT_EQ(rep.failed, (std::vector<NodeId>{1}));
  EXPECT_EQ(rep.restarted_count, 1u);
  EXPECT_LT(rep.deviation->max_relative(), 1e-11);
}

TEST(Overlapping, CumulativeFailuresBeyondRedundancyAreUnrecoverable) {
  Problem p = prepare(band(240, 12, 0.1), 8, 2);
  advance_to(p, 4);
  fail(p, {1});
  std::deque<FailureEvent> pending{FailureEvent::during(RecoveryStage::gathered, {4}),
                                   FailureEvent::during(RecoveryStage::reconstructed_pz, {6})};
  EXPECT_THROW(run_recovery(p.cluster, {1}, {}, pending), UnrecoverableError);
  EXPECT_FALSE(p.cluster.nodes[6].alive);
}

TEST(Overlapping, DiscardedAttemptsAreCharged) {
  Problem single = prepare(band(240, 12, 0.1), 8, 2);
  advance_to(single, 4);
  fail(single, {1, 4});
  std::deque<FailureEvent> none;
  const RecoveryReport direct = run_recovery(single.cluster, {1, 4}, {}, none);
  Problem p = prepare(band(240, 12, 0.1), 8, 2);
  advance_to(p, 4);
  fail(p, {1});
  std::deque<FailureEvent> pending{FailureEvent::during(RecoveryStage::reconstructed_x, {4})};
  const RecoveryReport restarted = run_recovery(p.cluster, {1}, {}, pending);
  EXPECT_GT(restarted.cost.elements_sent, direct.cost.elements_sent);
  EXPECT_GT(restarted.cost.model_time, direct.cost.model_time);
}

TEST(ResidualDifference, Examples) {
  const SparseMatrix a = laplace1d(4);
  const Vector x{1, 2, 3, 4};
  const Vector b{1, 1, 1, 1};
  const Vector ax = testing::naive_spmv(a, x);
  Vector r(4);
  for (int q = 0; q < 4; ++q) r[q] = b[q] - ax[q];
  EXPECT_EQ(relative_residual_difference(r, a, x, b), 0.0);
  Vector twice = r;
  for (auto& v : twice) v *= 2.0;
  EXPECT_DOUBLE_EQ(*relative_residual_difference(twice, a, x, b), 1.0);
  EXPECT_FALSE(relative_residual_difference(r, a, x, ax).has_value());
  EXPECT_THROW(relative_residual_difference(Vector(3), a, x, b), DimensionMismatch);
}

/// Textbook sequential PCG with dense block solves; the oracle for the exactness property.
Vector oracle_pcg_iterate(const SparseMatrix& a, const Vector& b, const BlockRowPartition& part, std::size_t j) {
  const auto dense = testing::densify(a);
  auto precondition = [&](const Vector& r) {
    Vector z(r.size());
    for (const RowRange& rr : part.ranges()) {
      std::vector<std::vector<double>> blk(rr.size(), std::vector<double>(rr.size()));
      Vector rb(rr.size());
      for (Index i = 0; i < rr.size(); ++i) {
        rb[i] = r[rr.begin + i];
        for (Index k = 0; k < rr.size(); ++k) blk[i][k] = dense[rr.begin + i][rr.begin + k];
      }
      const Vector zb = testing::gauss_solve(blk, rb);
      for (Index i = 0; i < rr.size(); ++i) z[rr.begin + i] = zb[i];
    }
    return z;
  };
  const std::size_t n = b.size();
  Vector x(n, 0.0), r = b, z = precondition(r), p = z;
  double rz = dot(r, z);
  for (std::size_t k = 0; k < j; ++k) {
    const Vector u = testing::naive_spmv(a, p);
    const double alpha = rz / dot(p, u);
    for (std::size_t q = 0; q < n; ++q) {
      x[q] += alpha * p[q];
      r[q] -= alpha * u[q];
    }
    z = precondition(r);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t q = 0; q < n; ++q) p[q] = z[q] + beta * p[q];
  }
  return x;
}

TEST(Exactness, RecoveredIterateMatchesIndependentOracle) {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 12; ++trial) {
    const Index n = 24 + rng() % 100;
    const std::size_t nodes = 3 + rng() % 5;
    const std::size_t rho = 1 + rng() % (nodes - 1);
    Problem p = prepare(testing::random_spd(rng, n, 0.08), nodes, rho, PreconditionerKind::block_jacobi, trial);
    const std::size_t j = 1 + rng() % 6;
    advance_to(p, j);
    std::vector<NodeId> failed;
    const NodeId first = rng() % nodes;
    for (std::size_t q = 0; q < rho; ++q) failed.push_back((first + q) % nodes);
    fail(p, failed);
    std::deque<FailureEvent> none;
    run_recovery(p.cluster, failed, {}, none);
    const Vector want = oracle_pcg_iterate(p.a, p.b, p.cluster.partition, j);
    ASSERT_LT(testing::rel_diff(assemble(p.cluster, &NodeState::x), want), 1e-9) << "trial " << trial;
  }
}

TEST(Exactness, DisturbedRunsFollowTheUndisturbedTrajectory) {
  struct Case {
    SparseMatrix a;
    std::size_t nodes, rho;
    PreconditionerKind kind;
  };
  const std::vector<Case> cases{{laplace2d(14), 4, 1, PreconditionerKind::block_jacobi},
                                {band(300, 9, 0.05), 6, 2, PreconditionerKind::identity},
                                {laplace1d(128), 8, 3, PreconditionerKind::block_jacobi}};
  for (const auto& cs : cases) {
    Problem ref = prepare(cs.a, cs.nodes, cs.rho, cs.kind);
    const SolveResult clean = pcg_run(ref.cluster, ref.config);
    ASSERT_TRUE(clean.converged());
    for (const double frac : {0.2, 0.5, 0.8}) {
      Problem p = prepare(cs.a, cs.nodes, cs.rho, cs.kind);
      p.config.verify_recovery = true;
      std::vector<NodeId> failed;
      for (NodeId q = 0; q < cs.rho; ++q) failed.push_back(cs.nodes / 2 + q - cs.rho / 2);
      const auto at = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(clean.iterations)));
      const SolveResult res = pcg_run(p.cluster, p.config, {{FailureEvent::at(at, failed)}});
      ASSERT_TRUE(res.converged()) << res.diagnostic;
      ASSERT_EQ(res.recoveries.size(), 1u);
      EXPECT_LT(res.recoveries[0].deviation->max_relative(), 1e-10);
      EXPECT_LE(std::abs(static_cast<long>(res.iterations) - static_cast<long>(clean.iterations)), 2);
      EXPECT_LT(testing::rel_diff(res.x, clean.x), 1e-8);
    }
  }
}

}  // namespace
}  // namespace esr
