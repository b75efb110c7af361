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

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "esr/cluster.hpp"

namespace esr {

/// Subsystem solve used to rebuild the lost iterate block.
struct InnerSolveConfig {
  double rel_tolerance = 1e-14;
  Index direct_threshold = 4096;  // |I_f| at or below this uses Cholesky
  std::size_t max_iterations = 0;  // 0: 10·|I_f| + 100
};

struct SolverConfig {
  double rel_tolerance = 1e-8;
  std::size_t max_iterations = 10000;
  PreconditionerKind preconditioner = PreconditionerKind::block_jacobi;
  std::size_t redundancy = 0;
  InnerSolveConfig inner;
  /// Snapshot doomed nodes before erasure and report the reconstruction error.
  bool verify_recovery = false;
  /// Reject schedules with more than ρ simultaneous failures before running.
  bool validate_schedule = true;

  void validate() const {
    if (!(rel_tolerance > 0.0 && rel_tolerance < 1.0)) throw ConfigError("rel_tolerance must lie in (0,1)");
    if (!(inner.rel_tolerance > 0.0 && inner.rel_tolerance < 1.0)) {
      throw ConfigError("inner rel_tolerance must lie in (0,1)");
    }
  }
};

struct TraceMarker {
  std::size_t iteration = 0;
  std::string kind;
  std::vector<NodeId> nodes;
};

/// r_norm[j] = ‖r^{(j)}‖₂; alpha[j], beta[j] from the update j → j+1.
struct IterationTrace {
  std::vector<double> r_norm;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<TraceMarker> markers;
};

struct SolverState {
  std::size_t iteration = 0;
  double rz = 0.0;
  double r_norm0 = 0.0;
  double r_norm = 0.0;
  bool converged = false;
  IterationTrace trace;
};

/// z = M⁻¹ r on one node: exact block solve, or a copy for the identity.
inline void apply_preconditioner(const NodeState& node, std::span<const double> r, std::span<double> z) {
  if (!node.static_data) throw InvalidArgument("apply_preconditioner: node has no static data");
  const auto& factor = node.static_data->block_factor;
  if (factor) {
    factor->solve(r, z);
  } else {
    if (r.size() != z.size()) throw DimensionMismatch("apply_preconditioner: length mismatch");
    std::copy(r.begin(), r.end(), z.begin());
  }
}

namespace detail {

template <typename F>
double reduce_nodes(ClusterState& c, F&& local) {
  std::vector<double> contrib(c.node_count());
  for (NodeId i = 0; i < c.node_count(); ++i) contrib[i] = local(c.nodes[i]);
  return allreduce_sum(c, contrib);
}

inline void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw BreakdownError(std::string("non-finite ") + what);
}

}  // namespace detail

/// x⁰ = 0, r⁰ = b, z⁰ = M⁻¹ r⁰, p⁰ = z⁰.
inline SolverState pcg_init(ClusterState& c, const SolverConfig& config) {
  config.validate();
  if (config.redundancy != c.redundancy()) throw ConfigError("solver redundancy differs from the cluster plan");
  if (config.preconditioner != c.preconditioner) throw ConfigError("solver preconditioner differs from the cluster");
  for (auto& n : c.nodes) {
    if (!n.alive) throw InvalidArgument("pcg_init: all nodes must be live");
    const std::size_t m = n.rows.size();
    n.x.assign(m, 0.0);
    n.r = n.static_data->b;
    n.z.assign(m, 0.0);
    apply_preconditioner(n, n.r, n.z);
    n.p = n.z;
    n.p_prev.assign(m, 0.0);
    n.u.assign(m, 0.0);
  }
  SolverState s;
  s.rz = detail::reduce_nodes(c, [](const NodeState& n) { return dot(n.r, n.z); });
  s.r_norm0 = std::sqrt(detail::reduce_nodes(c, [](const NodeState& n) { return dot(n.r, n.r); }));
  detail::check_finite(s.rz, "rᵀz");
  s.r_norm = s.r_norm0;
  s.converged = s.r_norm0 == 0.0;
  s.trace.r_norm.push_back(s.r_norm0);
  for (auto& n : c.nodes) n.scalars = ReplicatedScalars{0, 0.0, 0.0, s.rz, s.r_norm, s.r_norm0};
  return s;
}

/// Second half of an iteration: expects u = A p^{(j)} already on every node.
inline void pcg_update(ClusterState& c, SolverState& s, const SolverConfig& config) {
  const double pap = detail::reduce_nodes(c, [](const NodeState& n) { return dot(n.p, n.u); });
  if (!(pap > 0.0)) {
    throw BreakdownError("pᵀAp = " + std::to_string(pap) + " at iteration " + std::to_string(s.iteration));
  }
  const double alpha = s.rz / pap;
  detail::check_finite(alpha, "alpha");
  for (auto& n : c.nodes) {
    for (std::size_t q = 0; q < n.x.size(); ++q) {
      n.x[q] += alpha * n.p[q];
      n.r[q] -= alpha * n.u[q];
    }
    apply_preconditioner(n, n.r, n.z);
  }
  const double rz_new = detail::reduce_nodes(c, [](const NodeState& n) { return dot(n.r, n.z); });
  const double rr = detail::reduce_nodes(c, [](const NodeState& n) { return dot(n.r, n.r); });
  const double beta = rz_new / s.rz;
  detail::check_finite(beta, "beta");
  for (auto& n : c.nodes) {
    n.p_prev = n.p;
    for (std::size_t q = 0; q < n.p.size(); ++q) n.p[q] = n.z[q] + beta * n.p_prev[q];
  }
  s.trace.alpha.push_back(alpha);
  s.trace.beta.push_back(beta);
  s.rz = rz_new;
  s.r_norm = std::sqrt(rr);
  ++s.iteration;
  s.trace.r_norm.push_back(s.r_norm);
  s.converged = s.r_norm <= config.rel_tolerance * s.r_norm0;
  for (auto& n : c.nodes) n.scalars = ReplicatedScalars{s.iteration, alpha, beta, s.rz, s.r_norm, s.r_norm0};
}

/// One full iteration j → j+1: SpMV exchange (refreshing backups) then update.
inline void pcg_step(ClusterState& c, SolverState& s, const SolverConfig& config) {
  if (s.converged) return;
  exchange_spmv(c, ExchangeMode::advance);
  pcg_update(c, s, config);
}

/// Sequential PCG used for the recovery subsystem. Block-Jacobi blocks are
/// given as contiguous row ranges with their factors.
struct LocalBlock {
  Index begin = 0;
  Index end = 0;
  std::shared_ptr<const DenseCholesky> factor;
};

struct LocalSolveResult {
  Vector x;
  std::size_t iterations = 0;
  double rel_residual = 0.0;
  bool converged = false;
  std::size_t flops = 0;
};

inline LocalSolveResult local_pcg(const SparseMatrix& a, std::span<const double> b,
                                  const std::vector<LocalBlock>& blocks, double rel_tolerance,
                                  std::size_t max_iterations) {
  const Index n = a.n_rows;
  LocalSolveResult res;
  res.x.assign(n, 0.0);
  Vector r(b.begin(), b.end()), z(n), p(n), u(n);
  auto precondition = [&](const Vector& in, Vector& out) {
    for (const auto& blk : blocks) {
      const std::span<const double> src(in.data() + blk.begin, blk.end - blk.begin);
      const std::span<double> dst(out.data() + blk.begin, blk.end - blk.begin);
      if (blk.factor) {
        blk.factor->solve(src, dst);
        res.flops += blk.factor->solve_flops();
      } else {
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
  };
  const double r0 = norm2(r);
  if (r0 == 0.0) {
    res.converged = true;
    return res;
  }
  precondition(r, z);
  p = z;
  double rz = dot(r, z);
  double rn = r0;
  while (res.iterations < max_iterations) {
    spmv(a, p, u);
    res.flops += 2 * a.nnz() + 10 * n;
    const double pap = dot(p, u);
    if (!(pap > 0.0)) throw BreakdownError("inner pᵀAp <= 0");
    const double alpha = rz / pap;
    for (Index q = 0; q < n; ++q) {
      res.x[q] += alpha * p[q];
      r[q] -= alpha * u[q];
    }
    ++res.iterations;
    rn = norm2(r);
    if (rn <= rel_tolerance * r0) break;
    precondition(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (Index q = 0; q < n; ++q) p[q] = z[q] + beta * p[q];
  }
  res.rel_residual = rn / r0;
  res.converged = rn <= rel_tolerance * r0;
  return res;
}

}  // namespace esr
