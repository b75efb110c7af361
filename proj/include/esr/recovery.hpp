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

// Exact state reconstruction after node failures.
//
// Given the failed set F with rows I_f, the state at iteration j is rebuilt on
// the replacement nodes from surviving data only:
//
//   z_f = p_f^{(j)} − β^{(j−1)} p_f^{(j−1)}      (retained search-direction copies)
//   r_f = M_{I_f,I_f} z_f                        (P = M⁻¹ is block diagonal)
//   A_{I_f,I_f} x_f = b_f − r_f − A_{I_f,I∖I_f} x_{I∖I_f}
//
// Failures that arrive during reconstruction discard the task and restart it
// over the enlarged failed set.

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esr/cluster.hpp"
#include "esr/pcg.hpp"

namespace esr {

struct NodeSnapshot {
  Vector x, r, z, p, p_prev;
};

/// Pre-failure copies of doomed nodes, kept only when verifying recoveries.
struct GroundTruth {
  std::map<NodeId, NodeSnapshot> nodes;

  void capture(const ClusterState& c, const std::vector<NodeId>& ids) {
    for (const NodeId id : ids) {
      const NodeState& n = c.nodes.at(id);
      if (!n.survivor() || nodes.count(id)) continue;
      nodes[id] = NodeSnapshot{n.x, n.r, n.z, n.p, n.p_prev};
    }
  }
};

/// Relative ℓ₂ deviation of each vector over I_f.
struct StateDeviation {
  double x = 0.0;
  double r = 0.0;
  double z = 0.0;
  double p = 0.0;
  double max_abs = 0.0;
  double max_relative() const { return std::max({x, r, z, p}); }
};

struct RecoveryTask {
  std::vector<NodeId> failed;
  std::vector<Index> rows;              // I_f, ascending
  std::vector<std::size_t> block_start;  // offset of each failed node's block within I_f
  ReplicatedScalars scalars;             // retrieved from a survivor
  std::size_t generations = 0;           // backup generations on survivors
  std::vector<Index> x_cols;             // columns of A_{I_f, I∖I_f}
  Vector x_vals;
  Vector p_current;
  Vector p_previous;
  Vector z, r, x;
  InnerSolveConfig inner;
  bool inner_direct = true;
  std::size_t inner_iterations = 0;
  double inner_residual = 0.0;
  std::size_t flops = 0;
  CommStats cost;

  bool empty() const noexcept { return failed.empty(); }
};

struct RecoveryReport {
  std::vector<NodeId> failed;
  std::size_t iteration = 0;
  bool reconstructed = false;
  std::size_t restarted_count = 0;
  bool inner_direct = true;
  std::size_t inner_iterations = 0;
  double inner_residual = 0.0;
  std::size_t flops = 0;
  std::optional<StateDeviation> deviation;
  CommStats cost;
  std::string diagnostic;
};

namespace detail {

/// One parallel communication phase: its time is that of the slowest message.
class Phase {
 public:
  explicit Phase(const ClusterState& c) : c_(c) {}
  void send(NodeId from, NodeId to, std::size_t elements) {
    if (elements == 0 || from == to) return;
    ++stats_.messages;
    stats_.elements_sent += elements;
    time_ = std::max(time_, c_.model.message(from, to, elements));
  }
  void extra(std::size_t elements) { stats_.extra_elements += elements; }
  CommStats finish() {
    stats_.model_time = time_;
    return stats_;
  }

 private:
  const ClusterState& c_;
  CommStats stats_;
  double time_ = 0.0;
};

inline bool is_failed(const std::vector<NodeId>& failed, NodeId id) {
  return std::binary_search(failed.begin(), failed.end(), id);
}

}  // namespace detail

/// Retrieves replicated scalars, surviving x values coupled into the failed
/// rows, and both retained p generations of I_f from the lowest-id surviving
/// holder of each element.
inline RecoveryTask gather_surviving(ClusterState& c, std::vector<NodeId> failed, const InnerSolveConfig& inner = {}) {
  RecoveryTask task;
  task.inner = inner;
  std::sort(failed.begin(), failed.end());
  failed.erase(std::unique(failed.begin(), failed.end()), failed.end());
  task.failed = failed;
  if (failed.empty()) return task;
  for (const NodeId f : failed) {
    if (f >= c.node_count()) throw InvalidArgument("gather_surviving: node id out of range");
    if (!c.nodes[f].alive || !c.nodes[f].awaiting_recovery) {
      throw InvalidArgument("gather_surviving: node " + std::to_string(f) + " has no provisioned replacement");
    }
  }
  const NodeState* source = nullptr;
  for (const auto& n : c.nodes) {
    if (n.survivor()) {
      source = &n;
      break;
    }
  }
  if (source == nullptr) throw UnrecoverableError("no surviving node");
  task.scalars = source->scalars;
  task.generations = source->backup_generations;
  const bool need_previous = task.scalars.iteration >= 1;

  detail::Phase phase(c);
  for (const NodeId f : failed) phase.send(source->id, f, 5);

  for (const NodeId f : failed) {
    task.block_start.push_back(task.rows.size());
    const RowRange rr = c.partition.range(f);
    for (Index s = rr.begin; s < rr.end; ++s) task.rows.push_back(s);
  }
  const std::size_t nf = task.rows.size();
  task.p_current.assign(nf, 0.0);
  task.p_previous.assign(nf, 0.0);

  // Search-direction copies.
  std::map<std::pair<NodeId, NodeId>, std::size_t> copy_msgs;
  for (std::size_t q = 0; q < nf; ++q) {
    const Index s = task.rows[q];
    const NodeId owner = c.partition.owner(s);
    bool found = false;
    for (NodeId k = 0; k < c.node_count() && !found; ++k) {
      const NodeState& h = c.nodes[k];
      if (k == owner || !h.survivor()) continue;
      if (h.backup_generations < (need_previous ? 2u : 1u)) continue;
      const std::size_t slot = c.layouts[k].slot(owner, s);
      if (slot == ReceiveLayout::npos) continue;
      task.p_current[q] = h.backup_current[slot];
      if (need_previous) task.p_previous[q] = h.backup_previous[slot];
      copy_msgs[{k, owner}] += need_previous ? 2 : 1;
      found = true;
    }
    if (!found) {
      throw UnrecoverableError("element " + std::to_string(s) + " of node " + std::to_string(owner) +
                               " has no surviving copy");
    }
  }
  for (const auto& [pair, count] : copy_msgs) phase.send(pair.first, pair.second, count);

  // Surviving iterate entries coupled to the failed rows.
  std::map<std::pair<NodeId, NodeId>, std::size_t> x_msgs;
  for (const NodeId f : failed) {
    const SparseMatrix& rows = c.nodes[f].static_data->local_rows;
    std::vector<Index> cols;
    for (const Index col : rows.col_indices) {
      if (!detail::is_failed(failed, c.partition.owner(col))) cols.push_back(col);
    }
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    for (const Index col : cols) ++x_msgs[{c.partition.owner(col), f}];
    task.x_cols.insert(task.x_cols.end(), cols.begin(), cols.end());
  }
  std::sort(task.x_cols.begin(), task.x_cols.end());
  task.x_cols.erase(std::unique(task.x_cols.begin(), task.x_cols.end()), task.x_cols.end());
  task.x_vals.reserve(task.x_cols.size());
  for (const Index col : task.x_cols) {
    const NodeState& owner = c.nodes[c.partition.owner(col)];
    task.x_vals.push_back(owner.x[col - owner.rows.begin]);
  }
  for (const auto& [pair, count] : x_msgs) phase.send(pair.first, pair.second, count);

  task.cost += phase.finish();
  c.trace.record("gather").field("nodes", failed).field("elements", task.cost.elements_sent);
  return task;
}

/// z_f = p_f^{(j)} − β^{(j−1)} p_f^{(j−1)}.
inline void reconstruct_p_z(RecoveryTask& task) {
  const double beta = task.scalars.beta_prev;
  task.z.resize(task.rows.size());
  for (std::size_t q = 0; q < task.rows.size(); ++q) task.z[q] = task.p_current[q] - beta * task.p_previous[q];
}

/// r_f = M_{I_f,I_f} z_f, block by block; the identity gives r_f = z_f.
inline void reconstruct_r(const ClusterState& c, RecoveryTask& task) {
  task.r.assign(task.rows.size(), 0.0);
  for (std::size_t b = 0; b < task.failed.size(); ++b) {
    const NodeState& node = c.nodes[task.failed[b]];
    const std::size_t len = node.rows.size();
    const std::span<const double> zb(task.z.data() + task.block_start[b], len);
    const std::span<double> rb(task.r.data() + task.block_start[b], len);
    if (c.preconditioner == PreconditionerKind::identity) {
      std::copy(zb.begin(), zb.end(), rb.begin());
    } else {
      spmv(node.static_data->diag_block, zb, rb);
    }
  }
}

/// Solves A_{I_f,I_f} x_f = b_f − r_f − A_{I_f,I∖I_f} x on the true submatrix,
/// jointly over all failed blocks: Cholesky up to the direct threshold, inner
/// block-Jacobi PCG above it.
inline void reconstruct_x(const ClusterState& c, RecoveryTask& task) {
  const std::size_t nf = task.rows.size();
  SparseMatrix sub;
  sub.n_rows = sub.n_cols = nf;
  sub.row_offsets.assign(nf + 1, 0);
  Vector w(nf, 0.0);
  auto position = [&](Index col) -> std::size_t {
    const NodeId owner = c.partition.owner(col);
    const auto it = std::lower_bound(task.failed.begin(), task.failed.end(), owner);
    if (it == task.failed.end() || *it != owner) return ReceiveLayout::npos;
    const std::size_t b = static_cast<std::size_t>(it - task.failed.begin());
    return task.block_start[b] + (col - c.partition.range(owner).begin);
  };
  std::vector<std::size_t> perm;
  for (std::size_t b = 0; b < task.failed.size(); ++b) {
    const NodeState& node = c.nodes[task.failed[b]];
    const SparseMatrix& rows = node.static_data->local_rows;
    const Vector& bf = node.static_data->b;
    for (Index lr = 0; lr < rows.n_rows; ++lr) {
      const std::size_t q = task.block_start[b] + lr;
      double coupled = 0.0;
      const auto cols = rows.row_cols(lr);
      const auto vals = rows.row_values(lr);
      perm.clear();
      for (std::size_t e = 0; e < cols.size(); ++e) {
        const std::size_t pos = position(cols[e]);
        if (pos == ReceiveLayout::npos) {
          const auto it = std::lower_bound(task.x_cols.begin(), task.x_cols.end(), cols[e]);
          coupled += vals[e] * task.x_vals[static_cast<std::size_t>(it - task.x_cols.begin())];
        } else {
          perm.push_back(e);
          sub.col_indices.push_back(pos);
          sub.values.push_back(vals[e]);
        }
      }
      sub.row_offsets[q + 1] = sub.col_indices.size();
      w[q] = bf[lr] - task.r[q] - coupled;
    }
  }
  // Blocks of consecutive failed nodes keep their relative order, so column
  // positions within each row are already ascending.

  detail::Phase phase(c);
  const NodeId leader = task.failed.front();
  for (std::size_t b = 1; b < task.failed.size(); ++b) {
    phase.send(task.failed[b], leader, c.partition.range(task.failed[b]).size());
  }
  CommStats gather_w = phase.finish();
  if (nf <= task.inner.direct_threshold) {
    const DenseCholesky chol(sub);
    task.x = chol.solve(w);
    task.inner_direct = true;
    task.inner_iterations = 0;
    task.flops += chol.factor_flops() + chol.solve_flops();
    Vector check = spmv(sub, task.x);
    const double wn = norm2(w);
    task.inner_residual = wn > 0.0 ? distance2(check, w) / wn : 0.0;
  } else {
    std::vector<LocalBlock> blocks;
    for (std::size_t b = 0; b < task.failed.size(); ++b) {
      const auto& data = *c.nodes[task.failed[b]].static_data;
      auto factor = data.block_factor ? data.block_factor : std::make_shared<const DenseCholesky>(data.diag_block);
      blocks.push_back({task.block_start[b], task.block_start[b] + data.rows.size(), factor});
    }
    const std::size_t cap = task.inner.max_iterations ? task.inner.max_iterations : 10 * nf + 100;
    LocalSolveResult res = local_pcg(sub, w, blocks, task.inner.rel_tolerance, cap);
    task.inner_direct = false;
    task.inner_iterations = res.iterations;
    task.inner_residual = res.rel_residual;
    task.flops += res.flops;
    if (!res.converged) {
      throw RecoveryError("inner solve stalled at relative residual " + std::to_string(res.rel_residual),
                          res.rel_residual);
    }
    task.x = std::move(res.x);
  }
  detail::Phase back(c);
  for (std::size_t b = 1; b < task.failed.size(); ++b) {
    back.send(leader, task.failed[b], c.partition.range(task.failed[b]).size());
  }
  task.cost += gather_w;
  task.cost += back.finish();
}

namespace detail {

inline double relative_or_absolute(const Vector& got, const Vector& want) {
  const double ref = norm2(want);
  const double d = distance2(got, want);
  return ref > 0.0 ? d / ref : d;
}

inline StateDeviation measure_deviation(const RecoveryTask& task, const GroundTruth& truth) {
  Vector tx, tr, tz, tp;
  for (const NodeId f : task.failed) {
    const auto it = truth.nodes.find(f);
    if (it == truth.nodes.end()) throw InvalidArgument("ground truth missing node " + std::to_string(f));
    const NodeSnapshot& s = it->second;
    tx.insert(tx.end(), s.x.begin(), s.x.end());
    tr.insert(tr.end(), s.r.begin(), s.r.end());
    tz.insert(tz.end(), s.z.begin(), s.z.end());
    tp.insert(tp.end(), s.p.begin(), s.p.end());
  }
  StateDeviation d;
  d.x = relative_or_absolute(task.x, tx);
  d.r = relative_or_absolute(task.r, tr);
  d.z = relative_or_absolute(task.z, tz);
  d.p = relative_or_absolute(task.p_current, tp);
  for (std::size_t q = 0; q < task.rows.size(); ++q) {
    d.max_abs = std::max({d.max_abs, std::abs(task.x[q] - tx[q]), std::abs(task.r[q] - tr[q]),
                          std::abs(task.z[q] - tz[q]), std::abs(task.p_current[q] - tp[q])});
  }
  return d;
}

}  // namespace detail

/// Installs the reconstructed blocks, re-seeds the backup copies hosted by the
/// replacements (both generations, counted as extra elements) and recomputes
/// u on the replacements.
inline RecoveryReport finalize_recovery(ClusterState& c, RecoveryTask& task, const GroundTruth* truth = nullptr) {
  RecoveryReport rep;
  rep.failed = task.failed;
  rep.iteration = task.scalars.iteration;
  if (task.empty()) {
    rep.reconstructed = true;
    return rep;
  }
  for (std::size_t b = 0; b < task.failed.size(); ++b) {
    NodeState& n = c.nodes[task.failed[b]];
    const auto lo = static_cast<std::ptrdiff_t>(task.block_start[b]);
    const auto hi = lo + static_cast<std::ptrdiff_t>(n.rows.size());
    n.x.assign(task.x.begin() + lo, task.x.begin() + hi);
    n.r.assign(task.r.begin() + lo, task.r.begin() + hi);
    n.z.assign(task.z.begin() + lo, task.z.begin() + hi);
    n.p.assign(task.p_current.begin() + lo, task.p_current.begin() + hi);
    n.p_prev.assign(task.p_previous.begin() + lo, task.p_previous.begin() + hi);
    n.scalars = task.scalars;
  }
  detail::Phase phase(c);
  for (const NodeId h : task.failed) {
    NodeState& host = c.nodes[h];
    const ReceiveLayout& lay = c.layouts[h];
    host.backup_current.assign(lay.total, 0.0);
    host.backup_previous.assign(lay.total, 0.0);
    host.backup_generations = task.generations;
    for (NodeId o = 0; o < c.node_count(); ++o) {
      if (o == h || lay.indices[o].empty()) continue;
      const NodeState& owner = c.nodes[o];
      const auto& idx = lay.indices[o];
      for (std::size_t q = 0; q < idx.size(); ++q) {
        host.backup_current[lay.offset[o] + q] = owner.p[idx[q] - owner.rows.begin];
        if (task.generations >= 2) host.backup_previous[lay.offset[o] + q] = owner.p_prev[idx[q] - owner.rows.begin];
      }
      const std::size_t elements = idx.size() * (task.generations >= 2 ? 2 : 1);
      phase.send(o, h, elements);
      phase.extra(elements);
    }
  }
  task.cost += phase.finish();
  for (const NodeId h : task.failed) {
    local_spmv(c, c.nodes[h]);
    c.nodes[h].awaiting_recovery = false;
  }
  if (truth) rep.deviation = detail::measure_deviation(task, *truth);
  rep.reconstructed = true;
  rep.inner_direct = task.inner_direct;
  rep.inner_iterations = task.inner_iterations;
  rep.inner_residual = task.inner_residual;
  rep.flops = task.flops;
  rep.cost = task.cost;
  c.recovery_stats += task.cost;
  c.trace.record("recovery")
      .field("nodes", task.failed)
      .field("iteration", task.scalars.iteration)
      .field("inner_iterations", task.inner_iterations)
      .field("model_time", task.cost.model_time);
  return rep;
}

/// A failure arriving mid-reconstruction: the new nodes fail (replacements
/// included), get replaced, and the failed set grows. The caller restarts.
inline void handle_overlapping(ClusterState& c, std::vector<NodeId>& failed, const std::vector<NodeId>& new_nodes,
                               std::size_t& restarted_count, GroundTruth* truth = nullptr) {
  std::vector<NodeId> merged = failed;
  merged.insert(merged.end(), new_nodes.begin(), new_nodes.end());
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  if (merged.size() > c.redundancy()) {
    inject_failures(c, new_nodes);
    throw UnrecoverableError(std::to_string(merged.size()) + " concurrent failures exceed redundancy " +
                             std::to_string(c.redundancy()));
  }
  if (truth) truth->capture(c, new_nodes);
  inject_failures(c, new_nodes);
  provision_replacements(c, new_nodes);
  failed = std::move(merged);
  ++restarted_count;
  c.trace.record("restart").field("nodes", failed).field("restarted", restarted_count);
}

/// Full reconstruction with restarts. `pending` holds the overlapping events
/// that may interrupt this recovery, consumed front to back.
inline RecoveryReport run_recovery(ClusterState& c, std::vector<NodeId> failed, const InnerSolveConfig& inner,
                                   std::deque<FailureEvent>& pending, GroundTruth* truth = nullptr) {
  std::sort(failed.begin(), failed.end());
  std::size_t restarted = 0;
  CommStats discarded;
  for (;;) {
    RecoveryTask task = gather_surviving(c, failed, inner);
    auto interrupted = [&](RecoveryStage stage) {
      if (pending.empty() || pending.front().stage != stage) return false;
      const FailureEvent ev = pending.front();
      pending.pop_front();
      discarded += task.cost;
      handle_overlapping(c, failed, ev.nodes, restarted, truth);
      return true;
    };
    if (interrupted(RecoveryStage::gathered)) continue;
    reconstruct_p_z(task);
    if (interrupted(RecoveryStage::reconstructed_pz)) continue;
    reconstruct_r(c, task);
    if (interrupted(RecoveryStage::reconstructed_r)) continue;
    reconstruct_x(c, task);
    if (interrupted(RecoveryStage::reconstructed_x)) continue;
    // Traffic of abandoned attempts was still spent.
    task.cost += discarded;
    RecoveryReport rep = finalize_recovery(c, task, truth);
    rep.restarted_count = restarted;
    return rep;
  }
}

/// (‖r_solver‖ − ‖b − A x‖) / ‖b − A x‖; nullopt when b − A x vanishes.
inline std::optional<double> relative_residual_difference(std::span<const double> r_solver, const SparseMatrix& a,
                                                          std::span<const double> x, std::span<const double> b) {
  if (r_solver.size() != a.n_rows || x.size() != a.n_cols || b.size() != a.n_rows) {
    throw DimensionMismatch("relative_residual_difference: dimension mismatch");
  }
  Vector ax = spmv(a, x);
  double s = 0.0;
  for (std::size_t q = 0; q < ax.size(); ++q) {
    const double d = b[q] - ax[q];
    s += d * d;
  }
  const double true_norm = std::sqrt(s);
  if (true_norm == 0.0) return std::nullopt;
  return (norm2(r_solver) - true_norm) / true_norm;
}

}  // namespace esr
