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

// Round-synchronous simulation of N distributed-memory nodes.
//
// Each node owns one block row of A, b and every solver vector. Static data
// lives in `ClusterState::storage`, standing in for reliable external storage;
// a failed node loses its copy together with all dynamic data and gets it
// back when a replacement is provisioned.

#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "esr/planner.hpp"
#include "esr/sparse.hpp"

namespace esr {

enum class PreconditionerKind { block_jacobi, identity };

inline const char* to_string(PreconditionerKind k) {
  return k == PreconditionerKind::block_jacobi ? "block-jacobi" : "identity";
}

/// Problem-defining data of one node; never modified after build_cluster.
struct StaticNodeData {
  RowRange rows;
  SparseMatrix local_rows;  // A_{I_i, I}, global column numbering
  SparseMatrix diag_block;  // A_{I_i, I_i}, local numbering
  Vector b;
  std::shared_ptr<const DenseCholesky> block_factor;  // null for the identity preconditioner
};

/// Where node k keeps the copies it receives in every exchange: one
/// contiguous segment per owner holding S_ik ∪ (R_il for every l with d_il = k).
struct ReceiveLayout {
  std::vector<std::vector<Index>> indices;  // [owner] sorted global indices
  std::vector<std::size_t> offset;          // [owner] start in the flat buffer
  std::vector<std::size_t> spmv_count;      // [owner] |S_ik|
  std::size_t total = 0;
  /// For every stored entry of local_rows: < own size → p offset, else
  /// own size + flat buffer slot.
  std::vector<std::size_t> column_source;

  /// Flat slot of `s` from `owner`, or npos.
  std::size_t slot(NodeId owner, Index s) const {
    const auto& idx = indices[owner];
    const auto it = std::lower_bound(idx.begin(), idx.end(), s);
    if (it == idx.end() || *it != s) return npos;
    return offset[owner] + static_cast<std::size_t>(it - idx.begin());
  }
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
};

struct ReplicatedScalars {
  std::size_t iteration = 0;
  double alpha = 0.0;
  double beta_prev = 0.0;  // β^{(j−1)}; zero before the first update
  double rz = 0.0;         // r^{(j)}ᵀ z^{(j)}
  double r_norm = 0.0;
  double r_norm0 = 0.0;
};

struct NodeState {
  NodeId id = 0;
  RowRange rows;
  bool alive = true;
  bool awaiting_recovery = false;  // replacement without reconstructed state
  std::shared_ptr<const StaticNodeData> static_data;

  Vector x, r, z, p, p_prev, u;
  Vector backup_current;   // copies of others' p^{(j)}
  Vector backup_previous;  // copies of others' p^{(j−1)}
  std::size_t backup_generations = 0;
  ReplicatedScalars scalars;

  bool survivor() const noexcept { return alive && !awaiting_recovery; }
};

struct CommStats {
  std::size_t messages = 0;
  std::size_t elements_sent = 0;
  std::size_t extra_elements = 0;  // payload sent only for redundancy
  std::size_t extra_edges = 0;     // messages that exist only for redundancy
  std::size_t allreduce_count = 0;
  double model_time = 0.0;
  double extra_model_time = 0.0;  // part of model_time caused by redundancy

  CommStats& operator+=(const CommStats& o) {
    messages += o.messages;
    elements_sent += o.elements_sent;
    extra_elements += o.extra_elements;
    extra_edges += o.extra_edges;
    allreduce_count += o.allreduce_count;
    model_time += o.model_time;
    extra_model_time += o.extra_model_time;
    return *this;
  }
  friend CommStats operator+(CommStats a, const CommStats& b) { return a += b; }
  friend bool operator==(const CommStats&, const CommStats&) = default;
};

/// Optional JSON-lines event log.
class TraceSink {
 public:
  explicit TraceSink(std::ostream* out = nullptr) : out_(out) {}
  bool enabled() const noexcept { return out_ != nullptr; }

  class Record {
   public:
    Record(std::ostream* out, const std::string& event) : out_(out) {
      if (out_) ss_ << std::setprecision(17) << "{\"event\":\"" << event << '"';
    }
    Record(const Record&) = delete;
    ~Record() {
      if (out_) *out_ << ss_.str() << "}\n";
    }
    Record& field(const char* key, double v) {
      if (out_) ss_ << ",\"" << key << "\":" << v;
      return *this;
    }
    Record& field(const char* key, std::size_t v) {
      if (out_) ss_ << ",\"" << key << "\":" << v;
      return *this;
    }
    Record& field(const char* key, const std::vector<NodeId>& v) {
      if (out_) {
        ss_ << ",\"" << key << "\":[";
        for (std::size_t i = 0; i < v.size(); ++i) ss_ << (i ? "," : "") << v[i];
        ss_ << ']';
      }
      return *this;
    }
    Record& field(const char* key, const std::string& v) {
      if (out_) ss_ << ",\"" << key << "\":\"" << v << '"';
      return *this;
    }

   private:
    std::ostream* out_;
    std::ostringstream ss_;
  };

  Record record(const std::string& event) const { return Record(out_, event); }

 private:
  std::ostream* out_;
};

struct ClusterState {
  BlockRowPartition partition;
  CommPattern pattern;
  RedundancyPlan plan;
  LatencyModel model;
  PreconditionerKind preconditioner = PreconditionerKind::block_jacobi;

  std::vector<NodeState> nodes;
  std::vector<std::shared_ptr<const StaticNodeData>> storage;
  std::vector<ReceiveLayout> layouts;

  CommStats iteration_stats;  // exchanges and allreduces of the solver loop
  CommStats recovery_stats;   // reconstruction traffic
  std::size_t dropped_messages = 0;
  std::vector<NodeId> failure_notifications;
  TraceSink trace;

  std::size_t node_count() const noexcept { return nodes.size(); }
  std::size_t redundancy() const noexcept { return plan.redundancy(); }
  Index size() const noexcept { return partition.size(); }
  CommStats total_stats() const { return iteration_stats + recovery_stats; }
  bool all_alive() const {
    for (const auto& n : nodes) {
      if (!n.alive) return false;
    }
    return true;
  }
};

namespace detail {

inline ReceiveLayout make_layout(NodeId k, const CommPattern& pattern, const RedundancyPlan& plan,
                                 const StaticNodeData& data) {
  const std::size_t n_nodes = pattern.node_count();
  ReceiveLayout lay;
  lay.indices.resize(n_nodes);
  lay.offset.resize(n_nodes);
  lay.spmv_count.resize(n_nodes);
  for (NodeId i = 0; i < n_nodes; ++i) {
    if (i == k) continue;
    std::vector<Index> set = pattern.send_set(i, k);
    lay.spmv_count[i] = set.size();
    for (std::size_t r = 1; r <= plan.redundancy(); ++r) {
      if (plan.destination(i, r) != k) continue;
      const auto& extra = plan.extra_set(i, r);
      set.insert(set.end(), extra.begin(), extra.end());
    }
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    lay.indices[i] = std::move(set);
  }
  for (NodeId i = 0; i < n_nodes; ++i) {
    lay.offset[i] = lay.total;
    lay.total += lay.indices[i].size();
  }
  const RowRange own = data.rows;
  lay.column_source.reserve(data.local_rows.nnz());
  for (const Index c : data.local_rows.col_indices) {
    if (own.contains(c)) {
      lay.column_source.push_back(c - own.begin);
    } else {
      const std::size_t slot = lay.slot(pattern.partition().owner(c), c);
      lay.column_source.push_back(own.size() + slot);
    }
  }
  return lay;
}

inline double log2_rounds(std::size_t n) {
  std::size_t r = 0;
  while ((std::size_t{1} << r) < n) ++r;
  return static_cast<double>(r);
}

}  // namespace detail

/// Distributes A and b block-row-wise and factors each diagonal block when
/// block Jacobi is requested.
inline ClusterState build_cluster(const SparseMatrix& a, std::span<const double> b, const BlockRowPartition& part,
                                  const RedundancyPlan& plan, PreconditionerKind kind, LatencyModel model = {}) {
  if (!a.square() || a.n_rows != part.size() || b.size() != a.n_rows) {
    throw DimensionMismatch("build_cluster: inconsistent dimensions");
  }
  const std::size_t n_nodes = part.node_count();
  if (plan.redundancy() >= n_nodes && plan.redundancy() > 0) {
    throw InvalidArgument("build_cluster: redundancy must be below node count");
  }
  if (plan.node_count() != n_nodes) throw InvalidArgument("build_cluster: plan built for another node count");
  if (model.node_count() == 0) model = LatencyModel(n_nodes, 1.0, 0.01);
  if (model.node_count() != n_nodes) throw InvalidArgument("build_cluster: latency model size mismatch");

  ClusterState c;
  c.partition = part;
  c.pattern = compute_send_sets(a, part);
  c.plan = plan;
  c.model = std::move(model);
  c.preconditioner = kind;
  for (NodeId i = 0; i < n_nodes; ++i) {
    const RowRange rows = part.range(i);
    auto data = std::make_shared<StaticNodeData>();
    data->rows = rows;
    std::vector<Index> row_ids(rows.size());
    std::iota(row_ids.begin(), row_ids.end(), rows.begin);
    std::vector<Index> all_cols(a.n_cols);
    std::iota(all_cols.begin(), all_cols.end(), Index{0});
    data->local_rows = extract_submatrix(a, row_ids, all_cols);
    data->diag_block = extract_submatrix(a, row_ids, row_ids);
    data->b.assign(b.begin() + static_cast<std::ptrdiff_t>(rows.begin), b.begin() + static_cast<std::ptrdiff_t>(rows.end));
    if (kind == PreconditionerKind::block_jacobi) {
      data->block_factor = std::make_shared<const DenseCholesky>(data->diag_block);
    }
    c.storage.push_back(data);
  }
  for (NodeId i = 0; i < n_nodes; ++i) c.layouts.push_back(detail::make_layout(i, c.pattern, c.plan, *c.storage[i]));
  c.nodes.resize(n_nodes);
  for (NodeId i = 0; i < n_nodes; ++i) {
    NodeState& node = c.nodes[i];
    node.id = i;
    node.rows = part.range(i);
    node.static_data = c.storage[i];
    node.backup_current.assign(c.layouts[i].total, 0.0);
    node.backup_previous.assign(c.layouts[i].total, 0.0);
  }
  return c;
}

/// u_k = A_{I_k,I} p from the node's own block and its current copies.
inline void local_spmv(const ClusterState& c, NodeState& node) {
  const auto& data = *node.static_data;
  const auto& lay = c.layouts[node.id];
  const SparseMatrix& a = data.local_rows;
  const std::size_t own = node.rows.size();
  node.u.assign(own, 0.0);
  for (Index r = 0; r < a.n_rows; ++r) {
    double s = 0.0;
    for (Index k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
      const std::size_t src = lay.column_source[k];
      s += a.values[k] * (src < own ? node.p[src] : node.backup_current[src - own]);
    }
    node.u[r] = s;
  }
}

struct ExchangeResult {
  CommStats stats;
  std::size_t dropped = 0;
};

enum class ExchangeMode {
  advance,  // new generation: current copies age to previous
  refresh,  // overwrite the current generation in place
};

/// One SpMV exchange of the current p: every live node sends S_ik plus the
/// planned extra sets, receivers store the copies, and u is computed on every
/// live node. Messages to failed nodes are dropped and counted.
inline ExchangeResult exchange_spmv(ClusterState& c, ExchangeMode mode = ExchangeMode::advance) {
  const std::size_t n_nodes = c.node_count();
  ExchangeResult res;
  CommStats& st = res.stats;
  for (NodeId k = 0; k < n_nodes; ++k) {
    NodeState& recv = c.nodes[k];
    if (!recv.alive) continue;
    if (mode == ExchangeMode::advance) {
      std::swap(recv.backup_current, recv.backup_previous);
      recv.backup_current.assign(c.layouts[k].total, 0.0);
      recv.backup_generations = std::min<std::size_t>(2, recv.backup_generations + 1);
    } else if (recv.backup_generations == 0) {
      recv.backup_generations = 1;
    }
  }
  double base_round = 0.0;
  for (NodeId k = 0; k < n_nodes; ++k) {
    const ReceiveLayout& lay = c.layouts[k];
    NodeState& recv = c.nodes[k];
    for (NodeId i = 0; i < n_nodes; ++i) {
      if (i == k || lay.indices[i].empty()) continue;
      const NodeState& owner = c.nodes[i];
      if (!owner.alive) continue;
      if (!recv.alive) {
        ++res.dropped;
        continue;
      }
      const auto& idx = lay.indices[i];
      for (std::size_t q = 0; q < idx.size(); ++q) {
        recv.backup_current[lay.offset[i] + q] = owner.p[idx[q] - owner.rows.begin];
      }
      const std::size_t extra = idx.size() - lay.spmv_count[i];
      ++st.messages;
      st.elements_sent += idx.size();
      st.extra_elements += extra;
      if (lay.spmv_count[i] == 0) ++st.extra_edges;
      if (lay.spmv_count[i] > 0) base_round = std::max(base_round, c.model.message(i, k, lay.spmv_count[i]));
    }
  }
  // Redundancy rounds, one per k, each as long as its slowest sender.
  double extra_time = 0.0;
  for (std::size_t r = 1; r <= c.redundancy(); ++r) {
    double round = 0.0;
    for (NodeId i = 0; i < n_nodes; ++i) {
      const NodeId d = c.plan.destination(i, r);
      if (!c.nodes[i].alive || !c.nodes[d].alive) continue;
      const std::size_t sz = c.plan.extra_set(i, r).size();
      const double lat = is_extra_edge(c.plan, c.pattern, i, r) ? c.model.latency(i, d) : 0.0;
      round = std::max(round, lat + static_cast<double>(sz) * c.model.per_element());
    }
    extra_time += round;
  }
  st.model_time = base_round + extra_time;
  st.extra_model_time = extra_time;
  for (NodeId k = 0; k < n_nodes; ++k) {
    if (c.nodes[k].alive) local_spmv(c, c.nodes[k]);
  }
  c.dropped_messages += res.dropped;
  if (mode == ExchangeMode::advance) c.iteration_stats += st;
  c.trace.record("exchange")
      .field("messages", st.messages)
      .field("elements", st.elements_sent)
      .field("extra_elements", st.extra_elements)
      .field("extra_edges", st.extra_edges)
      .field("model_time", st.model_time)
      .field("dropped", res.dropped);
  return res;
}

/// Model cost of one allreduce: recursive doubling over ceil(log2 N) steps.
inline double allreduce_time(const ClusterState& c) {
  return detail::log2_rounds(c.node_count()) * (c.model.max_latency() + c.model.per_element());
}

/// Sums one contribution per node in ascending node-id order.
inline double allreduce_sum(ClusterState& c, std::span<const double> contributions) {
  if (contributions.size() != c.node_count()) throw InvalidArgument("allreduce_sum: contribution missing");
  for (const auto& n : c.nodes) {
    if (!n.alive) throw InvalidArgument("allreduce_sum: node " + std::to_string(n.id) + " is not live");
  }
  double s = 0.0;
  for (const double v : contributions) s += v;
  ++c.iteration_stats.allreduce_count;
  c.iteration_stats.model_time += allreduce_time(c);
  c.trace.record("allreduce").field("value", s);
  return s;
}

namespace detail {

inline void erase_dynamic(NodeState& n) {
  for (Vector* v : {&n.x, &n.r, &n.z, &n.p, &n.p_prev, &n.u, &n.backup_current, &n.backup_previous}) {
    Vector().swap(*v);
  }
  n.backup_generations = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  n.scalars = ReplicatedScalars{0, nan, nan, nan, nan, nan};
}

}  // namespace detail

/// Fail-stop: the named nodes lose every datum they hold.
inline void inject_failures(ClusterState& c, const std::vector<NodeId>& failed) {
  for (const NodeId f : failed) {
    if (f >= c.node_count()) throw InvalidArgument("inject_failures: node id out of range");
    if (!c.nodes[f].alive) throw InvalidArgument("inject_failures: node " + std::to_string(f) + " already failed");
  }
  for (const NodeId f : failed) {
    NodeState& n = c.nodes[f];
    detail::erase_dynamic(n);
    n.static_data.reset();
    n.alive = false;
    n.awaiting_recovery = false;
    c.failure_notifications.push_back(f);
  }
  c.trace.record("failure").field("nodes", failed);
}

/// Fresh nodes take the failed ids and row ranges and reload static data.
inline void provision_replacements(ClusterState& c, const std::vector<NodeId>& failed) {
  for (const NodeId f : failed) {
    NodeState& n = c.nodes.at(f);
    if (n.alive) continue;
    detail::erase_dynamic(n);
    n.static_data = c.storage[f];
    n.alive = true;
    n.awaiting_recovery = true;
  }
  c.trace.record("provision").field("nodes", failed);
}

/// Phases of a reconstruction; overlapping failures are checked after each.
enum class RecoveryStage { gathered, reconstructed_pz, reconstructed_r, reconstructed_x };

inline const char* to_string(RecoveryStage s) {
  switch (s) {
    case RecoveryStage::gathered: return "gathered";
    case RecoveryStage::reconstructed_pz: return "reconstructed-pz";
    case RecoveryStage::reconstructed_r: return "reconstructed-r";
    case RecoveryStage::reconstructed_x: return "reconstructed-x";
  }
  return "?";
}

/// A failure either fires right after the SpMV exchange of `iteration`, or
/// interrupts the reconstruction started by the nearest preceding iteration
/// event once it has finished `stage`.
struct FailureEvent {
  enum class Trigger { iteration, during_reconstruction };
  Trigger trigger = Trigger::iteration;
  std::size_t iteration = 0;
  RecoveryStage stage = RecoveryStage::gathered;
  std::vector<NodeId> nodes;

  static FailureEvent at(std::size_t iteration, std::vector<NodeId> nodes) {
    return {Trigger::iteration, iteration, RecoveryStage::gathered, std::move(nodes)};
  }
  static FailureEvent during(RecoveryStage stage, std::vector<NodeId> nodes) {
    return {Trigger::during_reconstruction, 0, stage, std::move(nodes)};
  }
};

struct FailureSchedule {
  std::vector<FailureEvent> events;

  bool empty() const noexcept { return events.empty(); }

  /// Static checks: ids in range, no duplicates within an event, at most ρ
  /// nodes per simultaneous failure, overlaps preceded by an iteration event.
  void validate(std::size_t node_count, std::size_t redundancy) const {
    bool seen_iteration = false;
    std::vector<std::pair<std::size_t, std::size_t>> per_iteration;
    for (const auto& e : events) {
      if (e.nodes.empty()) throw ConfigError("failure event without nodes");
      std::vector<NodeId> ids = e.nodes;
      std::sort(ids.begin(), ids.end());
      if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("duplicate node in failure event");
      if (ids.back() >= node_count) throw ConfigError("failure event names node " + std::to_string(ids.back()));
      if (e.nodes.size() > redundancy) {
        throw ConfigError("failure event with " + std::to_string(e.nodes.size()) + " nodes exceeds redundancy " +
                          std::to_string(redundancy));
      }
      if (e.trigger == FailureEvent::Trigger::iteration) {
        seen_iteration = true;
        per_iteration.emplace_back(e.iteration, e.nodes.size());
      } else if (!seen_iteration) {
        throw ConfigError("overlapping failure without a preceding iteration event");
      }
    }
    std::sort(per_iteration.begin(), per_iteration.end());
    for (std::size_t q = 0; q < per_iteration.size();) {
      std::size_t total = 0, r = q;
      for (; r < per_iteration.size() && per_iteration[r].first == per_iteration[q].first; ++r) {
        total += per_iteration[r].second;
      }
      if (total > redundancy) throw ConfigError("simultaneous failures exceed redundancy");
      q = r;
    }
  }
};

/// Holders of each element's copies after the last exchange.
struct CopyAudit {
  bool consistent = true;          // every stored copy equals the owner's value
  std::size_t min_current = 0;     // min over elements of nodes holding p^{(j)} (owner included)
  std::size_t min_previous = 0;    // same for p^{(j−1)}; 0 before the second exchange
  std::vector<std::string> issues;
};

/// Audits the backup stores against the owners' p and p_prev blocks.
inline CopyAudit audit_copies(const ClusterState& c) {
  CopyAudit audit;
  audit.min_current = std::numeric_limits<std::size_t>::max();
  audit.min_previous = std::numeric_limits<std::size_t>::max();
  const std::size_t n_nodes = c.node_count();
  for (NodeId i = 0; i < n_nodes; ++i) {
    const NodeState& owner = c.nodes[i];
    for (Index s = owner.rows.begin; s < owner.rows.end; ++s) {
      std::size_t cur = owner.alive && !owner.p.empty() ? 1 : 0;
      std::size_t prev = owner.alive && !owner.p_prev.empty() ? 1 : 0;
      for (NodeId k = 0; k < n_nodes; ++k) {
        if (k == i || !c.nodes[k].alive) continue;
        const std::size_t slot = c.layouts[k].slot(i, s);
        if (slot == ReceiveLayout::npos) continue;
        const NodeState& h = c.nodes[k];
        if (h.backup_generations >= 1 && slot < h.backup_current.size()) {
          ++cur;
          if (!owner.p.empty() && h.backup_current[slot] != owner.p[s - owner.rows.begin]) {
            audit.consistent = false;
            audit.issues.push_back("node " + std::to_string(k) + " holds stale p[" + std::to_string(s) + "]");
          }
        }
        if (h.backup_generations >= 2 && slot < h.backup_previous.size()) {
          ++prev;
          if (!owner.p_prev.empty() && h.backup_previous[slot] != owner.p_prev[s - owner.rows.begin]) {
            audit.consistent = false;
            audit.issues.push_back("node " + std::to_string(k) + " holds stale p_prev[" + std::to_string(s) + "]");
          }
        }
      }
      audit.min_current = std::min(audit.min_current, cur);
      audit.min_previous = std::min(audit.min_previous, prev);
    }
  }
  if (c.size() == 0) audit.min_current = audit.min_previous = 0;
  return audit;
}

/// Concatenates a per-node vector into a global one.
template <typename Member>
Vector assemble(const ClusterState& c, Member member) {
  Vector out(c.size(), 0.0);
  for (const auto& n : c.nodes) {
    const Vector& v = n.*member;
    if (v.size() != n.rows.size()) continue;
    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(n.rows.begin));
  }
  return out;
}

}  // namespace esr
