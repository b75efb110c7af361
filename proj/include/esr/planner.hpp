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

// Redundancy planning for the search-direction copies.
//
// During u = A p every node k must receive the elements of p owned by node i
// that its rows touch (the send set S_ik). Those copies are free redundancy.
// Elements that reach fewer than ρ other nodes are topped up by piggybacking
// extra sets R_ik onto the messages to the backup destinations d_ik.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "esr/sparse.hpp"

namespace esr {

/// Sparsity-induced SpMV traffic.
class CommPattern {
 public:
  CommPattern() = default;
  CommPattern(BlockRowPartition partition, std::vector<std::vector<std::vector<Index>>> send)
      : partition_(std::move(partition)), send_(std::move(send)) {}

  std::size_t node_count() const noexcept { return partition_.node_count(); }
  const BlockRowPartition& partition() const noexcept { return partition_; }
  const RowRange& owned(NodeId i) const { return partition_.range(i); }

  /// Sorted global indices of owner's elements needed by receiver. Empty for owner == receiver.
  const std::vector<Index>& send_set(NodeId owner, NodeId receiver) const { return send_.at(owner).at(receiver); }

  bool sends(NodeId owner, NodeId receiver, Index s) const {
    const auto& set = send_set(owner, receiver);
    return std::binary_search(set.begin(), set.end(), s);
  }

 private:
  BlockRowPartition partition_;
  std::vector<std::vector<std::vector<Index>>> send_;
};

inline CommPattern compute_send_sets(const SparseMatrix& a, const BlockRowPartition& part) {
  if (!a.square() || a.n_rows != part.size()) throw DimensionMismatch("compute_send_sets: partition does not match A");
  const std::size_t n_nodes = part.node_count();
  std::vector<std::vector<std::vector<Index>>> send(n_nodes, std::vector<std::vector<Index>>(n_nodes));
  for (NodeId k = 0; k < n_nodes; ++k) {
    const RowRange rows = part.range(k);
    for (Index r = rows.begin; r < rows.end; ++r) {
      for (const Index c : a.row_cols(r)) {
        const NodeId i = part.owner(c);
        if (i != k) send[i][k].push_back(c);
      }
    }
  }
  for (auto& per_owner : send) {
    for (auto& set : per_owner) {
      std::sort(set.begin(), set.end());
      set.erase(std::unique(set.begin(), set.end()), set.end());
    }
  }
  return CommPattern(part, std::move(send));
}

/// m_i(s): number of other nodes s is sent to during SpMV.
inline std::size_t multiplicity(const CommPattern& pattern, NodeId i, Index s) {
  if (!pattern.owned(i).contains(s)) {
    throw InvalidArgument("multiplicity: element " + std::to_string(s) + " not owned by node " + std::to_string(i));
  }
  std::size_t m = 0;
  for (NodeId k = 0; k < pattern.node_count(); ++k) {
    if (k != i && pattern.sends(i, k, s)) ++m;
  }
  return m;
}

/// m_i(s) for every s ∈ I_i, indexed by local offset.
inline std::vector<std::size_t> multiplicities(const CommPattern& pattern, NodeId i) {
  const RowRange own = pattern.owned(i);
  std::vector<std::size_t> m(own.size(), 0);
  for (NodeId k = 0; k < pattern.node_count(); ++k) {
    if (k == i) continue;
    for (const Index s : pattern.send_set(i, k)) ++m[s - own.begin];
  }
  return m;
}

/// d_ik: alternate +1, −1, +2, −2, ... around the ring of nodes.
inline NodeId backup_destination(NodeId i, std::size_t round, std::size_t node_count) {
  if (round == 0 || round >= node_count) {
    throw InvalidArgument("backup_destination: round " + std::to_string(round) + " outside [1, " +
                          std::to_string(node_count) + ")");
  }
  if (i >= node_count) throw InvalidArgument("backup_destination: node id out of range");
  if (round % 2 == 1) return (i + (round + 1) / 2) % node_count;
  const std::size_t back = (round / 2) % node_count;
  return (i + node_count - back) % node_count;
}

class RedundancyPlan {
 public:
  RedundancyPlan() = default;
  RedundancyPlan(std::size_t redundancy, std::vector<std::vector<NodeId>> destinations,
                 std::vector<std::vector<std::vector<Index>>> extra_sets)
      : redundancy_(redundancy), destinations_(std::move(destinations)), extra_sets_(std::move(extra_sets)) {}

  std::size_t redundancy() const noexcept { return redundancy_; }
  std::size_t node_count() const noexcept { return destinations_.size(); }

  /// Rounds are 1-based, matching d_i1 .. d_iρ.
  NodeId destination(NodeId i, std::size_t round) const { return destinations_.at(i).at(round - 1); }
  const std::vector<Index>& extra_set(NodeId i, std::size_t round) const { return extra_sets_.at(i).at(round - 1); }
  std::vector<Index>& mutable_extra_set(NodeId i, std::size_t round) { return extra_sets_.at(i).at(round - 1); }

 private:
  std::size_t redundancy_ = 0;
  std::vector<std::vector<NodeId>> destinations_;
  std::vector<std::vector<std::vector<Index>>> extra_sets_;
};

/// Processes rounds k = 1..ρ in order. In round k, s ∈ S_i joins R_ik when it
/// is not already sent to d_ik and m_i(s) − g_i(s) ≤ ρ − k, where g_i(s) counts
/// the rounds 1..k whose destination already receives s through S_{i,d_ik}.
/// Every element ends on exactly max(ρ, m_i(s)) other nodes.
inline RedundancyPlan compute_redundancy_plan(const CommPattern& pattern, std::size_t redundancy,
                                              std::size_t node_count) {
  if (node_count != pattern.node_count()) throw InvalidArgument("compute_redundancy_plan: node count mismatch");
  if (redundancy >= node_count) {
    throw InvalidArgument("compute_redundancy_plan: redundancy " + std::to_string(redundancy) +
                          " must be below node count " + std::to_string(node_count));
  }
  std::vector<std::vector<NodeId>> dest(node_count, std::vector<NodeId>(redundancy));
  std::vector<std::vector<std::vector<Index>>> extra(node_count, std::vector<std::vector<Index>>(redundancy));
  const auto rho = static_cast<std::int64_t>(redundancy);
  for (NodeId i = 0; i < node_count; ++i) {
    const RowRange own = pattern.owned(i);
    const auto m = multiplicities(pattern, i);
    std::vector<std::int64_t> g(own.size(), 0);
    for (std::size_t k = 1; k <= redundancy; ++k) {
      const NodeId d = backup_destination(i, k, node_count);
      dest[i][k - 1] = d;
      const auto& sd = pattern.send_set(i, d);
      auto it = sd.begin();
      for (Index s = own.begin; s < own.end; ++s) {
        while (it != sd.end() && *it < s) ++it;
        const std::size_t off = s - own.begin;
        if (it != sd.end() && *it == s) {
          ++g[off];
        } else if (static_cast<std::int64_t>(m[off]) - g[off] <= rho - static_cast<std::int64_t>(k)) {
          extra[i][k - 1].push_back(s);
        }
      }
    }
  }
  return RedundancyPlan(redundancy, std::move(dest), std::move(extra));
}

struct CoverageViolation {
  NodeId owner = 0;
  Index element = 0;
  std::size_t copies = 0;
};

struct PlanVerification {
  bool passed = true;
  std::vector<CoverageViolation> violations;
  std::vector<std::string> structural;
};

/// copies of s on other nodes after one SpMV exchange, indexed by local offset.
inline std::vector<std::size_t> copy_counts(const RedundancyPlan& plan, const CommPattern& pattern, NodeId i) {
  const RowRange own = pattern.owned(i);
  const std::size_t n_nodes = pattern.node_count();
  std::vector<std::size_t> copies(own.size(), 0);
  std::vector<char> reached(own.size());
  for (NodeId k = 0; k < n_nodes; ++k) {
    if (k == i) continue;
    std::fill(reached.begin(), reached.end(), 0);
    for (const Index s : pattern.send_set(i, k)) reached[s - own.begin] = 1;
    for (std::size_t r = 1; r <= plan.redundancy(); ++r) {
      if (plan.destination(i, r) != k) continue;
      for (const Index s : plan.extra_set(i, r)) {
        if (own.contains(s)) reached[s - own.begin] = 1;
      }
    }
    for (std::size_t off = 0; off < own.size(); ++off) copies[off] += reached[off];
  }
  return copies;
}

/// Brute-force check that every element reaches at least ρ distinct other nodes.
inline PlanVerification verify_plan(const RedundancyPlan& plan, const CommPattern& pattern) {
  PlanVerification out;
  const std::size_t n_nodes = pattern.node_count();
  if (plan.node_count() != n_nodes) {
    out.passed = false;
    out.structural.push_back("plan node count differs from pattern");
    return out;
  }
  for (NodeId i = 0; i < n_nodes; ++i) {
    for (std::size_t r = 1; r <= plan.redundancy(); ++r) {
      const NodeId d = plan.destination(i, r);
      if (d == i || d >= n_nodes) out.structural.push_back("bad destination for node " + std::to_string(i));
      for (std::size_t q = 1; q < r; ++q) {
        if (plan.destination(i, q) == d) out.structural.push_back("repeated destination for node " + std::to_string(i));
      }
      for (const Index s : plan.extra_set(i, r)) {
        if (!pattern.owned(i).contains(s)) out.structural.push_back("extra element not owned by node " + std::to_string(i));
      }
    }
    const auto copies = copy_counts(plan, pattern, i);
    for (std::size_t off = 0; off < copies.size(); ++off) {
      if (copies[off] < plan.redundancy()) {
        out.violations.push_back({i, pattern.owned(i).begin + off, copies[off]});
      }
    }
  }
  out.passed = out.violations.empty() && out.structural.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Latency-bandwidth model

/// λ per (sender, receiver) pair plus a cost β̂ per element.
class LatencyModel {
 public:
  LatencyModel() = default;
  LatencyModel(std::size_t node_count, double latency, double per_element)
      : node_count_(node_count), latency_(node_count * node_count, latency), per_element_(per_element) {
    check();
  }
  LatencyModel(std::size_t node_count, std::vector<double> latency, double per_element)
      : node_count_(node_count), latency_(std::move(latency)), per_element_(per_element) {
    if (latency_.size() != node_count * node_count) throw InvalidArgument("LatencyModel: need N*N latencies");
    check();
  }

  std::size_t node_count() const noexcept { return node_count_; }
  double latency(NodeId from, NodeId to) const { return latency_.at(from * node_count_ + to); }
  double per_element() const noexcept { return per_element_; }
  double max_latency() const {
    return latency_.empty() ? 0.0 : *std::max_element(latency_.begin(), latency_.end());
  }
  /// Time of one message of `elements` values.
  double message(NodeId from, NodeId to, std::size_t elements) const {
    return latency(from, to) + static_cast<double>(elements) * per_element_;
  }

 private:
  void check() const {
    if (!(per_element_ > 0.0)) throw InvalidArgument("LatencyModel: per-element cost must be positive");
    for (const double l : latency_) {
      if (l < 0.0) throw InvalidArgument("LatencyModel: negative latency");
    }
  }

  std::size_t node_count_ = 0;
  std::vector<double> latency_;
  double per_element_ = 0.01;
};

/// A backup edge costs an extra latency when it carries extra elements but no
/// SpMV payload.
inline bool is_extra_edge(const RedundancyPlan& plan, const CommPattern& pattern, NodeId i, std::size_t round) {
  return !plan.extra_set(i, round).empty() && pattern.send_set(i, plan.destination(i, round)).empty();
}

struct OverheadEstimate {
  std::size_t lower_elements = 0;  // max_i Σ_k |R_ik|
  std::size_t upper_elements = 0;  // Σ_k max_i |R_ik|
  double lower_time = 0.0;         // Σ_k max_i |R_ik| β̂
  double upper_time = 0.0;         // adds max_i λ_ik in rounds that need an extra edge
  double cap_time = 0.0;           // ρ (λ_max + ceil(n/N) β̂)
  std::vector<std::size_t> per_round_max_extra;
  std::vector<bool> round_needs_extra_edge;
};

inline OverheadEstimate estimate_overhead(const RedundancyPlan& plan, const CommPattern& pattern,
                                          const LatencyModel& model) {
  const std::size_t n_nodes = pattern.node_count();
  if (model.node_count() != n_nodes) throw InvalidArgument("estimate_overhead: latency map size mismatch");
  OverheadEstimate est;
  const std::size_t rho = plan.redundancy();
  const double beta = model.per_element();
  std::vector<std::size_t> per_owner_total(n_nodes, 0);
  for (std::size_t k = 1; k <= rho; ++k) {
    std::size_t max_extra = 0;
    double max_lat = 0.0;
    bool extra_edge = false;
    for (NodeId i = 0; i < n_nodes; ++i) {
      const std::size_t sz = plan.extra_set(i, k).size();
      max_extra = std::max(max_extra, sz);
      per_owner_total[i] += sz;
      max_lat = std::max(max_lat, model.latency(i, plan.destination(i, k)));
      extra_edge = extra_edge || is_extra_edge(plan, pattern, i, k);
    }
    est.per_round_max_extra.push_back(max_extra);
    est.round_needs_extra_edge.push_back(extra_edge);
    est.upper_elements += max_extra;
    est.lower_time += static_cast<double>(max_extra) * beta;
    est.upper_time += static_cast<double>(max_extra) * beta + (extra_edge ? max_lat : 0.0);
  }
  est.lower_elements = per_owner_total.empty() ? 0 : *std::max_element(per_owner_total.begin(), per_owner_total.end());
  const double block = static_cast<double>(pattern.partition().max_block());
  est.cap_time = static_cast<double>(rho) * (model.max_latency() + block * beta);
  return est;
}

/// [i][k-1]: A_{I_{d_ik}, I_i} has a stored nonzero, so round k costs node i no extra latency.
inline std::vector<std::vector<bool>> zero_latency_condition(const SparseMatrix& a, const BlockRowPartition& part,
                                                             std::size_t redundancy) {
  if (!a.square() || a.n_rows != part.size()) throw DimensionMismatch("zero_latency_condition: partition mismatch");
  const std::size_t n_nodes = part.node_count();
  if (redundancy >= n_nodes && redundancy > 0) throw InvalidArgument("zero_latency_condition: redundancy >= node count");
  std::vector<std::vector<bool>> out(n_nodes, std::vector<bool>(redundancy, false));
  for (NodeId i = 0; i < n_nodes; ++i) {
    const RowRange cols = part.range(i);
    for (std::size_t k = 1; k <= redundancy; ++k) {
      const RowRange rows = part.range(backup_destination(i, k, n_nodes));
      bool coupled = false;
      for (Index r = rows.begin; r < rows.end && !coupled; ++r) {
        const auto rc = a.row_cols(r);
        const auto it = std::lower_bound(rc.begin(), rc.end(), cols.begin);
        coupled = it != rc.end() && *it < cols.end;
      }
      out[i][k - 1] = coupled;
    }
  }
  return out;
}

}  // namespace esr
