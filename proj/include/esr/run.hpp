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
#include <chrono>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "esr/cluster.hpp"
#include "esr/pcg.hpp"
#include "esr/recovery.hpp"

namespace esr {

enum class RunStatus { converged, max_iterations, breakdown, unrecoverable, recovery_failed };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iterations: return "max-iterations";
    case RunStatus::breakdown: return "breakdown";
    case RunStatus::unrecoverable: return "unrecoverable";
    case RunStatus::recovery_failed: return "recovery-failed";
  }
  return "?";
}

struct RunOptions {
  /// Record host wall-clock seconds; off so that reports stay reproducible.
  bool wall_clock = false;
};

/// Outcome of one solve. `x` and `r` are only filled when a usable state exists.
struct SolveResult {
  RunStatus status = RunStatus::max_iterations;
  std::string diagnostic;
  std::size_t iterations = 0;
  double r_norm0 = 0.0;
  double r_norm = 0.0;            // recurrence residual
  double true_residual_norm = 0.0;  // ‖b − A x‖₂
  std::optional<double> delta;      // relative residual difference; nullopt if b − A x = 0
  Vector x;
  Vector r;
  IterationTrace trace;
  CommStats iteration_stats;
  CommStats recovery_stats;
  std::size_t exchanges = 0;
  double min_exchange_extra_time = 0.0;
  double max_exchange_extra_time = 0.0;
  std::vector<RecoveryReport> recoveries;
  std::size_t unfired_events = 0;
  std::optional<double> wall_seconds;

  bool converged() const noexcept { return status == RunStatus::converged; }
  bool failed() const noexcept {
    return status == RunStatus::breakdown || status == RunStatus::unrecoverable ||
           status == RunStatus::recovery_failed;
  }
  CommStats total_stats() const { return iteration_stats + recovery_stats; }
};

namespace detail {

struct FailureGroup {
  std::size_t iteration = 0;
  std::vector<NodeId> nodes;
  std::deque<FailureEvent> overlapping;
};

/// Iteration events sharing a trigger merge into one simultaneous failure;
/// each overlap belongs to the nearest preceding iteration event.
inline std::vector<FailureGroup> group_events(const FailureSchedule& schedule) {
  std::vector<FailureGroup> groups;
  for (const auto& e : schedule.events) {
    if (e.trigger == FailureEvent::Trigger::iteration) {
      groups.push_back({e.iteration, e.nodes, {}});
    } else {
      if (groups.empty()) throw ConfigError("overlapping failure without a preceding iteration event");
      groups.back().overlapping.push_back(e);
    }
  }
  std::stable_sort(groups.begin(), groups.end(),
                   [](const FailureGroup& a, const FailureGroup& b) { return a.iteration < b.iteration; });
  std::vector<FailureGroup> merged;
  for (auto& g : groups) {
    if (!merged.empty() && merged.back().iteration == g.iteration) {
      auto& m = merged.back();
      m.nodes.insert(m.nodes.end(), g.nodes.begin(), g.nodes.end());
      for (auto& o : g.overlapping) m.overlapping.push_back(std::move(o));
    } else {
      merged.push_back(std::move(g));
    }
  }
  for (auto& m : merged) {
    std::sort(m.nodes.begin(), m.nodes.end());
    m.nodes.erase(std::unique(m.nodes.begin(), m.nodes.end()), m.nodes.end());
  }
  return merged;
}

}  // namespace detail

/// Runs PCG to convergence on `c`, injecting the scheduled failures right after
/// the SpMV exchange of their trigger iteration and reconstructing the state
/// before the update continues.
inline SolveResult pcg_run(ClusterState& c, const SolverConfig& config, const FailureSchedule& schedule = {},
                           const RunOptions& options = {}) {
  config.validate();
  if (config.validate_schedule) schedule.validate(c.node_count(), c.redundancy());
  auto groups = detail::group_events(schedule);
  std::size_t next_group = 0;

  const auto t0 = std::chrono::steady_clock::now();
  SolveResult out;
  SolverState s;
  bool usable = true;
  bool first_exchange = true;
  auto note_exchange = [&](const ExchangeResult& ex) {
    ++out.exchanges;
    const double t = ex.stats.extra_model_time;
    if (first_exchange) {
      out.min_exchange_extra_time = out.max_exchange_extra_time = t;
      first_exchange = false;
    } else {
      out.min_exchange_extra_time = std::min(out.min_exchange_extra_time, t);
      out.max_exchange_extra_time = std::max(out.max_exchange_extra_time, t);
    }
  };
  try {
    s = pcg_init(c, config);
    while (!s.converged && s.iteration < config.max_iterations) {
      note_exchange(exchange_spmv(c, ExchangeMode::advance));
      while (next_group < groups.size() && groups[next_group].iteration <= s.iteration) {
        detail::FailureGroup& g = groups[next_group++];
        if (g.iteration < s.iteration) continue;
        GroundTruth truth;
        if (config.verify_recovery) truth.capture(c, g.nodes);
        s.trace.markers.push_back({s.iteration, "failure", g.nodes});
        inject_failures(c, g.nodes);
        provision_replacements(c, g.nodes);
        RecoveryReport rep = run_recovery(c, g.nodes, config.inner, g.overlapping,
                                          config.verify_recovery ? &truth : nullptr);
        out.unfired_events += g.overlapping.size();
        s.trace.markers.push_back({s.iteration, "recovery", rep.failed});
        out.recoveries.push_back(std::move(rep));
      }
      pcg_update(c, s, config);
    }
    out.status = s.converged ? RunStatus::converged : RunStatus::max_iterations;
  } catch (const UnrecoverableError& e) {
    out.status = RunStatus::unrecoverable;
    out.diagnostic = e.what();
    usable = false;
  } catch (const RecoveryError& e) {
    out.status = RunStatus::recovery_failed;
    out.diagnostic = e.what();
    usable = false;
  } catch (const BreakdownError& e) {
    out.status = RunStatus::breakdown;
    out.diagnostic = e.what();
  } catch (const NotSpdError& e) {
    out.status = RunStatus::breakdown;
    out.diagnostic = e.what();
    usable = false;
  }
  for (; next_group < groups.size(); ++next_group) out.unfired_events += 1 + groups[next_group].overlapping.size();

  out.iterations = s.iteration;
  out.r_norm0 = s.r_norm0;
  out.r_norm = s.r_norm;
  out.trace = std::move(s.trace);
  out.iteration_stats = c.iteration_stats;
  out.recovery_stats = c.recovery_stats;
  if (usable && c.all_alive()) {
    out.x = assemble(c, &NodeState::x);
    out.r = assemble(c, &NodeState::r);
    Vector b(c.size(), 0.0);
    for (const auto& n : c.nodes) {
      std::copy(n.static_data->b.begin(), n.static_data->b.end(), b.begin() + static_cast<std::ptrdiff_t>(n.rows.begin));
    }
    Vector ax(c.size(), 0.0);
    for (const auto& n : c.nodes) {
      const Vector& rows_ax = spmv(n.static_data->local_rows, out.x);
      std::copy(rows_ax.begin(), rows_ax.end(), ax.begin() + static_cast<std::ptrdiff_t>(n.rows.begin));
    }
    double ss = 0.0;
    for (Index q = 0; q < ax.size(); ++q) ss += (b[q] - ax[q]) * (b[q] - ax[q]);
    out.true_residual_norm = std::sqrt(ss);
    if (out.true_residual_norm > 0.0) out.delta = (norm2(out.r) - out.true_residual_norm) / out.true_residual_norm;
  }
  if (options.wall_clock) {
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  c.trace.record("run").field("status", std::string(to_string(out.status))).field("iterations", out.iterations);
  return out;
}

}  // namespace esr
