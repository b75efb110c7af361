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

// Invariant checks run by the `verify` subcommand on a single matrix.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "esr/harness.hpp"

namespace esr {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

inline Json to_json(const VerificationReport& rep) {
  Json checks = Json::array();
  for (const auto& c : rep.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return Json{{"schema_version", kReportSchemaVersion}, {"passed", rep.passed()}, {"checks", checks}};
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

}  // namespace detail

/// Plan coverage, copy audit, redundancy neutrality, residual consistency,
/// overhead bounds and, for ρ ≥ 1, reconstruction exactness of one failure.
inline VerificationReport verify_matrix(const ExperimentConfig& config, const SparseMatrix& a) {
  VerificationReport rep;
  const std::size_t rho = config.redundancy;
  const BlockRowPartition part(a.n_rows, config.nodes);
  const CommPattern pattern = compute_send_sets(a, part);
  const RedundancyPlan plan = compute_redundancy_plan(pattern, rho, config.nodes);
  const LatencyModel model(config.nodes, config.latency, config.bandwidth_cost);
  const Vector b = random_vector(a.n_rows, config.seed);

  {
    const PlanVerification v = verify_plan(plan, pattern);
    rep.checks.push_back({"plan-coverage", v.passed, std::to_string(v.violations.size()) + " violations"});
  }

  // Failure-free run with an audit after every exchange.
  SolverConfig sc = config.solver(rho);
  ClusterState c = build_cluster(a, b, part, plan, config.preconditioner, model);
  SolverState s = pcg_init(c, sc);
  bool audit_ok = true;
  std::string audit_detail = "all exchanges consistent";
  double min_extra = std::numeric_limits<double>::infinity(), max_extra = 0.0;
  try {
    while (!s.converged && s.iteration < sc.max_iterations) {
      const ExchangeResult ex = exchange_spmv(c, ExchangeMode::advance);
      min_extra = std::min(min_extra, ex.stats.extra_model_time);
      max_extra = std::max(max_extra, ex.stats.extra_model_time);
      const CopyAudit audit = audit_copies(c);
      const std::size_t need_prev = s.iteration >= 1 ? rho + 1 : 1;
      if (!audit.consistent || audit.min_current < rho + 1 || audit.min_previous < need_prev) {
        audit_ok = false;
        audit_detail = "iteration " + std::to_string(s.iteration) + ": minimum copies " +
                       std::to_string(audit.min_current) + "/" + std::to_string(audit.min_previous);
        break;
      }
      pcg_update(c, s, sc);
    }
  } catch (const Error& e) {
    audit_ok = false;
    audit_detail = e.what();
  }
  rep.checks.push_back({"copy-audit", audit_ok, audit_detail});
  rep.checks.push_back({"converged", s.converged, std::to_string(s.iteration) + " iterations"});

  const Vector x = assemble(c, &NodeState::x);
  const Vector r = assemble(c, &NodeState::r);
  {
    Vector ax = spmv(a, x);
    double gap = 0.0;
    for (Index q = 0; q < a.n_rows; ++q) gap += std::pow(r[q] - (b[q] - ax[q]), 2);
    const double rel = std::sqrt(gap) / norm2(b);
    rep.checks.push_back({"residual-consistency", rel <= 1e-10, "gap " + detail::fmt(rel)});
  }
  {
    ClusterState c0 = build_cluster(a, b, part, compute_redundancy_plan(pattern, 0, config.nodes),
                                    config.preconditioner, model);
    SolverConfig sc0 = config.solver(0);
    SolveResult r0 = pcg_run(c0, sc0);
    const bool same = r0.x == x && r0.iterations == s.iteration;
    rep.checks.push_back({"redundancy-neutrality", same, same ? "iterates identical" : "iterates differ"});
  }
  if (s.iteration > 0) {
    const OverheadEstimate est = estimate_overhead(plan, pattern, model);
    const double slack = 1e-12 * std::max(1.0, est.upper_time);
    const bool ok = min_extra + slack >= est.lower_time && max_extra <= est.upper_time + slack &&
                    est.upper_time <= est.cap_time + slack;
    rep.checks.push_back({"overhead-bounds", ok,
                          "measured [" + detail::fmt(min_extra) + ", " + detail::fmt(max_extra) + "] within [" +
                              detail::fmt(est.lower_time) + ", " + detail::fmt(est.upper_time) + "], cap " +
                              detail::fmt(est.cap_time)});
  }
  if (rho >= 1 && s.iteration >= 2) {
    const std::size_t nf = std::max<std::size_t>(1, std::min(config.failures, rho));
    const std::size_t trigger = trigger_iteration(0.5, s.iteration);
    ClusterState cd = build_cluster(a, b, part, plan, config.preconditioner, model);
    SolverConfig sv = sc;
    sv.verify_recovery = true;
    FailureSchedule sch;
    sch.events.push_back(FailureEvent::at(trigger, failure_nodes(FailureLocation::center, nf, config.nodes)));
    const SolveResult rd = pcg_run(cd, sv, sch);
    bool ok = rd.converged() && rd.recoveries.size() == 1 && rd.recoveries[0].deviation.has_value();
    std::string det = to_string(rd.status);
    if (ok) {
      const double dev = rd.recoveries[0].deviation->max_relative();
      const double tol = rd.recoveries[0].inner_direct ? 1e-12 : 1e-8;
      ok = dev <= tol;
      det = "deviation " + detail::fmt(dev);
    }
    rep.checks.push_back({"reconstruction-exactness", ok, det});
    const long diff = static_cast<long>(rd.iterations) - static_cast<long>(s.iteration);
    rep.checks.push_back({"iteration-preservation", rd.converged() && std::labs(diff) <= 2,
                          "difference " + std::to_string(diff)});
  }
  return rep;
}

}  // namespace esr
