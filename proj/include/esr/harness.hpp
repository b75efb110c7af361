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

// Batch experiments: reference, undisturbed and disturbed runs over a grid of
// failure progress and location cells, with overhead statistics.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "esr/generators.hpp"
#include "esr/json_io.hpp"
#include "esr/matrix_market.hpp"
#include "esr/run.hpp"

namespace esr {

enum class FailureLocation { start, center };

inline const char* to_string(FailureLocation l) { return l == FailureLocation::start ? "start" : "center"; }

inline FailureLocation parse_location(const std::string& s) {
  if (s == "start") return FailureLocation::start;
  if (s == "center") return FailureLocation::center;
  throw ConfigError("failure location must be start or center, got '" + s + "'");
}

/// start: {0..nf−1}; center: {⌊N/2⌋..⌊N/2⌋+nf−1}, wrapping past N−1.
inline std::vector<NodeId> failure_nodes(FailureLocation loc, std::size_t nf, std::size_t node_count) {
  if (nf > node_count) throw ConfigError("more failures than nodes");
  const NodeId first = loc == FailureLocation::start ? 0 : node_count / 2;
  std::vector<NodeId> out;
  for (std::size_t q = 0; q < nf; ++q) out.push_back((first + q) % node_count);
  std::sort(out.begin(), out.end());
  return out;
}

/// ⌈fraction · reference iterations⌉.
inline std::size_t trigger_iteration(double fraction, std::size_t reference_iterations) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(reference_iterations)));
}

struct ExperimentConfig {
  std::string matrix_path;
  std::string generator;
  std::size_t nodes = 8;
  std::size_t redundancy = 1;
  std::size_t failures = 1;
  std::vector<double> fractions{0.2, 0.5, 0.8};
  std::vector<FailureLocation> locations{FailureLocation::start, FailureLocation::center};
  std::size_t repetitions = 5;
  std::uint64_t seed = 1;
  double tolerance = 1e-8;
  double inner_tolerance = 1e-14;
  Index direct_threshold = 4096;
  std::size_t max_iterations = 10000;
  double latency = 1.0;
  double bandwidth_cost = 0.01;
  PreconditionerKind preconditioner = PreconditionerKind::block_jacobi;
  bool verify_recovery = true;
  bool wall_clock = false;
  std::string output;
  std::string format = "json";
  std::string trace;

  void validate() const {
    if (matrix_path.empty() == generator.empty()) throw ConfigError("exactly one of matrix path and generator is required");
    if (nodes == 0) throw ConfigError("node count must be positive");
    if (redundancy >= nodes && redundancy > 0) throw ConfigError("redundancy must be smaller than the node count");
    if (failures > redundancy) throw ConfigError("failures must not exceed redundancy");
    for (const double f : fractions) {
      if (!(f > 0.0 && f < 1.0)) throw ConfigError("failure fractions must lie in (0,1)");
    }
    if (repetitions == 0) throw ConfigError("repetitions must be positive");
    if (!(tolerance > 0.0 && tolerance < 1.0)) throw ConfigError("tolerance must lie in (0,1)");
    if (!(inner_tolerance > 0.0 && inner_tolerance < 1.0)) throw ConfigError("inner tolerance must lie in (0,1)");
    if (latency < 0.0) throw ConfigError("latency must be non-negative");
    if (!(bandwidth_cost > 0.0)) throw ConfigError("bandwidth cost must be positive");
    if (format != "json" && format != "csv") throw ConfigError("format must be json or csv");
  }

  SolverConfig solver(std::size_t rho) const {
    SolverConfig s;
    s.rel_tolerance = tolerance;
    s.max_iterations = max_iterations;
    s.preconditioner = preconditioner;
    s.redundancy = rho;
    s.inner.rel_tolerance = inner_tolerance;
    s.inner.direct_threshold = direct_threshold;
    s.verify_recovery = verify_recovery;
    s.validate_schedule = false;
    return s;
  }
};

inline Json to_json(const ExperimentConfig& c) {
  Json locs = Json::array();
  for (const auto l : c.locations) locs.push_back(to_string(l));
  return Json{{"matrix", c.matrix_path},
              {"gen", c.generator},
              {"nodes", c.nodes},
              {"redundancy", c.redundancy},
              {"failures", c.failures},
              {"fail_at", c.fractions},
              {"fail_location", locs},
              {"reps", c.repetitions},
              {"seed", c.seed},
              {"tol", c.tolerance},
              {"inner_tol", c.inner_tolerance},
              {"direct_threshold", c.direct_threshold},
              {"max_iterations", c.max_iterations},
              {"latency", c.latency},
              {"bandwidth_cost", c.bandwidth_cost},
              {"preconditioner", to_string(c.preconditioner)},
              {"verify_recovery", c.verify_recovery},
              {"wall_clock", c.wall_clock}};
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
inline ExperimentConfig config_from_json(const Json& j, ExperimentConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "matrix") base.matrix_path = v.get<std::string>();
      else if (key == "gen") base.generator = v.get<std::string>();
      else if (key == "nodes") base.nodes = v.get<std::size_t>();
      else if (key == "redundancy") base.redundancy = v.get<std::size_t>();
      else if (key == "failures") base.failures = v.get<std::size_t>();
      else if (key == "fail_at") base.fractions = v.get<std::vector<double>>();
      else if (key == "fail_location") {
        base.locations.clear();
        if (v.is_string()) {
          base.locations.push_back(parse_location(v.get<std::string>()));
        } else {
          for (const auto& s : v) base.locations.push_back(parse_location(s.get<std::string>()));
        }
      } else if (key == "reps") base.repetitions = v.get<std::size_t>();
      else if (key == "seed") base.seed = v.get<std::uint64_t>();
      else if (key == "tol") base.tolerance = v.get<double>();
      else if (key == "inner_tol") base.inner_tolerance = v.get<double>();
      else if (key == "direct_threshold") base.direct_threshold = v.get<Index>();
      else if (key == "max_iterations") base.max_iterations = v.get<std::size_t>();
      else if (key == "latency") base.latency = v.get<double>();
      else if (key == "bandwidth_cost") base.bandwidth_cost = v.get<double>();
      else if (key == "preconditioner") {
        const auto s = v.get<std::string>();
        if (s == "block-jacobi") base.preconditioner = PreconditionerKind::block_jacobi;
        else if (s == "identity") base.preconditioner = PreconditionerKind::identity;
        else throw ConfigError("unknown preconditioner '" + s + "'");
      } else if (key == "verify_recovery") base.verify_recovery = v.get<bool>();
      else if (key == "wall_clock") base.wall_clock = v.get<bool>();
      else if (key == "output") base.output = v.get<std::string>();
      else if (key == "format") base.format = v.get<std::string>();
      else if (key == "trace") base.trace = v.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return base;
}

inline SparseMatrix load_matrix(const ExperimentConfig& c) {
  SparseMatrix a;
  if (c.generator.empty()) {
    a = load_matrix_market(c.matrix_path);
  } else {
    try {
      a = generate_matrix(c.generator);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  check_structurally_spd(a);
  return a;
}

enum class RunKind { reference, undisturbed, disturbed };

inline const char* to_string(RunKind k) {
  switch (k) {
    case RunKind::reference: return "reference";
    case RunKind::undisturbed: return "undisturbed";
    case RunKind::disturbed: return "disturbed";
  }
  return "?";
}

struct RunRecord {
  RunKind kind = RunKind::reference;
  std::size_t rho = 0;
  std::size_t nf = 0;
  std::optional<FailureLocation> location;
  std::optional<double> fraction;
  std::size_t repetition = 0;
  std::uint64_t rhs_seed = 0;
  std::size_t trigger_iteration = 0;
  std::vector<NodeId> failed_nodes;
  SolveResult result;
  std::size_t reference_iterations = 0;
  std::optional<double> reference_delta;
  double reference_model_time = 0.0;
  std::size_t reference_elements = 0;
  /// Relative to the reference run of the same repetition.
  double element_overhead = 0.0;
  double time_overhead = 0.0;            // (T − T_ref) / T_ref
  double undisturbed_overhead = 0.0;     // of the matching undisturbed run
  double reconstruction_overhead = 0.0;  // T_recon / T_ref
  double decomposition_gap = 0.0;        // time − (undisturbed + reconstruction)
  std::size_t recovery_flops = 0;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Sample mean and standard deviation (n − 1 denominator; 0 for one sample).
inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (const double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (const double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct OverheadAggregate {
  std::size_t rho = 0;
  std::size_t nf = 0;
  FailureLocation location = FailureLocation::start;
  std::size_t runs = 0;
  std::size_t converged = 0;
  Summary undisturbed;
  Summary reconstruction;
  Summary with_failures;
  Summary elements;
  Summary iteration_difference;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::size_t matrix_rows = 0;
  std::size_t matrix_nnz = 0;
  std::vector<RunRecord> runs;
  std::vector<OverheadAggregate> aggregates;
};

namespace detail {

inline double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

struct Runner {
  const ExperimentConfig& config;
  const SparseMatrix& a;
  BlockRowPartition part;
  CommPattern pattern;
  LatencyModel model;
  std::ostream* trace;

  Runner(const ExperimentConfig& c, const SparseMatrix& m, std::ostream* t)
      : config(c), a(m), part(m.n_rows, c.nodes), pattern(compute_send_sets(m, part)),
        model(c.nodes, c.latency, c.bandwidth_cost), trace(t) {}

  SolveResult solve(std::size_t rho, const Vector& b, const FailureSchedule& schedule) const {
    const RedundancyPlan plan = compute_redundancy_plan(pattern, rho, config.nodes);
    ClusterState c = build_cluster(a, b, part, plan, config.preconditioner, model);
    c.trace = TraceSink(trace);
    return pcg_run(c, config.solver(rho), schedule, RunOptions{config.wall_clock});
  }
};

}  // namespace detail

inline ExperimentReport run_experiment(const ExperimentConfig& config, const SparseMatrix& a,
                                       std::ostream* trace = nullptr) {
  config.validate();
  if (config.nodes > a.n_rows) throw ConfigError("more nodes than matrix rows");
  detail::Runner runner(config, a, trace);
  ExperimentReport rep;
  rep.config = config;
  rep.matrix_rows = a.n_rows;
  rep.matrix_nnz = a.nnz();
  const std::size_t rho = config.redundancy;
  for (std::size_t rep_idx = 0; rep_idx < config.repetitions; ++rep_idx) {
    const std::uint64_t seed = config.seed + rep_idx;
    const Vector b = random_vector(a.n_rows, seed);
    RunRecord ref;
    ref.kind = RunKind::reference;
    ref.repetition = rep_idx;
    ref.rhs_seed = seed;
    ref.result = runner.solve(0, b, {});
    const double t_ref = ref.result.total_stats().model_time;
    const std::size_t e_ref = ref.result.total_stats().elements_sent;
    auto fill_reference = [&](RunRecord& r) {
      r.reference_iterations = ref.result.iterations;
      r.reference_delta = ref.result.delta;
      r.reference_model_time = t_ref;
      r.reference_elements = e_ref;
      const CommStats tot = r.result.total_stats();
      r.element_overhead = detail::ratio(static_cast<double>(tot.elements_sent) - static_cast<double>(e_ref),
                                         static_cast<double>(e_ref));
      r.time_overhead = detail::ratio(tot.model_time - t_ref, t_ref);
      r.reconstruction_overhead = detail::ratio(r.result.recovery_stats.model_time, t_ref);
      for (const auto& x : r.result.recoveries) r.recovery_flops += x.flops;
    };
    fill_reference(ref);
    rep.runs.push_back(ref);
    if (rho == 0) continue;

    RunRecord und;
    und.kind = RunKind::undisturbed;
    und.rho = rho;
    und.repetition = rep_idx;
    und.rhs_seed = seed;
    und.result = runner.solve(rho, b, {});
    fill_reference(und);
    und.undisturbed_overhead = und.time_overhead;
    rep.runs.push_back(und);
    if (config.failures == 0) continue;

    for (const FailureLocation loc : config.locations) {
      for (const double f : config.fractions) {
        RunRecord d;
        d.kind = RunKind::disturbed;
        d.rho = rho;
        d.nf = config.failures;
        d.location = loc;
        d.fraction = f;
        d.repetition = rep_idx;
        d.rhs_seed = seed;
        d.trigger_iteration = trigger_iteration(f, ref.result.iterations);
        d.failed_nodes = failure_nodes(loc, config.failures, config.nodes);
        FailureSchedule sch;
        sch.events.push_back(FailureEvent::at(d.trigger_iteration, d.failed_nodes));
        d.result = runner.solve(rho, b, sch);
        fill_reference(d);
        d.undisturbed_overhead = und.time_overhead;
        d.decomposition_gap = d.time_overhead - (d.undisturbed_overhead + d.reconstruction_overhead);
        rep.runs.push_back(std::move(d));
      }
    }
  }

  std::map<std::tuple<std::size_t, std::size_t, int>, std::vector<const RunRecord*>> cells;
  for (const auto& r : rep.runs) {
    if (r.kind == RunKind::disturbed) cells[{r.rho, r.nf, static_cast<int>(*r.location)}].push_back(&r);
  }
  for (const auto& [key, runs] : cells) {
    OverheadAggregate agg;
    agg.rho = std::get<0>(key);
    agg.nf = std::get<1>(key);
    agg.location = static_cast<FailureLocation>(std::get<2>(key));
    agg.runs = runs.size();
    std::vector<double> u, rc, wf, el, it;
    for (const RunRecord* r : runs) {
      if (r->result.converged()) ++agg.converged;
      u.push_back(r->undisturbed_overhead);
      rc.push_back(r->reconstruction_overhead);
      wf.push_back(r->time_overhead);
      el.push_back(r->element_overhead);
      it.push_back(static_cast<double>(r->result.iterations) - static_cast<double>(r->reference_iterations));
    }
    agg.undisturbed = summarize(u);
    agg.reconstruction = summarize(rc);
    agg.with_failures = summarize(wf);
    agg.elements = summarize(el);
    agg.iteration_difference = summarize(it);
    rep.aggregates.push_back(agg);
  }
  return rep;
}

inline ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const SparseMatrix a = load_matrix(config);
  if (config.trace.empty()) return run_experiment(config, a);
  std::ofstream trace(config.trace);
  if (!trace) throw Error("cannot open trace file " + config.trace);
  return run_experiment(config, a, &trace);
}

inline constexpr int kReportSchemaVersion = 1;

inline Json to_json(const Summary& s) { return Json{{"mean", s.mean}, {"std", s.stddev}}; }

inline Json to_json(const RunRecord& r) {
  return Json{{"kind", to_string(r.kind)},
              {"rho", r.rho},
              {"nf", r.nf},
              {"location", r.location ? Json(to_string(*r.location)) : Json(nullptr)},
              {"fraction", optional_json(r.fraction)},
              {"repetition", r.repetition},
              {"rhs_seed", r.rhs_seed},
              {"trigger_iteration", r.trigger_iteration},
              {"failed_nodes", r.failed_nodes},
              {"reference_iterations", r.reference_iterations},
              {"reference_delta", optional_json(r.reference_delta)},
              {"reference_model_time", r.reference_model_time},
              {"reference_elements", r.reference_elements},
              {"element_overhead", r.element_overhead},
              {"time_overhead", r.time_overhead},
              {"undisturbed_overhead", r.undisturbed_overhead},
              {"reconstruction_overhead", r.reconstruction_overhead},
              {"decomposition_gap", r.decomposition_gap},
              {"recovery_flops", r.recovery_flops},
              {"result", to_json(r.result)}};
}

inline Json to_json(const OverheadAggregate& a) {
  return Json{{"rho", a.rho},
              {"nf", a.nf},
              {"location", to_string(a.location)},
              {"runs", a.runs},
              {"converged", a.converged},
              {"undisturbed", to_json(a.undisturbed)},
              {"reconstruction", to_json(a.reconstruction)},
              {"with_failures", to_json(a.with_failures)},
              {"elements", to_json(a.elements)},
              {"iteration_difference", to_json(a.iteration_difference)}};
}

inline Json to_json(const ExperimentReport& rep) {
  Json runs = Json::array();
  for (const auto& r : rep.runs) runs.push_back(to_json(r));
  Json aggs = Json::array();
  for (const auto& a : rep.aggregates) aggs.push_back(to_json(a));
  return Json{{"schema_version", kReportSchemaVersion},
              {"config", to_json(rep.config)},
              {"matrix", {{"rows", rep.matrix_rows}, {"nnz", rep.matrix_nnz}}},
              {"runs", runs},
              {"aggregates", aggs}};
}

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "kind", "rho", "nf", "location", "fraction", "repetition", "rhs_seed", "trigger_iteration", "failed_nodes",
      "status", "iterations", "reference_iterations", "r_norm", "true_residual_norm", "delta", "reference_delta",
      "messages", "elements_sent", "extra_elements", "extra_edges", "allreduce_count", "iteration_model_time",
      "recovery_model_time", "element_overhead", "time_overhead", "undisturbed_overhead", "reconstruction_overhead",
      "decomposition_gap", "recoveries", "restarts", "max_deviation"};
  return cols;
}

namespace detail {

inline std::string csv_number(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline std::string csv_optional(const std::optional<double>& v) { return v ? csv_number(*v) : ""; }

}  // namespace detail

/// One row per run after a header row.
inline void emit_csv(const std::vector<RunRecord>& runs, std::ostream& out) {
  const auto& cols = csv_columns();
  for (std::size_t q = 0; q < cols.size(); ++q) out << (q ? "," : "") << cols[q];
  out << '\n';
  for (const auto& r : runs) {
    const CommStats tot = r.result.total_stats();
    std::string nodes;
    for (std::size_t q = 0; q < r.failed_nodes.size(); ++q) nodes += (q ? " " : "") + std::to_string(r.failed_nodes[q]);
    std::size_t restarts = 0;
    std::optional<double> max_dev;
    for (const auto& x : r.result.recoveries) {
      restarts += x.restarted_count;
      if (x.deviation) max_dev = std::max(max_dev.value_or(0.0), x.deviation->max_relative());
    }
    const std::vector<std::string> row{
        to_string(r.kind), std::to_string(r.rho), std::to_string(r.nf), r.location ? to_string(*r.location) : "",
        detail::csv_optional(r.fraction), std::to_string(r.repetition), std::to_string(r.rhs_seed),
        std::to_string(r.trigger_iteration), nodes, to_string(r.result.status), std::to_string(r.result.iterations),
        std::to_string(r.reference_iterations), detail::csv_number(r.result.r_norm),
        detail::csv_number(r.result.true_residual_norm), detail::csv_optional(r.result.delta),
        detail::csv_optional(r.reference_delta), std::to_string(tot.messages), std::to_string(tot.elements_sent),
        std::to_string(tot.extra_elements), std::to_string(tot.extra_edges), std::to_string(tot.allreduce_count),
        detail::csv_number(r.result.iteration_stats.model_time), detail::csv_number(r.result.recovery_stats.model_time),
        detail::csv_number(r.element_overhead), detail::csv_number(r.time_overhead),
        detail::csv_number(r.undisturbed_overhead), detail::csv_number(r.reconstruction_overhead),
        detail::csv_number(r.decomposition_gap), std::to_string(r.result.recoveries.size()), std::to_string(restarts),
        detail::csv_optional(max_dev)};
    for (std::size_t q = 0; q < row.size(); ++q) out << (q ? "," : "") << row[q];
    out << '\n';
  }
}

inline void emit_report(const ExperimentReport& rep, const std::string& format, std::ostream& out) {
  if (format == "json") {
    out << to_json(rep).dump(2) << '\n';
  } else if (format == "csv") {
    emit_csv(rep.runs, out);
  } else {
    throw ConfigError("format must be json or csv");
  }
  if (!out) throw Error("failed to write report");
}

}  // namespace esr
