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

#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "esr/harness.hpp"
#include "esr/verify.hpp"

namespace esr {

enum ExitCode : int { kExitOk = 0, kExitSolverFailure = 1, kExitUnrecoverable = 2, kExitUsage = 3 };

namespace detail {

/// Values captured from the command line; unset fields leave the config alone.
struct CliOptions {
  std::string config_path;
  std::optional<std::string> matrix, gen, fail_location, output, format, trace, fail, preconditioner;
  std::optional<std::size_t> nodes, redundancy, failures, reps, max_iterations;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> fail_at;
  std::optional<double> tol, inner_tol, latency, bandwidth_cost;
  std::optional<Index> direct_threshold;
  bool wall_clock = false;
};

inline void add_common(CLI::App& app, CliOptions& o) {
  app.add_option("--config", o.config_path, "JSON config file; flags override it");
  app.add_option("--matrix", o.matrix, "Matrix Market file");
  app.add_option("--gen", o.gen, "generator: laplace1d:N | laplace2d:K | band:N,B,D | dense:N");
  app.add_option("--nodes", o.nodes, "number of simulated nodes");
  app.add_option("--redundancy", o.redundancy, "tolerated failures rho");
  app.add_option("--seed", o.seed, "right-hand-side seed");
  app.add_option("--tol", o.tol, "relative residual reduction");
  app.add_option("--inner-tol", o.inner_tol, "tolerance of the iterative recovery solve");
  app.add_option("--direct-threshold", o.direct_threshold, "largest recovery subsystem solved by Cholesky");
  app.add_option("--max-iterations", o.max_iterations, "iteration cap");
  app.add_option("--preconditioner", o.preconditioner, "block-jacobi | identity")
      ->check(CLI::IsMember({"block-jacobi", "identity"}));
  app.add_option("--latency", o.latency, "per-message latency");
  app.add_option("--bandwidth-cost", o.bandwidth_cost, "per-element cost");
  app.add_option("--output", o.output, "output path (default stdout)");
  app.add_option("--format", o.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
}

inline void add_failures(CLI::App& app, CliOptions& o) {
  app.add_option("--failures", o.failures, "simultaneous node failures nf");
  app.add_option("--fail-at", o.fail_at, "progress fractions")->delimiter(',');
  app.add_option("--fail-location", o.fail_location, "start | center")->check(CLI::IsMember({"start", "center"}));
  app.add_option("--fail", o.fail, "shorthand NF@FRACTION:LOCATION");
  app.add_option("--reps", o.reps, "repetitions");
  app.add_option("--trace", o.trace, "JSON-lines event trace path");
  app.add_flag("--wall-clock", o.wall_clock, "record host wall-clock time");
}

inline ExperimentConfig resolve(const CliOptions& o, ExperimentConfig base) {
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot open config " + o.config_path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    base = config_from_json(j, base);
  }
  if (o.matrix) {
    base.matrix_path = *o.matrix;
    base.generator.clear();
  }
  if (o.gen) {
    base.generator = *o.gen;
    if (!o.matrix) base.matrix_path.clear();
  }
  if (o.nodes) base.nodes = *o.nodes;
  if (o.redundancy) base.redundancy = *o.redundancy;
  if (o.failures) base.failures = *o.failures;
  if (o.fail_at) base.fractions = *o.fail_at;
  if (o.fail_location) base.locations = {parse_location(*o.fail_location)};
  if (o.fail) {
    static const std::regex re(R"(^(\d+)@([0-9.eE+-]+):(start|center)$)");
    std::smatch m;
    if (!std::regex_match(*o.fail, m, re)) throw ConfigError("--fail expects NF@FRACTION:LOCATION");
    base.failures = std::stoul(m[1]);
    base.fractions = {std::stod(m[2])};
    base.locations = {parse_location(m[3])};
  }
  if (o.reps) base.repetitions = *o.reps;
  if (o.seed) base.seed = *o.seed;
  if (o.tol) base.tolerance = *o.tol;
  if (o.inner_tol) base.inner_tolerance = *o.inner_tol;
  if (o.direct_threshold) base.direct_threshold = *o.direct_threshold;
  if (o.max_iterations) base.max_iterations = *o.max_iterations;
  if (o.preconditioner) {
    base.preconditioner = *o.preconditioner == "identity" ? PreconditionerKind::identity : PreconditionerKind::block_jacobi;
  }
  if (o.latency) base.latency = *o.latency;
  if (o.bandwidth_cost) base.bandwidth_cost = *o.bandwidth_cost;
  if (o.output) base.output = *o.output;
  if (o.format) base.format = *o.format;
  if (o.trace) base.trace = *o.trace;
  if (o.wall_clock) base.wall_clock = true;
  return base;
}

inline int exit_code_for(const std::vector<RunRecord>& runs) {
  int code = kExitOk;
  for (const auto& r : runs) {
    if (r.result.status == RunStatus::unrecoverable) return kExitUnrecoverable;
    if (!r.result.converged()) code = kExitSolverFailure;
  }
  return code;
}

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw Error("cannot open output " + path);
      out_ = &file_;
    }
  }
  std::ostream& stream() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

inline int cmd_solve(const ExperimentConfig& cfg_in, std::ostream& out) {
  ExperimentConfig cfg = cfg_in;
  cfg.repetitions = 1;
  if (cfg.fractions.size() != 1 || cfg.locations.size() != 1) {
    throw ConfigError("solve takes a single failure fraction and location");
  }
  const ExperimentReport rep = run_experiment(cfg);
  const RunRecord& run = rep.runs.back();
  Output o(cfg.output, out);
  if (cfg.format == "csv") {
    emit_csv({run}, o.stream());
  } else {
    o.stream() << Json{{"schema_version", kReportSchemaVersion}, {"config", to_json(cfg)}, {"run", to_json(run)}}.dump(2)
               << '\n';
  }
  return exit_code_for({run});
}

inline int cmd_experiment(const ExperimentConfig& cfg, std::ostream& out) {
  const ExperimentReport rep = run_experiment(cfg);
  Output o(cfg.output, out);
  emit_report(rep, cfg.format, o.stream());
  return exit_code_for(rep.runs);
}

inline int cmd_plan(const ExperimentConfig& cfg, std::ostream& out) {
  const SparseMatrix a = load_matrix(cfg);
  const BlockRowPartition part(a.n_rows, cfg.nodes);
  const CommPattern pattern = compute_send_sets(a, part);
  const RedundancyPlan plan = compute_redundancy_plan(pattern, cfg.redundancy, cfg.nodes);
  const LatencyModel model(cfg.nodes, cfg.latency, cfg.bandwidth_cost);
  Output o(cfg.output, out);
  if (cfg.format == "csv") {
    o.stream() << "owner,round,destination,extra_elements,extra_edge\n";
    for (NodeId i = 0; i < cfg.nodes; ++i) {
      for (std::size_t k = 1; k <= plan.redundancy(); ++k) {
        o.stream() << i << ',' << k << ',' << plan.destination(i, k) << ',' << plan.extra_set(i, k).size() << ','
                   << (is_extra_edge(plan, pattern, i, k) ? 1 : 0) << '\n';
      }
    }
    return kExitOk;
  }
  Json zl = Json::array();
  const auto cond = zero_latency_condition(a, part, cfg.redundancy);
  for (NodeId i = 0; i < cond.size(); ++i) {
    for (std::size_t k = 0; k < cond[i].size(); ++k) zl.push_back({i, k + 1, static_cast<bool>(cond[i][k])});
  }
  o.stream() << Json{{"schema_version", kReportSchemaVersion},
                     {"plan", to_json(plan)},
                     {"overhead", to_json(estimate_overhead(plan, pattern, model))},
                     {"verification", to_json(verify_plan(plan, pattern))},
                     {"zero_latency", zl}}
                    .dump(2)
             << '\n';
  return kExitOk;
}

inline int cmd_verify(const ExperimentConfig& cfg, std::ostream& out) {
  const SparseMatrix a = load_matrix(cfg);
  const VerificationReport rep = verify_matrix(cfg, a);
  Output o(cfg.output, out);
  o.stream() << to_json(rep).dump(2) << '\n';
  return rep.passed() ? kExitOk : kExitSolverFailure;
}

}  // namespace detail

/// Entry point of the esrpcg tool. Returns the process exit code.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Resilient PCG on a simulated cluster"};
  app.require_subcommand(1);
  detail::CliOptions o;
  CLI::App* solve = app.add_subcommand("solve", "one run, optionally with failures");
  CLI::App* experiment = app.add_subcommand("experiment", "batch of reference, undisturbed and disturbed runs");
  CLI::App* plan = app.add_subcommand("plan", "redundancy plan and overhead bounds");
  CLI::App* verify = app.add_subcommand("verify", "invariant checks on one matrix");
  for (CLI::App* sub : {solve, experiment, plan, verify}) detail::add_common(*sub, o);
  detail::add_failures(*solve, o);
  detail::add_failures(*experiment, o);
  detail::add_failures(*verify, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    ExperimentConfig base;
    if (solve->parsed()) {
      base.failures = 0;
      base.fractions = {0.5};
      base.locations = {FailureLocation::center};
      base.repetitions = 1;
    }
    ExperimentConfig cfg = detail::resolve(o, base);
    if (solve->parsed() && cfg.failures > 0 && cfg.redundancy == 0) {
      throw ConfigError("failures require --redundancy of at least the failure count");
    }
    cfg.validate();
    if (solve->parsed()) return detail::cmd_solve(cfg, out);
    if (experiment->parsed()) return detail::cmd_experiment(cfg, out);
    if (plan->parsed()) return detail::cmd_plan(cfg, out);
    return detail::cmd_verify(cfg, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    for (CLI::App* sub : {solve, experiment, plan, verify}) {
      if (sub->parsed()) err << sub->help();
    }
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UnrecoverableError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUnrecoverable;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitSolverFailure;
  }
}

}  // namespace esr
