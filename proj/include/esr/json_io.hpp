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

// JSON encodings of plans and solve results. Fields are emitted in a fixed
// order so that equal inputs serialize to equal bytes.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "esr/planner.hpp"
#include "esr/recovery.hpp"
#include "esr/run.hpp"

namespace esr {

using Json = nlohmann::ordered_json;

inline Json to_json(const RedundancyPlan& plan) {
  Json dest = Json::array();
  Json extra = Json::array();
  for (NodeId i = 0; i < plan.node_count(); ++i) {
    for (std::size_t k = 1; k <= plan.redundancy(); ++k) {
      dest.push_back({i, k, plan.destination(i, k)});
      extra.push_back({i, k, plan.extra_set(i, k)});
    }
  }
  return Json{{"rho", plan.redundancy()}, {"destinations", dest}, {"extra_sets", extra}};
}

/// Inverse of to_json(RedundancyPlan); `node_count` fixes the owner range.
inline RedundancyPlan plan_from_json(const Json& j, std::size_t node_count) {
  try {
    const auto rho = j.at("rho").get<std::size_t>();
    std::vector<std::vector<NodeId>> dest(node_count, std::vector<NodeId>(rho, 0));
    std::vector<std::vector<std::vector<Index>>> extra(node_count, std::vector<std::vector<Index>>(rho));
    for (const auto& e : j.at("destinations")) {
      const auto i = e.at(0).get<NodeId>();
      const auto k = e.at(1).get<std::size_t>();
      if (i >= node_count || k == 0 || k > rho) throw ConfigError("plan destination entry out of range");
      dest[i][k - 1] = e.at(2).get<NodeId>();
    }
    for (const auto& e : j.at("extra_sets")) {
      const auto i = e.at(0).get<NodeId>();
      const auto k = e.at(1).get<std::size_t>();
      if (i >= node_count || k == 0 || k > rho) throw ConfigError("plan extra-set entry out of range");
      extra[i][k - 1] = e.at(2).get<std::vector<Index>>();
    }
    return RedundancyPlan(rho, std::move(dest), std::move(extra));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed plan JSON: ") + e.what());
  }
}

inline Json to_json(const OverheadEstimate& est) {
  return Json{{"lower_elements", est.lower_elements},
              {"upper_elements", est.upper_elements},
              {"lower_time", est.lower_time},
              {"upper_time", est.upper_time},
              {"cap_time", est.cap_time},
              {"per_round_max_extra", est.per_round_max_extra},
              {"round_needs_extra_edge", est.round_needs_extra_edge}};
}

inline Json to_json(const PlanVerification& v) {
  Json viol = Json::array();
  for (const auto& x : v.violations) viol.push_back({{"owner", x.owner}, {"element", x.element}, {"copies", x.copies}});
  return Json{{"passed", v.passed}, {"violations", viol}, {"structural", v.structural}};
}

inline Json to_json(const CommStats& s) {
  return Json{{"messages", s.messages},
              {"elements_sent", s.elements_sent},
              {"extra_elements", s.extra_elements},
              {"extra_edges", s.extra_edges},
              {"allreduce_count", s.allreduce_count},
              {"model_time", s.model_time},
              {"extra_model_time", s.extra_model_time}};
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const RecoveryReport& r) {
  Json dev = nullptr;
  if (r.deviation) {
    dev = Json{{"x", r.deviation->x},
               {"r", r.deviation->r},
               {"z", r.deviation->z},
               {"p", r.deviation->p},
               {"max_abs", r.deviation->max_abs}};
  }
  return Json{{"failed", r.failed},
              {"iteration", r.iteration},
              {"reconstructed", r.reconstructed},
              {"restarted_count", r.restarted_count},
              {"inner_direct", r.inner_direct},
              {"inner_iterations", r.inner_iterations},
              {"inner_residual", r.inner_residual},
              {"flops", r.flops},
              {"deviation", dev},
              {"cost", to_json(r.cost)}};
}

/// Summary of a solve; iterates are left out, the residual history is kept
/// only when `with_history` is set.
inline Json to_json(const SolveResult& s, bool with_history = false) {
  Json recs = Json::array();
  for (const auto& r : s.recoveries) recs.push_back(to_json(r));
  Json out{{"status", to_string(s.status)},
           {"converged", s.converged()},
           {"diagnostic", s.diagnostic},
           {"iterations", s.iterations},
           {"r_norm0", s.r_norm0},
           {"r_norm", s.r_norm},
           {"true_residual_norm", s.true_residual_norm},
           {"delta", optional_json(s.delta)},
           {"exchanges", s.exchanges},
           {"min_exchange_extra_time", s.min_exchange_extra_time},
           {"max_exchange_extra_time", s.max_exchange_extra_time},
           {"iteration_stats", to_json(s.iteration_stats)},
           {"recovery_stats", to_json(s.recovery_stats)},
           {"recoveries", recs},
           {"unfired_events", s.unfired_events},
           {"wall_seconds", optional_json(s.wall_seconds)}};
  if (with_history) {
    Json markers = Json::array();
    for (const auto& m : s.trace.markers) markers.push_back({{"iteration", m.iteration}, {"kind", m.kind}, {"nodes", m.nodes}});
    out["history"] = Json{{"r_norm", s.trace.r_norm}, {"alpha", s.trace.alpha}, {"beta", s.trace.beta}, {"markers", markers}};
  }
  return out;
}

}  // namespace esr
