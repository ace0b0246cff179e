// Copyright 2026 The mixedlane Authors
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

#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "mixedlane/scenario_io.hpp"
#include "mixedlane/simulator.hpp"

namespace mixedlane {

inline constexpr int kLogSchemaVersion = 1;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical YAML form, as 16 hex digits.
inline std::string config_hash(const Scenario& sc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(scenario_to_yaml(sc))));
  return buf;
}

namespace detail {

using json = nlohmann::ordered_json;

template <class Tag>
json quad_json(const Quad<Tag>& q) {
  return json::array({q.x, q.y, q.theta, q.v});
}

template <class Tag>
Quad<Tag> quad_from(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

inline json control_json(const ControlInput& c) { return json::array({c.u, c.phi}); }
inline ControlInput control_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline json vehicles_json(const std::array<VehicleState, 4>& s) {
  json out = json::object();
  for (Vehicle v : {Vehicle::kOne, Vehicle::kC, Vehicle::kH, Vehicle::kU}) {
    out[std::string(vehicle_name(v))] = quad_json(s[index(v)]);
  }
  return out;
}

inline json barriers_json(const std::array<double, 4>& b) {
  json out = json::object();
  for (VehiclePair p : kAllPairs) out[std::string(pair_name(p))] = b[index(p)];
  return out;
}

}  // namespace detail

/// Metrics as exported. Wall-clock solve times are left out so logs stay
/// byte-identical across runs.
inline nlohmann::ordered_json metrics_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["outcome"] = std::string(to_string(m.outcome));
  j["min_barrier"] = detail::barriers_json(m.min_barrier);
  j["safety"] = m.safety();
  j["t_f"] = m.t_f;
  j["energy"] = m.energy;
  j["merge_side"] = m.merge_side ? nlohmann::ordered_json(std::string(to_string(*m.merge_side))) : nlohmann::ordered_json(nullptr);
  j["trigger_count"] = m.trigger_count;
  j["control_updates"] = m.control_updates;
  j["fallback_count"] = m.fallback_count;
  j["sign_oscillations"] = m.sign_oscillations;
  j["qp_solves"] = m.qp_solves;
  j["max_kkt_residual"] = m.max_kkt_residual;
  return j;
}

inline nlohmann::ordered_json event_json(const EventRecord& e) {
  nlohmann::ordered_json j;
  j["type"] = "event";
  j["step"] = e.step;
  j["t"] = e.t;
  j["kind"] = std::string(to_string(e.kind));
  j["cause"] = std::string(to_string(e.cause));
  if (e.vehicle) {
    j["vehicle"] = std::string(vehicle_name(*e.vehicle));
    j["component"] = e.component;
    j["value"] = e.value;
    j["previous"] = e.previous;
    j["bound"] = e.bound;
  }
  j["post_sync_error"] = detail::quad_json(e.post_sync_error);
  j["u_C"] = detail::control_json(e.control_c);
  j["u_1"] = detail::control_json(e.control_one);
  if (e.sign_oscillation) j["sign_oscillation"] = true;
  return j;
}

struct LogWriteOptions {
  bool samples{true};
  bool qp{true};
};

/// Writes a run as JSON lines: header, samples, events, controls, HDV
/// controls, QP records, summary.
inline void write_log(std::ostream& out, const TrajectoryLog& log, LogWriteOptions opts = {}) {
  using json = nlohmann::ordered_json;
  const Scenario sc{log.config, log.policy};
  const auto line = [&](const json& j) { out << j.dump() << '\n'; };

  json h;
  h["type"] = "header";
  h["schema"] = kLogSchemaVersion;
  h["config_hash"] = config_hash(sc);
  h["seed"] = log.config.seed;
  h["scenario"] = scenario_to_yaml(sc);
  h["warnings"] = log.warnings;
  line(h);

  if (opts.samples) {
    for (const Sample& s : log.samples) {
      json j;
      j["type"] = "sample";
      j["step"] = s.step;
      j["t"] = s.t;
      j["vehicles"] = detail::vehicles_json(s.states);
      j["est_H"] = detail::quad_json(s.est_hdv);
      j["u_C"] = detail::control_json(s.control_c);
      j["u_1"] = detail::control_json(s.control_one);
      j["u_H"] = detail::control_json(s.control_h);
      j["barriers"] = detail::barriers_json(s.barriers);
      j["e"] = detail::quad_json(s.error);
      j["e_dot"] = detail::quad_json(s.error_rate);
      line(j);
    }
  }
  for (const EventRecord& e : log.events) line(event_json(e));
  for (const ControlRecord& c : log.controls) {
    line({{"type", "control"}, {"step", c.step}, {"u_C", detail::control_json(c.c)}, {"u_1", detail::control_json(c.one)}});
  }
  for (const ExternalCommand& c : log.hdv_controls) {
    line({{"type", "hdv_control"}, {"step", c.step}, {"u_H", detail::control_json(c.control)}});
  }
  if (opts.qp) {
    for (const QpDiagnostic& q : log.qp) {
      line({{"type", "qp"},
            {"step", q.step},
            {"pass", q.record.pass},
            {"status", to_string(q.record.status)},
            {"kkt_residual", q.record.kkt_residual},
            {"max_violation", q.record.max_violation},
            {"iterations", q.record.iterations}});
    }
  }
  json s;
  s["type"] = "summary";
  s["final_step"] = log.final_step;
  s["final_states"] = detail::vehicles_json(log.final_states);
  s["metrics"] = metrics_json(compute_metrics(log));
  line(s);
}

inline std::string log_to_string(const TrajectoryLog& log, LogWriteOptions opts = {}) {
  std::ostringstream os;
  write_log(os, log, opts);
  return os.str();
}

class LogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// What a log file carries for replay.
struct LoadedLog {
  Scenario scenario{};
  std::string config_hash;
  std::vector<ControlRecord> controls;
  std::vector<ExternalCommand> hdv_controls;
  Outcome outcome{Outcome::kRunning};
  std::int64_t final_step{0};
};

inline Outcome outcome_from(std::string_view s) {
  if (s == "complete") return Outcome::kComplete;
  if (s == "abort") return Outcome::kAbort;
  return Outcome::kRunning;
}

inline LoadedLog read_log(std::istream& in, const std::string& source = "<log>") {
  LoadedLog out;
  bool have_header = false;
  std::string text;
  int line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(text);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        if (j.at("schema").get<int>() != kLogSchemaVersion) {
          throw LogError(source + ":" + std::to_string(line_no) + ": unsupported schema " + j.at("schema").dump());
        }
        out.scenario = parse_scenario(j.at("scenario").get<std::string>(), source + " (embedded scenario)");
        out.config_hash = j.at("config_hash").get<std::string>();
        have_header = true;
      } else if (type == "control") {
        out.controls.push_back({j.at("step").get<std::int64_t>(), detail::control_from(j.at("u_C")),
                                detail::control_from(j.at("u_1"))});
      } else if (type == "hdv_control") {
        out.hdv_controls.push_back({j.at("step").get<std::int64_t>(), false, detail::control_from(j.at("u_H"))});
      } else if (type == "summary") {
        out.final_step = j.at("final_step").get<std::int64_t>();
        out.outcome = outcome_from(j.at("metrics").at("outcome").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw LogError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw LogError(source + ": missing header record");
  return out;
}

/// Policy that replays the HDV controls recorded in a log.
inline HdvPolicyConfig recorded_policy(const LoadedLog& log) {
  HdvPolicyConfig p = log.scenario.policy;
  p.kind = PolicyKind::kExternal;
  p.schedule = log.hdv_controls;
  return p;
}

}  // namespace mixedlane
