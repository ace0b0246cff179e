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

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mixedlane/simulator.hpp"

namespace mixedlane {

/// A scenario file: world and controller configuration plus the HDV driver.
struct Scenario {
  ScenarioConfig config{};
  HdvPolicyConfig policy{};
};

/// Parse or validation failure, located at a line and key path.
class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(std::string source, int line, int column, std::string key, const std::string& msg)
      : std::runtime_error(format(source, line, column, key, msg)),
        source_(std::move(source)),
        line_(line),
        column_(column),
        key_(std::move(key)) {}

  const std::string& source() const { return source_; }
  /// 1-based; 0 when the problem is not tied to a line.
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& key() const { return key_; }

 private:
  static std::string format(const std::string& source, int line, int column, const std::string& key,
                            const std::string& msg) {
    std::string out = source;
    if (line > 0) out += ":" + std::to_string(line) + ":" + std::to_string(column);
    out += ": ";
    if (!key.empty()) out += key + ": ";
    return out + msg;
  }

  std::string source_;
  int line_;
  int column_;
  std::string key_;
};

namespace detail {

/// Walks one YAML mapping, converting known keys and rejecting the rest.
class MapReader {
 public:
  MapReader(const YAML::Node& node, std::string path, const std::string& source)
      : node_(node), path_(std::move(path)), source_(source) {
    if (!node_.IsMap()) fail(node_, path_.empty() ? "<root>" : path_, "expected a mapping");
  }

  [[noreturn]] void fail(const YAML::Node& n, const std::string& key, const std::string& msg) const {
    const YAML::Mark m = n.Mark();
    throw ScenarioError(source_, m.is_null() ? 0 : m.line + 1, m.is_null() ? 0 : m.column + 1, key, msg);
  }

  std::string key_path(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  std::optional<YAML::Node> child(std::string_view key) {
    seen_.insert(std::string(key));
    const YAML::Node n = node_[std::string(key)];
    if (!n.IsDefined() || n.IsNull()) return std::nullopt;
    return n;
  }

  MapReader section(std::string_view key) {
    auto n = child(key);
    if (!n) return MapReader(YAML::Node(YAML::NodeType::Map), key_path(key), source_);
    return MapReader(*n, key_path(key), source_);
  }
  bool has(std::string_view key) const { return node_[std::string(key)].IsDefined(); }

  double number(const YAML::Node& n, const std::string& key) const {
    if (!n.IsScalar()) fail(n, key, "expected a number");
    double v = 0.0;
    if (!YAML::convert<double>::decode(n, v)) fail(n, key, "expected a number, got '" + n.Scalar() + "'");
    if (!std::isfinite(v)) fail(n, key, "must be finite");
    return v;
  }

  void opt(std::string_view key, double& out) {
    if (auto n = child(key)) out = number(*n, key_path(key));
  }
  void opt(std::string_view key, bool& out) {
    if (auto n = child(key)) {
      if (!n->IsScalar() || !YAML::convert<bool>::decode(*n, out)) fail(*n, key_path(key), "expected true or false");
    }
  }
  void opt(std::string_view key, std::uint64_t& out) {
    if (auto n = child(key)) {
      const std::string k = key_path(key);
      if (!n->IsScalar() || n->Scalar().empty() || n->Scalar()[0] == '-') fail(*n, k, "expected a non-negative integer");
      try {
        std::size_t used = 0;
        out = std::stoull(n->Scalar(), &used);
        if (used != n->Scalar().size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        fail(*n, k, "expected a non-negative integer, got '" + n->Scalar() + "'");
      }
    }
  }
  void opt(std::string_view key, std::string& out) {
    if (auto n = child(key)) {
      if (!n->IsScalar()) fail(*n, key_path(key), "expected a string");
      out = n->Scalar();
    }
  }

  /// Fixed-length numeric list.
  template <std::size_t N, class Set>
  void list(std::string_view key, Set&& set) {
    auto n = child(key);
    if (!n) return;
    const std::string k = key_path(key);
    if (!n->IsSequence() || n->size() != N) fail(*n, k, "expected a list of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) set(i, number((*n)[i], k + "[" + std::to_string(i) + "]"));
  }

  void quad(std::string_view key, BoundVector& out) {
    list<4>(key, [&](std::size_t i, double v) { out[i] = v; });
  }
  void interval(std::string_view key, Interval& out) {
    list<2>(key, [&](std::size_t i, double v) { (i == 0 ? out.lo : out.hi) = v; });
  }

  /// Rejects keys that were never asked for.
  void finish() const {
    for (const auto& kv : node_) {
      const std::string k = kv.first.as<std::string>();
      if (!seen_.contains(k)) fail(kv.first, key_path(k), "unknown key");
    }
  }

  const std::string& source() const { return source_; }

 private:
  YAML::Node node_;
  std::string path_;
  const std::string& source_;
  std::set<std::string> seen_;
};

inline void read_state(MapReader r, VehicleState& s) {
  r.opt("x", s.x);
  r.opt("y", s.y);
  r.opt("theta", s.theta);
  r.opt("v", s.v);
  r.finish();
}

inline void read_ellipse(MapReader r, Ellipse& e) {
  r.opt("a", e.a);
  r.opt("b", e.b);
  r.finish();
}

inline void read_control(MapReader r, ControlInput& c) {
  r.opt("u", c.u);
  r.opt("phi", c.phi);
  r.finish();
}

inline void read_schedule(MapReader& parent, std::vector<ExternalCommand>& out) {
  auto n = parent.child("schedule");
  if (!n) return;
  const std::string k = parent.key_path("schedule");
  if (!n->IsSequence()) parent.fail(*n, k, "expected a list of commands");
  out.clear();
  for (std::size_t i = 0; i < n->size(); ++i) {
    MapReader r((*n)[i], k + "[" + std::to_string(i) + "]", parent.source());
    ExternalCommand cmd;
    std::uint64_t step = 0;
    r.opt("step", step);
    cmd.step = static_cast<std::int64_t>(step);
    r.opt("deadman", cmd.deadman);
    r.opt("u", cmd.control.u);
    r.opt("phi", cmd.control.phi);
    r.finish();
    out.push_back(cmd);
  }
}

inline void read_policy(MapReader r, HdvPolicyConfig& p) {
  std::string kind(to_string(p.kind));
  r.opt("kind", kind);
  if (auto k = policy_kind_from(kind)) {
    p.kind = *k;
  } else {
    r.fail(*r.child("kind"), r.key_path("kind"),
           "unknown policy '" + kind + "' (expected random, aggressive, conservative, hesitant or external)");
  }
  r.opt("random_u", p.random_u);
  r.opt("random_phi", p.random_phi);
  r.opt("aggressive_accel", p.aggressive_accel);
  r.opt("conservative_decel", p.conservative_decel);
  r.opt("conservative_proximity", p.conservative_proximity);
  r.opt("conservative_merge_rate", p.conservative_merge_rate);
  r.opt("conservative_clear_headway", p.conservative_clear_headway);
  r.opt("hesitant_accel", p.hesitant_accel);
  r.interval("hesitant_dwell", p.hesitant_dwell);
  r.opt("lane_center", p.lane_center);
  r.opt("lane_gain_y", p.lane_gain_y);
  r.opt("lane_gain_theta", p.lane_gain_theta);
  r.opt("lane_phi_max", p.lane_phi_max);
  read_schedule(r, p.schedule);
  r.finish();
}

inline void read_controller(MapReader r, ControllerConfig& c) {
  std::string mode(to_string(c.mode));
  r.opt("mode", mode);
  if (mode == "time") {
    c.mode = ControlMode::kTimeDriven;
  } else if (mode == "event") {
    c.mode = ControlMode::kEventDriven;
  } else {
    r.fail(*r.child("mode"), r.key_path("mode"), "expected 'time' or 'event', got '" + mode + "'");
  }
  r.opt("delta", c.delta);
  r.opt("epsilon", c.epsilon);
  r.opt("t_final", c.t_final);
  r.opt("hdv_known", c.hdv_known);
  std::string sync(to_string(c.sync_rule));
  r.opt("sync_rule", sync);
  if (sync == "incremental") {
    c.sync_rule = SyncRule::kIncremental;
  } else if (sync == "cumulative") {
    c.sync_rule = SyncRule::kCumulative;
  } else {
    r.fail(*r.child("sync_rule"), r.key_path("sync_rule"), "expected 'incremental' or 'cumulative'");
  }
  {
    MapReader b = r.section("bounds");
    b.quad("w", c.bounds.w);
    b.quad("nu", c.bounds.nu);
    MapReader s = b.section("s");
    for (Vehicle v : {Vehicle::kOne, Vehicle::kC, Vehicle::kH, Vehicle::kU}) s.quad(vehicle_name(v), c.bounds.s[index(v)]);
    s.finish();
    b.finish();
  }
  r.finish();
}

inline Scenario read_scenario(const YAML::Node& root, const std::string& source) {
  Scenario sc;
  ScenarioConfig& c = sc.config;
  MapReader r(root.IsNull() ? YAML::Node(YAML::NodeType::Map) : root, "", source);
  r.opt("seed", c.seed);
  r.opt("lane_width", c.lane_width);
  r.opt("wheelbase", c.wheelbase);
  r.opt("micro_step", c.micro_step);
  r.opt("v_min", c.v_min);
  r.opt("v_max", c.v_max);
  r.opt("desired_speed", c.desired_speed);
  {
    MapReader init = r.section("initial");
    for (Vehicle v : {Vehicle::kOne, Vehicle::kC, Vehicle::kH, Vehicle::kU}) {
      if (init.has(vehicle_name(v))) read_state(init.section(vehicle_name(v)), c.initial[index(v)]);
    }
    init.finish();
  }
  {
    MapReader b = r.section("control_bounds");
    if (b.has("min")) read_control(b.section("min"), c.control_bounds.min);
    if (b.has("max")) read_control(b.section("max"), c.control_bounds.max);
    b.finish();
  }
  {
    MapReader b = r.section("barrier");
    if (b.has("c")) read_ellipse(b.section("c"), c.barrier.c);
    if (b.has("one")) read_ellipse(b.section("one"), c.barrier.one);
    MapReader g = b.section("pair_gain");
    for (VehiclePair p : kAllPairs) g.opt(pair_name(p), c.barrier.pair_gain[index(p)]);
    g.finish();
    b.opt("speed_gain", c.barrier.speed_gain);
    b.opt("lateral_gain", c.barrier.lateral_gain);
    b.finish();
  }
  r.list<4>("clf_rates", [&](std::size_t i, double v) { c.clf_rates[i] = v; });
  {
    MapReader w = r.section("weights");
    w.opt("alpha_uC", c.weights.alpha_uC);
    w.opt("alpha_u1", c.weights.alpha_u1);
    w.opt("steer_factor", c.weights.steer_factor);
    w.list<4>("slack", [&](std::size_t i, double v) { c.weights.slack[i] = v; });
    w.finish();
  }
  {
    MapReader d = r.section("disturbance");
    d.opt("enabled", c.disturbance.enabled);
    d.interval("sigma", c.disturbance.sigma);
    if (auto n = d.child("eps")) {
      const std::string k = d.key_path("eps");
      if (!n->IsSequence() || n->size() != 4) d.fail(*n, k, "expected a list of 4 [lo, hi] pairs");
      for (std::size_t i = 0; i < 4; ++i) {
        const YAML::Node e = (*n)[i];
        const std::string ki = k + "[" + std::to_string(i) + "]";
        if (!e.IsSequence() || e.size() != 2) d.fail(e, ki, "expected [lo, hi]");
        c.disturbance.eps[i] = {d.number(e[0], ki), d.number(e[1], ki)};
      }
    }
    d.finish();
  }
  read_controller(r.section("controller"), c.controller);
  {
    MapReader h = r.section("hdv_limits");
    h.opt("u_max", c.hdv_limits.u_max);
    h.opt("phi_max", c.hdv_limits.phi_max);
    h.finish();
  }
  read_policy(r.section("hdv_policy"), sc.policy);
  r.finish();

  try {
    c.validate();
    sc.policy.validate();
  } catch (const ConfigError& e) {
    // Validation messages start with the offending key.
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    const std::string key = colon == std::string::npos ? std::string() : msg.substr(0, colon);
    const std::string top = key.substr(0, key.find('.'));
    const YAML::Node n = root.IsMap() ? root[top] : YAML::Node();
    const YAML::Mark m = n.IsDefined() ? n.Mark() : YAML::Mark::null_mark();
    throw ScenarioError(source, m.is_null() ? 0 : m.line + 1, m.is_null() ? 0 : m.column + 1, key,
                        colon == std::string::npos ? msg : msg.substr(colon + 2));
  }
  return sc;
}

}  // namespace detail

/// Parses a scenario document. Absent keys keep their defaults.
inline Scenario parse_scenario(const std::string& text, const std::string& source = "<string>") {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ScenarioError(source, e.mark.line + 1, e.mark.column + 1, "", e.msg);
  }
  return detail::read_scenario(root, source);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(path, 0, 0, "", "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

/// YAML document that parses back to `sc` exactly.
inline std::string scenario_to_yaml(const Scenario& sc) {
  const ScenarioConfig& c = sc.config;
  const HdvPolicyConfig& p = sc.policy;
  YAML::Emitter out;
  out.SetDoublePrecision(std::numeric_limits<double>::max_digits10);
  const auto quad = [&](const auto& q) {
    out << YAML::Flow << YAML::BeginSeq << q.x << q.y << q.theta << q.v << YAML::EndSeq;
  };
  const auto pair = [&](double a, double b) { out << YAML::Flow << YAML::BeginSeq << a << b << YAML::EndSeq; };

  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "lane_width" << YAML::Value << c.lane_width;
  out << YAML::Key << "wheelbase" << YAML::Value << c.wheelbase;
  out << YAML::Key << "micro_step" << YAML::Value << c.micro_step;
  out << YAML::Key << "v_min" << YAML::Value << c.v_min;
  out << YAML::Key << "v_max" << YAML::Value << c.v_max;
  out << YAML::Key << "desired_speed" << YAML::Value << c.desired_speed;

  out << YAML::Key << "initial" << YAML::Value << YAML::BeginMap;
  for (Vehicle v : {Vehicle::kOne, Vehicle::kC, Vehicle::kH, Vehicle::kU}) {
    const VehicleState& s = c.initial[index(v)];
    out << YAML::Key << std::string(vehicle_name(v)) << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "x" << YAML::Value << s.x << YAML::Key << "y" << YAML::Value << s.y;
    out << YAML::Key << "theta" << YAML::Value << s.theta << YAML::Key << "v" << YAML::Value << s.v;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;

  out << YAML::Key << "control_bounds" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, ci] : {std::pair{"min", c.control_bounds.min}, std::pair{"max", c.control_bounds.max}}) {
    out << YAML::Key << name << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "u" << YAML::Value << ci.u << YAML::Key << "phi" << YAML::Value << ci.phi << YAML::EndMap;
  }
  out << YAML::EndMap;

  out << YAML::Key << "barrier" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, e] : {std::pair{"c", c.barrier.c}, std::pair{"one", c.barrier.one}}) {
    out << YAML::Key << name << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "a" << YAML::Value << e.a << YAML::Key << "b" << YAML::Value << e.b << YAML::EndMap;
  }
  out << YAML::Key << "pair_gain" << YAML::Value << YAML::Flow << YAML::BeginMap;
  for (VehiclePair pr : kAllPairs) {
    out << YAML::Key << std::string(pair_name(pr)) << YAML::Value << c.barrier.pair_gain[index(pr)];
  }
  out << YAML::EndMap;
  out << YAML::Key << "speed_gain" << YAML::Value << c.barrier.speed_gain;
  out << YAML::Key << "lateral_gain" << YAML::Value << c.barrier.lateral_gain;
  out << YAML::EndMap;

  out << YAML::Key << "clf_rates" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (double m : c.clf_rates) out << m;
  out << YAML::EndSeq;

  out << YAML::Key << "weights" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "alpha_uC" << YAML::Value << c.weights.alpha_uC;
  out << YAML::Key << "alpha_u1" << YAML::Value << c.weights.alpha_u1;
  out << YAML::Key << "steer_factor" << YAML::Value << c.weights.steer_factor;
  out << YAML::Key << "slack" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (double w : c.weights.slack) out << w;
  out << YAML::EndSeq << YAML::EndMap;

  out << YAML::Key << "disturbance" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << c.disturbance.enabled;
  out << YAML::Key << "sigma" << YAML::Value;
  pair(c.disturbance.sigma.lo, c.disturbance.sigma.hi);
  out << YAML::Key << "eps" << YAML::Value << YAML::BeginSeq;
  for (const Interval& e : c.disturbance.eps) pair(e.lo, e.hi);
  out << YAML::EndSeq << YAML::EndMap;

  const ControllerConfig& k = c.controller;
  out << YAML::Key << "controller" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << std::string(to_string(k.mode));
  out << YAML::Key << "delta" << YAML::Value << k.delta;
  out << YAML::Key << "epsilon" << YAML::Value << k.epsilon;
  out << YAML::Key << "t_final" << YAML::Value << k.t_final;
  out << YAML::Key << "hdv_known" << YAML::Value << k.hdv_known;
  out << YAML::Key << "sync_rule" << YAML::Value << std::string(to_string(k.sync_rule));
  out << YAML::Key << "bounds" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "w" << YAML::Value;
  quad(k.bounds.w);
  out << YAML::Key << "nu" << YAML::Value;
  quad(k.bounds.nu);
  out << YAML::Key << "s" << YAML::Value << YAML::BeginMap;
  for (Vehicle v : {Vehicle::kOne, Vehicle::kC, Vehicle::kH, Vehicle::kU}) {
    out << YAML::Key << std::string(vehicle_name(v)) << YAML::Value;
    quad(k.bounds.s[index(v)]);
  }
  out << YAML::EndMap << YAML::EndMap << YAML::EndMap;

  out << YAML::Key << "hdv_limits" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "u_max" << YAML::Value << c.hdv_limits.u_max;
  out << YAML::Key << "phi_max" << YAML::Value << c.hdv_limits.phi_max;
  out << YAML::EndMap;

  out << YAML::Key << "hdv_policy" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << std::string(to_string(p.kind));
  out << YAML::Key << "random_u" << YAML::Value << p.random_u;
  out << YAML::Key << "random_phi" << YAML::Value << p.random_phi;
  out << YAML::Key << "aggressive_accel" << YAML::Value << p.aggressive_accel;
  out << YAML::Key << "conservative_decel" << YAML::Value << p.conservative_decel;
  out << YAML::Key << "conservative_proximity" << YAML::Value << p.conservative_proximity;
  out << YAML::Key << "conservative_merge_rate" << YAML::Value << p.conservative_merge_rate;
  out << YAML::Key << "conservative_clear_headway" << YAML::Value << p.conservative_clear_headway;
  out << YAML::Key << "hesitant_accel" << YAML::Value << p.hesitant_accel;
  out << YAML::Key << "hesitant_dwell" << YAML::Value;
  pair(p.hesitant_dwell.lo, p.hesitant_dwell.hi);
  out << YAML::Key << "lane_center" << YAML::Value << p.lane_center;
  out << YAML::Key << "lane_gain_y" << YAML::Value << p.lane_gain_y;
  out << YAML::Key << "lane_gain_theta" << YAML::Value << p.lane_gain_theta;
  out << YAML::Key << "lane_phi_max" << YAML::Value << p.lane_phi_max;
  if (!p.schedule.empty()) {
    out << YAML::Key << "schedule" << YAML::Value << YAML::BeginSeq;
    for (const ExternalCommand& cmd : p.schedule) {
      out << YAML::Flow << YAML::BeginMap;
      out << YAML::Key << "step" << YAML::Value << static_cast<std::uint64_t>(cmd.step);
      out << YAML::Key << "deadman" << YAML::Value << cmd.deadman;
      out << YAML::Key << "u" << YAML::Value << cmd.control.u;
      out << YAML::Key << "phi" << YAML::Value << cmd.control.phi;
      out << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace mixedlane
