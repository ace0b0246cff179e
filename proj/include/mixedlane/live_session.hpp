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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixedlane/log_io.hpp"

namespace mixedlane {

inline constexpr int kProtocolVersion = 1;

class SessionBusy : public std::runtime_error {
 public:
  SessionBusy() : std::runtime_error("session busy") {}
};

struct SessionOptions {
  /// Simulated seconds per wall second; 0 starts paused and resumes at 1.
  double pace{1.0};
  double frame_rate_hz{30.0};
  /// Input silence [s] after which the dead-man control takes over.
  double deadman_timeout{0.5};
  /// Upper bound on micro-steps per advance() call, so a stalled caller
  /// cannot be asked to simulate an unbounded backlog at once.
  std::int64_t max_steps_per_advance{100000};
};

/// Resolves a scenario name from a reset message.
using ScenarioResolver = std::function<Scenario(const std::string&)>;
/// Receives each run's log once it completes, aborts or is reset. The log's
/// policy carries the recorded human schedule.
using RunEndHandler = std::function<void(const TrajectoryLog&)>;

/// One human-in-the-loop run paced to a caller-supplied wall clock. Every
/// method takes the current wall time in seconds; the core never reads a
/// clock itself. Not thread-safe: one owner drives it.
class SessionCore {
 public:
  explicit SessionCore(SessionOptions opts = {}, ScenarioResolver resolver = {}, RunEndHandler on_end = {})
      : opts_(opts), resolver_(std::move(resolver)), on_end_(std::move(on_end)) {}

  bool active() const { return world_ != nullptr && !world_->done(); }
  bool started() const { return world_ != nullptr; }
  const std::string& id() const { return id_; }
  int run() const { return run_; }
  bool paused() const { return paused_; }
  bool deadman() const { return deadman_; }
  const World& world() const { return *world_; }
  const Scenario& scenario() const { return scenario_; }

  /// Starts a run. Throws SessionBusy while a run is in progress.
  std::string start(const Scenario& sc, double now) {
    if (active()) throw SessionBusy();
    begin(sc, now, opts_.pace <= 0.0);
    return id_;
  }

  nlohmann::ordered_json hello() const {
    nlohmann::ordered_json j;
    j["type"] = "hello";
    j["proto"] = kProtocolVersion;
    j["session"] = id_;
    j["run"] = run_;
    const ScenarioConfig& c = scenario_.config;
    j["lane_width"] = c.lane_width;
    j["micro_step"] = c.micro_step;
    j["rate_hz"] = opts_.frame_rate_hz;
    j["ellipse"] = {{"C", {{"a", c.barrier.c.a}, {"b", c.barrier.c.b}}},
                    {"1", {{"a", c.barrier.one.a}, {"b", c.barrier.one.b}}}};
    j["hdv_limits"] = {{"u", c.hdv_limits.u_max}, {"phi", c.hdv_limits.phi_max}};
    j["paused"] = paused_;
    return j;
  }

  /// Handles one client text frame; returns the frames to send back.
  std::vector<nlohmann::ordered_json> handle(const std::string& text, double now) {
    using json = nlohmann::ordered_json;
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::exception&) {
      return {error_frame("malformed message: not JSON")};
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
      return {error_frame("malformed message: missing type")};
    }
    if (!started()) return {error_frame("no session")};
    const std::string type = msg["type"].get<std::string>();
    if (type == "control") return {control(msg, now)};
    if (type == "pause") {
      if (!paused_) {
        sim_base_ = target_time(now);
        paused_ = true;
      }
      return {};
    }
    if (type == "resume") {
      if (paused_) {
        paused_ = false;
        anchor_ = now;
      }
      return {};
    }
    if (type == "reset") {
      Scenario sc = scenario_;
      if (msg.contains("scenario") && !msg["scenario"].is_null()) {
        if (!msg["scenario"].is_string()) return {error_frame("malformed message: scenario must be a string")};
        if (!resolver_) return {error_frame("reset: no scenario directory configured")};
        try {
          sc = resolver_(msg["scenario"].get<std::string>());
        } catch (const std::exception& e) {
          return {error_frame(std::string("reset: ") + e.what())};
        }
      }
      begin(sc, now, paused_);
      return {hello()};
    }
    return {error_frame("unknown message type '" + type + "'")};
  }

  /// Advances the world to the paced target time and returns the state
  /// frames that fell due.
  std::vector<nlohmann::ordered_json> advance(double now) {
    std::vector<nlohmann::ordered_json> out;
    if (!started()) return out;
    if (!world_->done() && !deadman_ && now - last_input_ > opts_.deadman_timeout) {
      deadman_ = true;
      world_->push_hdv_command({0, true, {}});
    }
    if (!paused_) {
      const double dt = scenario_.config.micro_step;
      const auto target = static_cast<std::int64_t>(std::floor(target_time(now) / dt + 1e-9));
      std::int64_t budget = opts_.max_steps_per_advance;
      while (!world_->done() && world_->step_index() < target && budget-- > 0) world_->step();
    }
    if (now >= next_frame_ || (world_->done() && !final_sent_)) {
      out.push_back(state_frame());
      next_frame_ = std::max(next_frame_ + 1.0 / opts_.frame_rate_hz, now);
      if (world_->done()) final_sent_ = true;
    }
    if (world_->done()) report();
    return out;
  }

  /// The human commands installed so far, as an external schedule.
  const std::vector<ExternalCommand>& recorded_commands() const { return world_->policy().config().schedule; }

  /// Scenario whose external policy replays this session.
  Scenario replay_scenario() const {
    Scenario sc = scenario_;
    sc.policy.kind = PolicyKind::kExternal;
    sc.policy.schedule = recorded_commands();
    return sc;
  }

  nlohmann::ordered_json state_frame() {
    using json = nlohmann::ordered_json;
    const ScenarioConfig& c = scenario_.config;
    const auto& s = world_->states();
    json j;
    j["type"] = "state";
    j["run"] = run_;
    j["t"] = world_->time();
    json vehicles = json::object();
    for (Vehicle v : {Vehicle::kOne, Vehicle::kC, Vehicle::kH, Vehicle::kU}) {
      const VehicleState& x = s[index(v)];
      vehicles[std::string(vehicle_name(v))] = {{"x", x.x}, {"y", x.y}, {"theta", x.theta}, {"v", x.v}};
    }
    j["vehicles"] = vehicles;
    j["barriers"] = detail::barriers_json(barrier_values(s, c.barrier));
    const VehicleState& vc = s[index(Vehicle::kC)];
    const VehicleState& v1 = s[index(Vehicle::kOne)];
    j["ellipses"] = {{"C", {{"a", c.barrier.c.a * vc.v}, {"b", c.barrier.c.b * vc.v}}},
                     {"1", {{"a", c.barrier.one.a * v1.v}, {"b", c.barrier.one.b * v1.v}}}};
    json events = json::array();
    const auto& evs = world_->log().events;
    for (; events_sent_ < evs.size(); ++events_sent_) {
      const EventRecord& e = evs[events_sent_];
      json ev = {{"t", e.t}, {"kind", std::string(to_string(e.kind))}};
      if (e.vehicle) ev["vehicle"] = std::string(vehicle_name(*e.vehicle));
      events.push_back(ev);
    }
    j["events"] = events;
    const ControlInput uh = world_->hdv_control();
    j["u_H"] = {{"u", uh.u}, {"phi", uh.phi}};
    j["deadman"] = deadman_;
    j["paused"] = paused_;
    j["status"] = std::string(to_string(world_->log().outcome));
    if (world_->done()) j["t_f"] = world_->log().t_f;
    return j;
  }

  static nlohmann::ordered_json error_frame(const std::string& msg) {
    return {{"type", "error"}, {"msg", msg}};
  }

 private:
  void report() {
    if (reported_ || !world_) return;
    reported_ = true;
    if (!on_end_) return;
    TrajectoryLog log = world_->log();
    log.policy.schedule = recorded_commands();
    on_end_(log);
  }

  void begin(const Scenario& sc, double now, bool paused) {
    report();
    scenario_ = sc;
    scenario_.policy.kind = PolicyKind::kExternal;
    scenario_.policy.schedule.clear();
    world_ = std::make_unique<World>(scenario_.config, scenario_.policy);
    ++run_;
    id_ = "s" + std::to_string(run_);
    paused_ = paused;
    sim_base_ = 0.0;
    anchor_ = now;
    last_input_ = now;
    deadman_ = true;  // no input yet: lane hold
    next_frame_ = now;
    events_sent_ = 0;
    final_sent_ = false;
    reported_ = false;
  }

  double target_time(double now) const {
    if (paused_) return sim_base_;
    const double pace = opts_.pace > 0.0 ? opts_.pace : 1.0;
    return sim_base_ + pace * std::max(0.0, now - anchor_);
  }

  static std::optional<double> finite_number(const nlohmann::ordered_json& msg, const char* key) {
    if (!msg.contains(key) || !msg[key].is_number()) return std::nullopt;
    const double v = msg[key].get<double>();
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  }

  nlohmann::ordered_json control(const nlohmann::ordered_json& msg, double now) {
    const auto u = finite_number(msg, "u");
    const auto phi = finite_number(msg, "phi");
    if (!u || !phi) return error_frame("malformed control: u and phi must be finite numbers");
    if (world_->done()) return error_frame("run finished; send reset");
    const HdvLimits& lim = scenario_.config.hdv_limits;
    const ControlInput applied{std::clamp(*u, -lim.u_max, lim.u_max), std::clamp(*phi, -lim.phi_max, lim.phi_max)};
    world_->push_hdv_command({0, false, applied});
    last_input_ = now;
    deadman_ = false;
    nlohmann::ordered_json ack;
    ack["type"] = "ack";
    ack["u"] = applied.u;
    ack["phi"] = applied.phi;
    ack["clamped"] = applied.u != *u || applied.phi != *phi;
    ack["step"] = world_->step_index();
    if (const auto t = finite_number(msg, "t")) ack["t"] = *t;
    return ack;
  }

  SessionOptions opts_;
  ScenarioResolver resolver_;
  RunEndHandler on_end_;
  Scenario scenario_{};
  std::unique_ptr<World> world_;
  std::string id_;
  int run_{0};
  bool paused_{false};
  double sim_base_{0.0};
  double anchor_{0.0};
  double last_input_{0.0};
  bool deadman_{true};
  double next_frame_{0.0};
  std::size_t events_sent_{0};
  bool final_sent_{false};
  bool reported_{false};
};

}  // namespace mixedlane
