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

#include <gtest/gtest.h>

#include <string>

#include "mixedlane/scenario_io.hpp"

#ifndef MIXEDLANE_SCENARIO_DIR
#define MIXEDLANE_SCENARIO_DIR "scenarios"
#endif

namespace mixedlane {
namespace {

ScenarioError parse_error(const std::string& text) {
  try {
    parse_scenario(text, "test.yaml");
  } catch (const ScenarioError& e) {
    return e;
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return ScenarioError("", 0, 0, "", "");
}

TEST(ScenarioIo, EmptyDocumentGivesDefaults) {
  EXPECT_EQ(scenario_to_yaml(parse_scenario("")), scenario_to_yaml(Scenario{}));
}

TEST(ScenarioIo, ShippedDefaultMatchesBuiltInDefaults) {
  const Scenario sc = load_scenario(std::string(MIXEDLANE_SCENARIO_DIR) + "/default.yaml");
  EXPECT_EQ(scenario_to_yaml(sc), scenario_to_yaml(Scenario{}));
  EXPECT_EQ(sc.config.initial[index(Vehicle::kC)], (VehicleState{20, 0, 0, 25}));
}

TEST(ScenarioIo, RoundTripIsExact) {
  Scenario sc;
  sc.config.seed = 42;
  sc.config.initial[index(Vehicle::kH)].v = 1.0 / 3.0;
  sc.config.controller.mode = ControlMode::kTimeDriven;
  sc.config.controller.hdv_known = true;
  sc.config.controller.sync_rule = SyncRule::kCumulative;
  sc.config.controller.bounds.s[index(Vehicle::kU)].theta = 0.123456789012345678;
  sc.config.disturbance.eps[2] = {-0.1, 0.3};
  sc.policy.kind = PolicyKind::kExternal;
  sc.policy.schedule = {{0, false, {1.5, -0.25}}, {120, true, {}}};
  const std::string y = scenario_to_yaml(sc);
  const Scenario back = parse_scenario(y);
  EXPECT_EQ(scenario_to_yaml(back), y);
  EXPECT_EQ(back.config.initial[index(Vehicle::kH)].v, 1.0 / 3.0);
  EXPECT_EQ(back.policy.schedule, sc.policy.schedule);
  EXPECT_EQ(back.config.controller.sync_rule, SyncRule::kCumulative);
}

TEST(ScenarioIo, PartialOverridesKeepOtherDefaults) {
  const Scenario sc = parse_scenario("controller:\n  mode: time\n  delta: 0.1\nhdv_policy:\n  kind: hesitant\n");
  EXPECT_EQ(sc.config.controller.mode, ControlMode::kTimeDriven);
  EXPECT_EQ(sc.config.controller.delta, 0.1);
  EXPECT_EQ(sc.config.controller.epsilon, 0.3);
  EXPECT_EQ(sc.policy.kind, PolicyKind::kHesitant);
  EXPECT_EQ(sc.config.v_max, 35.0);
}

TEST(ScenarioIo, UnknownKeyIsReportedWithItsLine) {
  const ScenarioError e = parse_error("seed: 3\nbarrier:\n  c: {a: 0.6, b: 0.1}\n  gain: 2\n");
  EXPECT_EQ(e.line(), 4);
  EXPECT_EQ(e.key(), "barrier.gain");
  EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos);
}

TEST(ScenarioIo, BadNumberNamesTheKey) {
  const ScenarioError e = parse_error("controller:\n  delta: fast\n");
  EXPECT_EQ(e.line(), 2);
  EXPECT_EQ(e.key(), "controller.delta");
  EXPECT_EQ(std::string(e.what()).rfind("test.yaml:2:", 0), 0u);
}

TEST(ScenarioIo, WrongListLength) {
  const ScenarioError e = parse_error("clf_rates: [1, 2, 3]\n");
  EXPECT_EQ(e.key(), "clf_rates");
}

TEST(ScenarioIo, UnknownPolicyKind) {
  const ScenarioError e = parse_error("hdv_policy:\n  kind: reckless\n");
  EXPECT_EQ(e.key(), "hdv_policy.kind");
  EXPECT_EQ(e.line(), 2);
}

TEST(ScenarioIo, ValidationFailureNamesTheKey) {
  const ScenarioError e = parse_error("v_min: 40\n");
  EXPECT_EQ(e.key(), "speed_limits");
  const ScenarioError d = parse_error("controller:\n  delta: -1\n");
  EXPECT_EQ(d.key(), "controller.delta");
  EXPECT_EQ(d.line(), 2);
}

TEST(ScenarioIo, NonMappingSection) {
  const ScenarioError e = parse_error("initial: 5\n");
  EXPECT_EQ(e.key(), "initial");
}

TEST(ScenarioIo, SyntaxErrorCarriesPosition) {
  const ScenarioError e = parse_error("a: [1,\n");
  EXPECT_GT(e.line(), 0);
}

TEST(ScenarioIo, MissingFile) {
  EXPECT_THROW(load_scenario("/nonexistent/scenario.yaml"), ScenarioError);
}

}  // namespace
}  // namespace mixedlane
