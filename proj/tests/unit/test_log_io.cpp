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

#include <sstream>
#include <string>

#include "mixedlane/log_io.hpp"

namespace mixedlane {
namespace {

Scenario short_scenario(PolicyKind kind = PolicyKind::kRandom) {
  Scenario sc;
  sc.config.controller.t_final = 1.0;
  sc.policy.kind = kind;
  return sc;
}

std::vector<nlohmann::json> records(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(ConfigHash, ChangesWithAnyField) {
  Scenario a;
  Scenario b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.config.barrier.c.b = 0.1000001;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(LogIo, RecordLayout) {
  const Scenario sc = short_scenario();
  const TrajectoryLog log = run_scenario(sc.config, sc.policy);
  const auto recs = records(log_to_string(log));
  ASSERT_GE(recs.size(), 3u);
  EXPECT_EQ(recs.front()["type"], "header");
  EXPECT_EQ(recs.front()["schema"], kLogSchemaVersion);
  EXPECT_EQ(recs.front()["config_hash"], config_hash(sc));
  EXPECT_EQ(recs.back()["type"], "summary");
  EXPECT_EQ(recs.back()["metrics"]["outcome"], "abort");
  std::size_t samples = 0;
  for (const auto& r : recs) {
    if (r["type"] == "sample") {
      ++samples;
      EXPECT_TRUE(r.contains("barriers"));
      EXPECT_EQ(r["vehicles"].size(), 4u);
    }
    if (r["type"] == "qp") EXPECT_FALSE(r.contains("solve_time_s"));
  }
  EXPECT_EQ(samples, log.samples.size());
}

TEST(LogIo, RepeatedRunsAreByteIdentical) {
  const Scenario sc = short_scenario();
  const std::string a = log_to_string(run_scenario(sc.config, sc.policy));
  const std::string b = log_to_string(run_scenario(sc.config, sc.policy));
  EXPECT_EQ(a, b);
}

TEST(LogIo, ReadBackControlsAndScenario) {
  const Scenario sc = short_scenario(PolicyKind::kHesitant);
  const TrajectoryLog log = run_scenario(sc.config, sc.policy);
  std::istringstream in(log_to_string(log));
  const LoadedLog loaded = read_log(in);
  EXPECT_EQ(scenario_to_yaml(loaded.scenario), scenario_to_yaml(sc));
  EXPECT_EQ(loaded.controls, log.controls);
  EXPECT_EQ(loaded.hdv_controls, log.hdv_controls);
  EXPECT_EQ(loaded.outcome, log.outcome);
  EXPECT_EQ(loaded.final_step, log.final_step);
}

TEST(LogIo, RecordedHdvControlsReplayBitExactly) {
  const Scenario sc = short_scenario(PolicyKind::kRandom);
  const TrajectoryLog log = run_scenario(sc.config, sc.policy);
  std::istringstream in(log_to_string(log));
  const LoadedLog loaded = read_log(in);
  const TrajectoryLog again = run_scenario(loaded.scenario.config, recorded_policy(loaded));
  ASSERT_EQ(again.samples.size(), log.samples.size());
  for (std::size_t i = 0; i < log.samples.size(); ++i) {
    ASSERT_EQ(again.samples[i].states, log.samples[i].states) << "step " << i;
  }
  EXPECT_EQ(again.controls, log.controls);
}

TEST(LogIo, MissingHeaderIsAnError) {
  std::istringstream in("{\"type\":\"control\",\"step\":0,\"u_C\":[0,0],\"u_1\":[0,0]}\n");
  EXPECT_THROW(read_log(in), LogError);
}

TEST(LogIo, MalformedLineNamesTheLine) {
  std::istringstream in("{\"type\":\"header\"\n");
  try {
    read_log(in, "x.jsonl");
    FAIL();
  } catch (const LogError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("x.jsonl:1:", 0), 0u);
  }
}

}  // namespace
}  // namespace mixedlane
