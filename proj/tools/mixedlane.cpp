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

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mixedlane/batch.hpp"
#include "mixedlane/live_server.hpp"

namespace fs = std::filesystem;
using namespace mixedlane;

namespace {

constexpr int kExitComplete = 0;
constexpr int kExitError = 1;
constexpr int kExitAbort = 2;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mixedlane");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%^%l%$: %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("MIXEDLANE_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only "off" itself should silence.
    if (level != spdlog::level::off || std::string(env) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("MIXEDLANE_LOG_LEVEL: unknown level '{}', using info", env);
    }
  }
}

Scenario load_or_default(const std::string& path) {
  if (path.empty()) return Scenario{};
  return load_scenario(path);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string fmt_ms(const MeanStd& m) { return fmt::format("{:.2f}±{:.2f}", m.mean, m.std); }

struct RunArgs {
  std::string scenario;
  std::string out;
  std::string mode;
  std::string policy;
  std::optional<std::uint64_t> seed;
  std::optional<double> t_final;
  int stride{1};
  bool no_qp{false};
};

int cmd_run(const RunArgs& a) {
  Scenario sc = load_or_default(a.scenario);
  if (a.mode == "time") sc.config.controller.mode = ControlMode::kTimeDriven;
  if (a.mode == "event") sc.config.controller.mode = ControlMode::kEventDriven;
  if (!a.policy.empty()) sc.policy.kind = *policy_kind_from(a.policy);
  if (a.seed) sc.config.seed = *a.seed;
  if (a.t_final) sc.config.controller.t_final = *a.t_final;

  RunOptions ro;
  ro.sample_stride = a.stride;
  spdlog::info("run: mode {} policy {} seed {}", to_string(sc.config.controller.mode), to_string(sc.policy.kind),
               sc.config.seed);
  const TrajectoryLog log = run_scenario(sc.config, sc.policy, ro);
  for (const std::string& w : log.warnings) spdlog::warn("{}", w);
  const Metrics m = compute_metrics(log);
  if (!a.out.empty()) {
    std::ofstream out = open_out(a.out);
    write_log(out, log, {true, !a.no_qp});
    spdlog::info("log written to {}", a.out);
  }
  std::cout << metrics_json(m).dump() << "\n";
  if (m.fallback_count > 0) spdlog::warn("{} control updates fell back to braking (QP infeasible)", m.fallback_count);
  return m.outcome == Outcome::kComplete ? kExitComplete : kExitAbort;
}

struct CompareArgs {
  std::string scenario;
  std::string out;
  std::size_t seeds{50};
  std::uint64_t first_seed{1};
  unsigned threads{0};
  int series_stride{10};
};

int cmd_compare(const CompareArgs& a) {
  if (a.seeds == 0) throw ConfigError("--seeds: at least one seed is required");
  const Scenario base = load_or_default(a.scenario);
  const auto seeds = batch_seeds(a.first_seed, a.seeds);
  fs::create_directories(a.out);

  nlohmann::ordered_json summary;
  summary["config_hash"] = config_hash(base);
  summary["seeds"] = seeds;
  std::cout << fmt::format("{:<20} {:>5} {:>9} {:>12} {:>10} {:>9} {:>14}\n", "case", "runs", "complete",
                           "min b_CH", "CH<0 runs", "any<0", "fallback runs");
  for (CompareCase c : kAllCases) {
    const Scenario sc = case_scenario(base, c);
    // Barrier series are gathered per run and written by this thread afterwards.
    std::vector<std::vector<Sample>> series(seeds.size());
    BatchOptions bo;
    bo.threads = a.threads;
    bo.sample_stride = a.series_stride;
    bo.sink = [&](std::size_t i, const TrajectoryLog& log) { series[i] = log.samples; };
    spdlog::info("compare: {} over {} seeds", to_string(c), seeds.size());
    const BatchReport rep = run_batch(sc, seeds, std::string(to_string(c)), bo);

    std::ofstream csv = open_out(fs::path(a.out) / (std::string(to_string(c)) + "_barriers.csv"));
    csv << "seed,t,CH,1C,1H,CU\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      for (const Sample& s : series[i]) {
        csv << fmt::format("{},{:.3f},{:.17g},{:.17g},{:.17g},{:.17g}\n", seeds[i], s.t, s.barriers[0], s.barriers[1],
                           s.barriers[2], s.barriers[3]);
      }
    }
    summary[std::string(to_string(c))] = report_json(rep);
    std::cout << fmt::format("{:<20} {:>5} {:>9} {:>12.2f} {:>10} {:>9} {:>14}\n", to_string(c), rep.runs.size(),
                             rep.count(Outcome::kComplete), rep.min_safety(), rep.ch_violations(), rep.violations(),
                             rep.runs_with_fallback());
  }
  std::ofstream out = open_out(fs::path(a.out) / "summary.json");
  out << summary.dump(2) << "\n";
  spdlog::info("compare results written to {}", a.out);
  return kExitComplete;
}

struct HumanBatchArgs {
  std::string scenario;
  std::string archetype;
  std::string out;
  std::size_t reps{10};
  std::uint64_t first_seed{1};
  unsigned threads{0};
};

int cmd_human_batch(const HumanBatchArgs& a) {
  if (a.reps == 0) throw ConfigError("--reps: at least one repetition is required");
  const auto kind = policy_kind_from(a.archetype);
  const Scenario sc = archetype_scenario(load_or_default(a.scenario), kind ? *kind : PolicyKind::kExternal);
  BatchOptions bo;
  bo.threads = a.threads;
  const BatchReport rep = run_batch(sc, batch_seeds(a.first_seed, a.reps), a.archetype, bo);
  if (!a.out.empty()) {
    std::ofstream out = open_out(a.out);
    out << report_json(rep).dump(2) << "\n";
  }
  std::cout << fmt::format("{:<13} {:>5} {:>5} {:>6} {:>12} {:>12} {:>14}\n", "archetype", "A-HDV", "B-HDV", "abort",
                           "Safety", "t_f [s]", "Energy");
  std::cout << fmt::format("{:<13} {:>5} {:>5} {:>6} {:>12.1f} {:>12} {:>14}\n", a.archetype,
                           rep.count(MergeSide::kAhead), rep.count(MergeSide::kBehind), rep.count(Outcome::kAbort),
                           rep.min_safety(), fmt_ms(rep.t_f()), fmt_ms(rep.energy()));
  return kExitComplete;
}

struct ReplayArgs {
  std::string log;
  std::string out;
};

int cmd_replay(const ReplayArgs& a) {
  std::ifstream in(a.log);
  if (!in) throw std::runtime_error("cannot open " + a.log);
  const LoadedLog loaded = read_log(in, a.log);
  const TrajectoryLog log = run_scenario(loaded.scenario.config, recorded_policy(loaded));
  const Metrics m = compute_metrics(log);
  if (!a.out.empty()) {
    std::ofstream out = open_out(a.out);
    write_log(out, log);
  }
  const bool same = log.final_step == loaded.final_step && log.outcome == loaded.outcome &&
                    log.controls == loaded.controls;
  std::cout << metrics_json(m).dump() << "\n";
  if (!same) {
    spdlog::error("replay diverged from the recorded run");
    return kExitError;
  }
  spdlog::info("replay reproduced the recorded CAV controls and outcome");
  return m.outcome == Outcome::kComplete ? kExitComplete : kExitAbort;
}

struct ServeArgs {
  std::string scenario;
  std::string scenario_dir{"scenarios"};
  std::string address{"127.0.0.1"};
  unsigned short port{8765};
  double pace{1.0};
  std::string record;
};

LiveServer* g_server = nullptr;

int cmd_serve(const ServeArgs& a) {
  const Scenario sc = load_or_default(a.scenario);
  ServerOptions so;
  so.address = a.address;
  so.port = a.port;
  so.session.pace = a.pace;
  const fs::path dir = a.scenario_dir;
  ScenarioResolver resolver = [dir](const std::string& name) {
    if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos) {
      throw ConfigError("invalid scenario name '" + name + "'");
    }
    return load_scenario((dir / (name + ".yaml")).string());
  };
  int recorded = 0;
  RunEndHandler on_end = [&](const TrajectoryLog& log) {
    spdlog::info("run ended: {} at t = {:.3f} s", to_string(log.outcome), log.t_f);
    if (a.record.empty()) return;
    const fs::path path = fs::path(a.record) / fmt::format("session_{:03d}.jsonl", ++recorded);
    std::ofstream out = open_out(path);
    write_log(out, log);
    spdlog::info("session log written to {}", path.string());
  };
  LiveServer server(sc, so, resolver, on_end);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  spdlog::info("serving ws://{}:{} (pace {})", a.address, server.port(), a.pace);
  server.run();
  g_server = nullptr;
  return kExitComplete;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Mixed-traffic lane-change simulator with event-triggered CBF controllers"};
  app.require_subcommand(1);

  const auto policy_check = CLI::IsMember({"random", "aggressive", "conservative", "hesitant", "external"});

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run one scenario and write its trajectory log");
  run_cmd->add_option("--scenario", run.scenario, "Scenario YAML (default: built-in defaults)");
  run_cmd->add_option("--mode", run.mode, "Controller mode")->check(CLI::IsMember({"time", "event"}));
  run_cmd->add_option("--seed", run.seed, "RNG seed");
  run_cmd->add_option("--policy", run.policy, "HDV policy")->check(policy_check);
  run_cmd->add_option("--t-final", run.t_final, "Abort horizon [s]")->check(CLI::PositiveNumber);
  run_cmd->add_option("--out", run.out, "Trajectory log (JSON lines)");
  run_cmd->add_option("--stride", run.stride, "Keep every n-th micro-step sample (0: none)")
      ->check(CLI::NonNegativeNumber);
  run_cmd->add_flag("--no-qp", run.no_qp, "Leave per-solve QP records out of the log");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Time-driven (known / unknown HDV) vs event-driven over paired seeds");
  cmp_cmd->add_option("--scenario", cmp.scenario, "Scenario YAML (default: built-in defaults)");
  cmp_cmd->add_option("--seeds", cmp.seeds, "Number of seeds")->required();
  cmp_cmd->add_option("--first-seed", cmp.first_seed, "First seed");
  cmp_cmd->add_option("--out", cmp.out, "Output directory")->required();
  cmp_cmd->add_option("--threads", cmp.threads, "Worker threads (0: one per core)");
  cmp_cmd->add_option("--series-stride", cmp.series_stride, "Micro-steps between barrier series samples")
      ->check(CLI::PositiveNumber);

  HumanBatchArgs hb;
  auto* hb_cmd = app.add_subcommand("human-batch", "Repeated runs with a scripted driver archetype");
  hb_cmd->add_option("--scenario", hb.scenario, "Scenario YAML (default: built-in defaults)");
  hb_cmd->add_option("--archetype", hb.archetype, "Driver archetype")
      ->required()
      ->check(CLI::IsMember({"aggressive", "conservative", "hesitant"}));
  hb_cmd->add_option("--reps", hb.reps, "Repetitions");
  hb_cmd->add_option("--first-seed", hb.first_seed, "First seed");
  hb_cmd->add_option("--out", hb.out, "Batch report (JSON)");
  hb_cmd->add_option("--threads", hb.threads, "Worker threads (0: one per core)");

  ReplayArgs rp;
  auto* rp_cmd = app.add_subcommand("replay", "Re-run a trajectory log from its recorded HDV controls");
  rp_cmd->add_option("--log", rp.log, "Trajectory log to replay")->required();
  rp_cmd->add_option("--out", rp.out, "Write the replayed log here");

  ServeArgs sv;
  auto* sv_cmd = app.add_subcommand("serve", "Live session server (WebSocket)");
  sv_cmd->add_option("--scenario", sv.scenario, "Scenario YAML (default: built-in defaults)");
  sv_cmd->add_option("--scenario-dir", sv.scenario_dir, "Directory searched by reset messages");
  sv_cmd->add_option("--address", sv.address, "Listen address");
  sv_cmd->add_option("--port", sv.port, "Listen port");
  sv_cmd->add_option("--pace", sv.pace, "Real-time factor (0: start paused)")->check(CLI::NonNegativeNumber);
  sv_cmd->add_option("--record", sv.record, "Directory for session logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitComplete : kExitError;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*cmp_cmd) return cmd_compare(cmp);
    if (*hb_cmd) return cmd_human_batch(hb);
    if (*rp_cmd) return cmd_replay(rp);
    if (*sv_cmd) return cmd_serve(sv);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
  }
  return kExitError;
}
