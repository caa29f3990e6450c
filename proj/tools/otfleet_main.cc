// Copyright 2026 The otfleet Authors
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

// otfleet: experiment driver.
//
//   otfleet gen-demos     write one demo bank per task
//   otfleet gen-rollouts  record calibration and benchmark rollouts
//   otfleet detect        offline detector replay and metrics report
//   otfleet run-fleet     adaptation rounds with post-training
//   otfleet serve         realtime fleet behind the console web socket
//   otfleet print-config  dump the effective configuration
//
// Exit codes: 0 ok, 1 internal, 2 usage or config, 3 compatibility,
// 4 I/O, 5 protocol, 6 empty input, 7 deadlock, 8 solver or size.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "otfleet/error.h"
#include "otfleet/experiment.h"
#ifdef OTFLEET_WITH_CONSOLE
#include "otfleet/console.h"
#include "otfleet/console_server.h"
#endif

namespace {

using otfleet::Error;
using otfleet::ErrorCode;
using otfleet::ExperimentConfig;

constexpr int kUsageExit = 2;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string mode;
  int port = 8765;
  std::string rollouts;
  double duration_s = 0.0;
};

ExperimentConfig Resolve(const CommonFlags& f) {
  ExperimentConfig config = f.config_path.empty()
                                ? ExperimentConfig{}
                                : ExperimentConfig::Load(f.config_path);
  if (f.seed.has_value()) config.seed = *f.seed;
  if (!f.out.empty()) config.output_dir = f.out;
  if (!f.mode.empty()) config.mode = otfleet::ParseRunMode(f.mode);
  config.Validate();
  return config;
}

std::string Pct(const otfleet::Rate& r) {
  if (!r.defined()) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *r.value);
  return buf;
}

std::string Opt(const std::optional<double>& v) {
  if (!v.has_value()) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

int GenDemos(const CommonFlags& f) {
  const ExperimentConfig config = Resolve(f);
  for (const auto& s :
       otfleet::GenerateDemoBanks(config, config.output_dir, f.force)) {
    std::cout << s.task_id << ": N=" << s.num_demos << " l_max=" << s.l_max
              << "\n";
  }
  std::cout << "config_hash " << config.Hash() << "\n";
  return 0;
}

int GenRollouts(const CommonFlags& f) {
  const ExperimentConfig config = Resolve(f);
  otfleet::GenerateRollouts(config, config.output_dir, f.force);
  std::cout << "wrote " << config.rollouts_per_task << " rollouts and "
            << config.calibration_rollouts << " calibration rollouts per task\n";
  return 0;
}

int Detect(const CommonFlags& f) {
  const ExperimentConfig config = Resolve(f);
  const otfleet::Layout layout{config.output_dir};
  const std::filesystem::path dir =
      f.rollouts.empty() ? layout.rollouts() : std::filesystem::path(f.rollouts);
  const auto result = otfleet::DetectCommand(config, config.output_dir, dir);
  for (const auto& t : result.tasks) {
    std::cout << t.task_id << ": tpr=" << Pct(t.report.confusion.tpr)
              << " tnr=" << Pct(t.report.confusion.tnr)
              << " accuracy=" << Opt(t.report.accuracy)
              << " delta=" << t.final_delta << "\n";
  }
  const auto& r = result.report;
  std::cout << "all: episodes=" << r.episodes << " accuracy=" << Opt(r.accuracy)
            << " weighted_accuracy=" << Opt(r.weighted_accuracy)
            << " sample_level_tnr=" << Pct(r.sample_level_tnr) << "\n";
  return 0;
}

int RunFleet(const CommonFlags& f) {
  const ExperimentConfig config = Resolve(f);
  const auto result = otfleet::RunFleetCommand(config, config.output_dir);
  for (const auto& row : result.table) {
    std::cout << "round " << row.round << ": skill=" << row.skill
              << " success_rate=" << Pct(row.success_rate)
              << " intervention_rate=" << Pct(row.intervention_rate) << "\n";
  }
  return 0;
}

#ifdef OTFLEET_WITH_CONSOLE
std::atomic<bool> g_stop{false};

extern "C" void OnSignal(int) { g_stop = true; }
#endif

int Serve(const CommonFlags& f) {
#ifdef OTFLEET_WITH_CONSOLE
  if (f.port < 0 || f.port > 65535) {
    throw Error(ErrorCode::kConfig, "port out of range");
  }
  const ExperimentConfig config = Resolve(f);
  const auto banks = otfleet::LoadBanks(config, config.output_dir);
  const otfleet::FeatureEncoder encoder = otfleet::MakeEncoder(config);
  otfleet::Fleet fleet(otfleet::MakeFleetConfig(config),
                       otfleet::BuildFleetResources(config, banks), encoder,
                       otfleet::ScriptedPolicy{config.initial_skill,
                                               config.policy_noise,
                                               otfleet::SeedPlan{config.seed}
                                                   .PolicyNoise()});
  otfleet::ConsoleHub hub(fleet);
  otfleet::ConsoleServer::Options options;
  options.port = static_cast<std::uint16_t>(f.port);
  otfleet::ConsoleServer server(hub, options);
  server.Start();
  std::signal(SIGINT, OnSignal);
  std::signal(SIGTERM, OnSignal);
  std::cout << "serving on ws://127.0.0.1:" << server.port() << "\n"
            << std::flush;
  fleet.StartRealtime(std::chrono::milliseconds(
      std::max(config.realtime_period_ms, 50)));
  const auto start = std::chrono::steady_clock::now();
  while (!g_stop && !fleet.Done()) {
    if (f.duration_s > 0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count() > f.duration_s) {
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  fleet.StopRealtime();
  server.Stop();
  const std::filesystem::path dir =
      std::filesystem::path(config.output_dir) / "serve";
  std::filesystem::create_directories(dir);
  fleet.events().Write(dir / "events.jsonl");
  std::cout << "event log: " << (dir / "events.jsonl").string() << "\n";
  return 0;
#else
  (void)f;
  throw Error(ErrorCode::kConfig, "built without the console bridge");
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"otfleet: fleet failure detection experiments"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "experiment config JSON")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", flags.seed, "root seed");
    cmd->add_option("--out", flags.out, "output directory");
  };
  CLI::App* gen_demos = app.add_subcommand("gen-demos", "write demo banks");
  add_common(gen_demos);
  gen_demos->add_flag("--force", flags.force, "overwrite existing banks");
  CLI::App* gen_rollouts =
      app.add_subcommand("gen-rollouts", "record benchmark rollouts");
  add_common(gen_rollouts);
  gen_rollouts->add_flag("--force", flags.force, "overwrite existing rollouts");
  CLI::App* detect = app.add_subcommand("detect", "offline detector replay");
  add_common(detect);
  detect->add_option("--rollouts", flags.rollouts,
                     "rollout directory (default <out>/rollouts)");
  CLI::App* run_fleet = app.add_subcommand("run-fleet", "adaptation rounds");
  add_common(run_fleet);
  run_fleet->add_option("--mode", flags.mode, "logical or realtime")
      ->check(CLI::IsMember({"logical", "realtime"}));
  CLI::App* serve = app.add_subcommand("serve", "console bridge");
  add_common(serve);
  serve->add_option("--port", flags.port, "listen port on 127.0.0.1");
  serve->add_option("--duration", flags.duration_s,
                    "stop after this many seconds (0: run to completion)");
  CLI::App* print_config =
      app.add_subcommand("print-config", "dump the effective configuration");
  add_common(print_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageExit;
  }

  try {
    if (*gen_demos) return GenDemos(flags);
    if (*gen_rollouts) return GenRollouts(flags);
    if (*detect) return Detect(flags);
    if (*run_fleet) return RunFleet(flags);
    if (*serve) return Serve(flags);
    if (*print_config) {
      const ExperimentConfig config = Resolve(flags);
      std::cout << config.ToJson().dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << otfleet::ErrorCodeName(e.code())
              << "]: " << e.what() << "\n";
    return otfleet::ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
