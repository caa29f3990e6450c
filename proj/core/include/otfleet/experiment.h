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

#ifndef OTFLEET_EXPERIMENT_H_
#define OTFLEET_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "otfleet/demo_bank.h"
#include "otfleet/error.h"
#include "otfleet/failure_detector.h"
#include "otfleet/fleet.h"
#include "otfleet/metrics.h"
#include "otfleet/sim_world.h"

namespace otfleet {

enum class RunMode { kLogical, kRealtime };

std::string_view RunModeName(RunMode mode);
RunMode ParseRunMode(std::string_view name);

struct ExperimentConfig {
  std::vector<std::string> tasks = {"pour", "hang", "pick_place", "fold"};
  std::size_t num_demos = 50;
  std::uint64_t seed = 1;
  std::string output_dir = "out";

  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::uint64_t encoder_seed = kDefaultEncoderSeed;
  double encoder_clock_scale = 40.0;

  DetectorConfig detector;
  RewindConfig rewind;
  FailureIndexOptions index;
  SimConfig sim;

  // Nominal successful rollouts per task that seed each detector's
  // calibration set before any evaluation.
  std::size_t calibration_rollouts = 50;
  // Offline detection benchmark.
  std::size_t rollouts_per_task = 30;
  double rollout_skill = 0.5;
  // Offline replay feeds verified outcomes back into the detector, episode
  // by episode, as the fleet does.
  bool online_feedback = true;

  // Fleet rounds.
  int num_robots = 4;
  int num_oracle_operators = 2;
  std::size_t min_operator_steps = 3;
  bool randomize_interleaving = false;
  std::size_t rounds = 3;
  std::size_t episodes_per_round = 30;
  double initial_skill = 0.5;
  double policy_noise = 0.004;
  PostTrainConfig post_train;
  RunMode mode = RunMode::kLogical;
  int realtime_period_ms = 5;

  // Throws kConfig.
  void Validate() const;
  nlohmann::ordered_json ToJson() const;
  // Missing keys keep their defaults; unknown keys are rejected with
  // kConfig so typos do not silently fall back.
  static ExperimentConfig FromJson(const nlohmann::ordered_json& j);
  static ExperimentConfig Load(const std::filesystem::path& path);
  // 16 hex digits of FNV-1a over the canonical JSON dump.
  std::string Hash() const;
};

// Seed derivation. Every stream is DeriveSeed(seed, label, index).
struct SeedPlan {
  std::uint64_t root = 0;

  std::uint64_t Demos(std::string_view task) const;
  std::uint64_t Calibration(std::string_view task, std::size_t k) const;
  std::uint64_t RolloutInjection(std::string_view task, std::size_t k) const;
  std::uint64_t RolloutEpisode(std::string_view task, std::size_t k) const;
  std::uint64_t PolicyNoise() const;
  // The same fleet seed drives every round, so rounds differ only through
  // the updated policy.
  std::uint64_t Fleet() const;
};

FeatureEncoder MakeEncoder(const ExperimentConfig& config);

struct Layout {
  std::filesystem::path root;

  std::filesystem::path banks() const { return root / "banks"; }
  std::filesystem::path rollouts() const { return root / "rollouts"; }
  std::filesystem::path calibration() const { return root / "calibration"; }
  std::filesystem::path detect() const { return root / "detect"; }
  std::filesystem::path fleet() const { return root / "fleet"; }
  std::filesystem::path BankFile(std::string_view task) const;
  std::filesystem::path RolloutFile(std::string_view task) const;
  std::filesystem::path CalibrationFile(std::string_view task) const;
};

struct BankSummary {
  std::string task_id;
  std::size_t num_demos = 0;
  std::size_t l_max = 0;
};

// Writes one bank per task plus config.json. Refuses (kIo) to overwrite an
// existing bank unless force is set.
std::vector<BankSummary> GenerateDemoBanks(const ExperimentConfig& config,
                                           const std::filesystem::path& out,
                                           bool force);

// Loads every configured bank and checks it against the encoder.
std::map<std::string, std::shared_ptr<const DemoBank>> LoadBanks(
    const ExperimentConfig& config, const std::filesystem::path& out);

// Skill-1 rollouts without injections, ids 0..calibration_rollouts-1.
std::vector<Episode> NominalRollouts(const ExperimentConfig& config,
                                     const TaskSpec& task, std::size_t l_max,
                                     const FeatureEncoder& encoder);
// rollouts_per_task rollouts at rollout_skill with sampled injections.
std::vector<Episode> InjectedRollouts(const ExperimentConfig& config,
                                      const TaskSpec& task, std::size_t l_max,
                                      const FeatureEncoder& encoder);

// Nominal rollouts for calibration and injected rollouts for the detection
// benchmark, one JSONL file per task in each directory.
void GenerateRollouts(const ExperimentConfig& config,
                      const std::filesystem::path& out, bool force);

// Fresh detector calibrated on the nominal rollouts.
std::shared_ptr<DetectorState> CalibratedDetector(
    const ExperimentConfig& config, const DemoBank& bank,
    const std::vector<Episode>& calibration);

// Ground truth for an offline rollout: failure iff the simulator reports no
// success, with onset at the injection onset (episode length if none).
EpisodeOutcome OfflineOutcome(const Episode& episode,
                              std::vector<std::size_t> warnings);

struct TaskDetection {
  std::string task_id;
  std::vector<EpisodeOutcome> outcomes;
  MetricsReport report;
  double final_delta = 0.0;
};

struct DetectionResult {
  std::vector<TaskDetection> tasks;
  std::vector<EpisodeOutcome> outcomes;
  MetricsReport report;
  std::vector<std::string> step_log;
};

// Offline replay over recorded rollouts. Throws kEmptyInput when no rollout
// exists and kCompatibility on an encoder mismatch.
DetectionResult RunDetection(
    const ExperimentConfig& config,
    const std::map<std::string, std::shared_ptr<const DemoBank>>& banks,
    const std::map<std::string, std::vector<Episode>>& calibration,
    const std::map<std::string, std::vector<Episode>>& rollouts);

// Reads rollouts and calibration from disk, runs detection and writes
// step_log.jsonl, report.json, report.csv and per-task reports.
DetectionResult DetectCommand(const ExperimentConfig& config,
                              const std::filesystem::path& out,
                              const std::filesystem::path& rollout_dir);

struct RoundResult {
  std::size_t round = 0;
  double skill = 0.0;
  FleetResult fleet;
  std::vector<EpisodeOutcome> outcomes;
  MetricsReport report;
};

struct FleetRunResult {
  std::vector<RoundResult> rounds;
  std::vector<RoundRow> table;
};

// Rounds of fleet rollouts with post-training in between. Detectors persist
// across rounds.
FleetRunResult RunFleetRounds(
    const ExperimentConfig& config,
    const std::map<std::string, std::shared_ptr<const DemoBank>>& banks);

// Loads banks, runs the rounds and writes per-round logs, buffers and
// reports plus rounds.csv.
FleetRunResult RunFleetCommand(const ExperimentConfig& config,
                               const std::filesystem::path& out);

// Builds detectors for a fleet: calibrated on fresh nominal rollouts.
std::map<std::string, TaskResources> BuildFleetResources(
    const ExperimentConfig& config,
    const std::map<std::string, std::shared_ptr<const DemoBank>>& banks);

FleetConfig MakeFleetConfig(const ExperimentConfig& config);

// Process exit code for an error code.
int ExitCodeFor(ErrorCode code);

}  // namespace otfleet

#endif  // OTFLEET_EXPERIMENT_H_
