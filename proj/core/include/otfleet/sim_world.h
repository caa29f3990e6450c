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

// Deterministic 2D manipulation surrogate. An effector moves in the unit
// square, grasps one of two objects and carries it to a goal pose. Four
// shipped tasks vary the start regions, goal offsets and orientation
// requirements. Scripted policies follow waypoints with Gaussian action
// noise; failures are injected on a schedule drawn from policy skill.

#ifndef OTFLEET_SIM_WORLD_H_
#define OTFLEET_SIM_WORLD_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "otfleet/matrix.h"
#include "otfleet/rng.h"
#include "otfleet/trajectory.h"

namespace otfleet {

// dx, dy, dtheta, grip (+1 close, -1 open, 0 hold).
using Action = std::array<double, 4>;
inline constexpr std::size_t kActionDim = 4;

struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 1.0;
  double y1 = 1.0;
};

struct TaskSpec {
  std::string id;
  Box effector_start;
  // Object 0 is manipulated; object 1 is the anchor the goal is defined on.
  Box object_start;
  Box anchor_start;
  double object_theta = 0.0;
  std::array<double, 2> goal_offset{0.0, 0.0};
  double goal_theta = 0.0;
  bool check_theta = false;
  double position_tolerance = 0.05;
  double angle_tolerance = 0.2;
};

// pour, hang, pick_place, fold.
const std::vector<TaskSpec>& ShippedTasks();
// Throws kConfig for an unknown id.
const TaskSpec& FindTask(std::string_view task_id);

struct SimConfig {
  double max_speed = 0.05;
  double rotation_speed = 0.15;
  double pursuit_gain = 0.4;
  double rotation_gain = 0.4;
  double grasp_radius = 0.02;
  // Release once the held object is within this fraction of the tolerances.
  double release_fraction = 0.4;
  // Demonstrations move slower than deployed policies, which leaves the
  // rollout cap l_max some headroom.
  double demo_speed_factor = 0.85;
  double demo_noise = 0.004;
  // Hard cap for demo generation only.
  int demo_step_cap = 200;

  // Failure schedule: P(inject) = fail_prob_at_zero_skill * (1 - skill),
  // mode uniform, onset uniform in [onset_min, onset_max].
  double fail_prob_at_zero_skill = 1.0;
  int onset_min = 4;
  int onset_max = 14;
  double drift_magnitude = 0.02;
  double overshoot_magnitude = 4.0;
};

enum class FailureMode { kDrift, kFreeze, kWrongObject, kOvershoot };
inline constexpr std::array<FailureMode, 4> kAllFailureModes = {
    FailureMode::kDrift, FailureMode::kFreeze, FailureMode::kWrongObject,
    FailureMode::kOvershoot};

std::string_view FailureModeName(FailureMode mode);
// Throws kParse for an unknown name.
FailureMode ParseFailureMode(std::string_view name);

struct FailureInjection {
  FailureMode mode = FailureMode::kDrift;
  int onset = 1;
  double magnitude = 1.0;
  // Drift heading in radians.
  double direction = 0.0;

  bool ActiveAt(int clock) const { return clock >= onset; }
  InjectionRecord ToRecord() const;
};

inline constexpr std::size_t kDefaultEmbeddingDim = 16;
inline constexpr std::uint64_t kDefaultEncoderSeed = 0x5eed0f0e1dULL;

// Stand-in for a learned observation encoder: hand-built features (effector
// and object offsets, held flags, normalized clock) through a fixed random
// projection, plus a constant bias coordinate so no embedding is zero.
class FeatureEncoder {
 public:
  explicit FeatureEncoder(std::uint64_t projection_seed = kDefaultEncoderSeed,
                          std::size_t dim = kDefaultEmbeddingDim,
                          double clock_scale = 40.0);

  const std::string& id() const { return id_; }
  std::size_t dim() const { return dim_; }
  Embedding Encode(const WorldState& state) const;

  static constexpr std::size_t kNumFeatures = 13;

 private:
  std::string id_;
  std::size_t dim_;
  double clock_scale_;
  Matrix projection_;
};

struct ScriptedPolicy {
  double skill = 1.0;
  double noise_scale = 0.004;
  std::uint64_t seed = 0;

  double FailureProbability(const SimConfig& config) const;
};

struct PostTrainConfig {
  double gain = 1.0;
  double normalizer = 300.0;
};

WorldState InitialState(const TaskSpec& task, Rng& rng);

// Physics: grasp/release, effector motion clamped to the unit square, held
// object follows the effector. Advances the clock by one.
WorldState ApplyAction(const WorldState& state, const Action& action,
                       const SimConfig& config);

struct StepResult {
  WorldState state;
  Action action{};
};

// One policy step. Noise at timestep t depends only on (noise_seed, t), so a
// restored state replays identically.
StepResult Step(const WorldState& state, const ScriptedPolicy& policy,
                const std::optional<FailureInjection>& injection,
                std::uint64_t noise_seed, const SimConfig& config);

// Goal object released within position (and, if required, angle)
// tolerance. Closed-ball boundary.
bool EvaluateSuccess(const WorldState& state);

// State recorded at 1-based timestep t. Throws kIndex when not recorded.
WorldState Restore(std::span<const WorldState> refs, std::size_t t);

// Noise-free, injection-free goal pursuit at full speed with no
// proportional slow-down, standing in for a human teleoperator.
Action OracleOperator(const WorldState& state, const SimConfig& config);

// skill' = min(1, skill + gain * (flagged steps in buffer) / normalizer).
ScriptedPolicy PostTrain(const ScriptedPolicy& policy,
                         std::span<const Episode> buffer,
                         const PostTrainConfig& config = {});

std::size_t CountInterventionSteps(std::span<const Episode> buffer);

std::optional<FailureInjection> SampleInjection(const ScriptedPolicy& policy,
                                                Rng& rng,
                                                const SimConfig& config);

FailureInjection MakeInjection(FailureMode mode, int onset, Rng& rng,
                               const SimConfig& config);

// Appends one observation (with a zero placeholder action) to a trajectory.
void RecordObservation(Trajectory& trajectory, const WorldState& state,
                       const FeatureEncoder& encoder);

// Throws kConfig on unknown task, kSolver if a demo fails to reach the goal.
std::vector<Episode> GenerateExpertDemos(std::string_view task_id,
                                         std::size_t count, std::uint64_t seed,
                                         const FeatureEncoder& encoder,
                                         const SimConfig& config = {});

// Autonomous rollout without a detector, capped at l_max observations.
Episode RunScriptedEpisode(const TaskSpec& task, const ScriptedPolicy& policy,
                           const std::optional<FailureInjection>& injection,
                           std::uint64_t episode_seed, std::size_t l_max,
                           const FeatureEncoder& encoder,
                           const SimConfig& config = {});

}  // namespace otfleet

#endif  // OTFLEET_SIM_WORLD_H_
