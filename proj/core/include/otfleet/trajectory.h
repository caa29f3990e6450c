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

#ifndef OTFLEET_TRAJECTORY_H_
#define OTFLEET_TRAJECTORY_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "otfleet/ot.h"

namespace otfleet {

struct ObjectPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  bool operator==(const ObjectPose&) const = default;
};

// Target pose of one object. Positions are in unit-workspace coordinates.
struct GoalSpec {
  int object = 0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  bool check_theta = false;
  double position_tolerance = 0.05;
  double angle_tolerance = 0.2;

  bool operator==(const GoalSpec&) const = default;
};

inline constexpr std::size_t kNumObjects = 2;

struct WorldState {
  std::array<double, 2> effector{0.0, 0.0};
  std::array<ObjectPose, kNumObjects> objects{};
  // Index of the object in the gripper, -1 when empty.
  int held = -1;
  GoalSpec goal;
  // 1-based timestep of this observation.
  int clock = 1;
  // Set when the last step hit the workspace boundary.
  bool clamped = false;

  bool operator==(const WorldState&) const = default;
};

// Time-ordered record of one episode. Entry t holds the observation at
// timestep t and the action taken from it; the terminal entry carries a zero
// action.
struct Trajectory {
  std::vector<Embedding> embeddings;
  std::vector<std::vector<double>> actions;
  // Either empty or one snapshot per step.
  std::vector<WorldState> states;
  std::vector<bool> intervention_flags;

  std::size_t length() const { return embeddings.size(); }
  std::size_t dim() const {
    return embeddings.empty() ? 0 : embeddings.front().size();
  }
  // Drops every entry after timestep t (1-based), keeping t entries.
  void TruncateTo(std::size_t t);
  // Throws kDomain on an empty trajectory and kSchema on ragged fields.
  void Validate() const;

  bool operator==(const Trajectory&) const = default;
};

struct InjectionRecord {
  std::string mode;
  int onset = 1;
  double magnitude = 0.0;

  bool operator==(const InjectionRecord&) const = default;
};

struct Episode {
  std::uint64_t id = 0;
  std::string task_id;
  std::string encoder_id;
  Trajectory trajectory;
  std::optional<bool> success;
  std::optional<InjectionRecord> injection;

  bool operator==(const Episode&) const = default;
};

}  // namespace otfleet

#endif  // OTFLEET_TRAJECTORY_H_
