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

// Multi-robot deployment loop: robot nodes roll out with online failure
// detection, raise intervention requests into a FIFO queue, and operator
// nodes (scripted oracles or console humans) take over after a rewind.
//
// Two schedulers drive the same node logic. The logical-clock scheduler is
// single-threaded and its event log is a pure function of config and seeds.
// The realtime scheduler runs one thread per robot plus a dispatcher thread.

#ifndef OTFLEET_FLEET_H_
#define OTFLEET_FLEET_H_

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "otfleet/demo_bank.h"
#include "otfleet/failure_detector.h"
#include "otfleet/sim_world.h"

namespace otfleet {

enum class RobotPhase {
  kResetting,
  kRolling,
  kAwaitingOperator,
  kRewinding,
  kUnderIntervention,
  kFinalizing,
};

std::string_view RobotPhaseName(RobotPhase phase);

// Legal node transitions, plus UnderIntervention -> AwaitingOperator when an
// operator disconnects mid-intervention and UnderIntervention -> Finalizing
// when the intervention ends the episode.
bool IsLegalTransition(RobotPhase from, RobotPhase to);

enum class OperatorKind { kOracle, kHumanConsole };

struct OperatorNode {
  int id = 0;
  OperatorKind kind = OperatorKind::kOracle;
  std::optional<int> busy_robot;
};

struct InterventionRequest {
  int robot_id = 0;
  std::size_t raise_timestep = 0;
  double lambda = 0.0;
  std::size_t rewind_target = 1;
  std::uint64_t seq = 0;
};

struct Assignment {
  InterventionRequest request;
  int operator_id = 0;
};

// Request queue and operator pool behind one mutex. Safe for concurrent
// producers and consumers.
class Dispatcher {
 public:
  int AddOperator(OperatorKind kind);
  // Removes an operator. Returns the robot it was busy on, if any.
  std::optional<int> RemoveOperator(int operator_id);

  // Assigns the next sequence number. Throws kProtocol if the robot already
  // has an outstanding request.
  std::uint64_t Enqueue(InterventionRequest request);

  // Pops the earliest request for the lowest-id idle oracle operator. Leaves
  // the queue untouched when none is idle.
  std::optional<Assignment> NextAssignment();

  // Console claim: a specific robot's request, or the earliest one. Throws
  // kProtocol for an unknown or busy operator or a missing request.
  Assignment Claim(int operator_id, std::optional<int> robot_id = std::nullopt);

  // Operator goes idle. Throws kProtocol when it was not busy.
  int Release(int operator_id);

  // Assignment held by a robot that it has not yet acted on.
  std::optional<Assignment> TakeAssignmentFor(int robot_id);

  std::vector<InterventionRequest> QueueSnapshot() const;
  std::vector<OperatorNode> OperatorsSnapshot() const;
  std::size_t BusyOperatorsOn(int robot_id) const;
  bool HasOutstanding(int robot_id) const;
  std::optional<int> OperatorFor(int robot_id) const;

 private:
  mutable std::mutex mu_;
  std::deque<InterventionRequest> queue_;
  std::vector<OperatorNode> operators_;
  std::vector<Assignment> unacknowledged_;
  std::uint64_t next_seq_ = 1;
  int next_operator_id_ = 0;
};

enum class EventKind {
  kRaise,
  kEnqueue,
  kAssign,
  kRewind,
  kTakeoverStep,
  kRelease,
  kFinalize,
};

std::string_view EventKindName(EventKind kind);
EventKind ParseEventKind(std::string_view name);

struct FleetEvent {
  std::uint64_t seq = 0;
  std::int64_t clock = 0;
  EventKind kind = EventKind::kRaise;
  int robot_id = 0;
  std::optional<int> operator_id;
  nlohmann::ordered_json payload = nlohmann::ordered_json::object();

  std::string ToJsonLine() const;
  // Throws kParse naming the line number.
  static FleetEvent FromJsonLine(std::string_view line, std::size_t line_no);
};

class EventLog {
 public:
  // Stamps the sequence number and appends.
  void Append(FleetEvent event);
  std::vector<FleetEvent> Snapshot() const;
  std::size_t size() const;
  std::string ToJsonLines() const;
  void Write(const std::filesystem::path& path) const;
  static std::vector<FleetEvent> Read(const std::filesystem::path& path);

  void set_listener(std::function<void(const FleetEvent&)> listener);

 private:
  mutable std::mutex mu_;
  std::vector<FleetEvent> events_;
  std::function<void(const FleetEvent&)> listener_;
};

class EpisodeBuffer {
 public:
  void Append(Episode episode);
  std::vector<Episode> Snapshot() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<Episode> episodes_;
};

struct FleetConfig {
  int num_robots = 3;
  int num_oracle_operators = 2;
  // Robot i runs tasks[i % tasks.size()].
  std::vector<std::string> tasks = {"pour", "hang", "pick_place", "fold"};
  std::size_t episode_budget = 30;
  // Logical ticks before the run aborts as deadlocked. 0 picks a bound from
  // the episode budget and l_max.
  std::size_t max_ticks = 0;
  std::uint64_t seed = 1;
  // Shuffle the order of dispatcher and robot activities every tick.
  bool randomize_interleaving = false;
  // Oracle takes at least this many steps before a threshold-based release.
  std::size_t min_operator_steps = 3;
  RewindConfig rewind;
  FailureIndexOptions index;
  SimConfig sim;

  void Validate() const;
};

// Demo bank and shared calibration for one task.
struct TaskResources {
  std::shared_ptr<const DemoBank> bank;
  std::shared_ptr<DetectorState> detector;
};

struct RobotSummary {
  int id = 0;
  RobotPhase phase = RobotPhase::kResetting;
  std::string task_id;
  std::optional<std::uint64_t> episode_id;
  std::size_t clock = 0;
  std::optional<double> lambda;
  std::optional<double> threshold;
  std::array<double, 2> effector{0.0, 0.0};
  std::array<double, 2> object{0.0, 0.0};
  std::array<double, 2> goal{0.0, 0.0};
  bool alert_open = false;
};

struct FleetResult {
  std::vector<Episode> buffer;
  std::vector<FleetEvent> events;
  std::vector<std::string> detector_log;
  std::size_t ticks = 0;
  std::vector<std::string> invariant_violations;
};

class Fleet {
 public:
  // resources maps task ids to banks and detectors. The policy is shared by
  // every robot for the whole run.
  Fleet(FleetConfig config, std::map<std::string, TaskResources> resources,
        const FeatureEncoder& encoder, ScriptedPolicy policy);
  ~Fleet();
  Fleet(const Fleet&) = delete;
  Fleet& operator=(const Fleet&) = delete;

  // Logical-clock run to completion. Throws kDeadlock naming robots stuck
  // when the tick budget runs out.
  FleetResult RunLogical();

  // One logical tick.
  void Tick();
  bool Done() const;

  // Realtime mode. Each robot thread ticks every period.
  void StartRealtime(std::chrono::milliseconds period);
  void StopRealtime();
  bool running() const { return running_.load(); }

  // Console operator surface. All throw kProtocol on misuse.
  int AddConsoleOperator();
  void RemoveOperator(int operator_id);
  Assignment Claim(int operator_id, std::optional<int> robot_id);
  void SubmitTakeover(int operator_id, int robot_id, const Action& action);
  void ReleaseOperator(int operator_id);
  // Applies one false-alarm update for the robot's open alert.
  void MarkFalseAlarm(int robot_id);

  std::vector<RobotSummary> Summaries() const;
  std::vector<InterventionRequest> Alerts() const;
  std::vector<OperatorNode> Operators() const;
  double Delta(std::string_view task_id) const;
  const FleetConfig& config() const { return config_; }
  EventLog& events() { return log_; }
  const std::vector<std::string>& invariant_violations() const {
    return violations_;
  }
  FleetResult Result() const;

 private:
  struct Robot;

  void RobotTick(Robot& robot);
  void DispatchTick();
  void StartEpisode(Robot& robot);
  void RollingTick(Robot& robot);
  void InterventionTick(Robot& robot);
  void RewindAndHandoff(Robot& robot, const Assignment& assignment,
                        bool hold_position);
  bool IsFalseAlarm(const Robot& robot) const;
  OperatorKind OperatorKindOf(int operator_id) const;
  void Finalize(Robot& robot);
  void SetPhase(Robot& robot, RobotPhase to);
  void Emit(EventKind kind, int robot_id, std::optional<int> operator_id,
            nlohmann::ordered_json payload);
  void TakeStep(Robot& robot, const Action& action, bool operator_step);
  void CheckInvariants();
  std::int64_t Now() const;
  TaskResources& ResourcesFor(const Robot& robot);

  FleetConfig config_;
  std::map<std::string, TaskResources> resources_;
  const FeatureEncoder& encoder_;
  ScriptedPolicy policy_;
  Dispatcher dispatcher_;
  EventLog log_;
  EpisodeBuffer buffer_;
  std::unique_ptr<EvaluationChannel> channel_;
  std::vector<std::unique_ptr<Robot>> robots_;
  mutable std::mutex calibration_mu_;
  mutable std::mutex detector_log_mu_;
  std::vector<std::string> detector_log_;
  std::vector<std::string> violations_;
  mutable std::mutex episode_mu_;
  std::size_t episodes_started_ = 0;
  std::size_t episodes_finished_ = 0;
  std::size_t tick_ = 0;
  Rng interleave_rng_;
  bool realtime_ = false;
  std::atomic<bool> running_{false};
  std::chrono::steady_clock::time_point start_time_;
  std::vector<std::thread> threads_;
};

}  // namespace otfleet

#endif  // OTFLEET_FLEET_H_
