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

#include "otfleet/fleet.h"

#include <algorithm>
#include <fstream>
#include <cmath>

#include "otfleet/error.h"

namespace otfleet {

using nlohmann::ordered_json;

std::string_view RobotPhaseName(RobotPhase phase) {
  switch (phase) {
    case RobotPhase::kResetting:
      return "Resetting";
    case RobotPhase::kRolling:
      return "Rolling";
    case RobotPhase::kAwaitingOperator:
      return "AwaitingOperator";
    case RobotPhase::kRewinding:
      return "Rewinding";
    case RobotPhase::kUnderIntervention:
      return "UnderIntervention";
    case RobotPhase::kFinalizing:
      return "Finalizing";
  }
  return "Resetting";
}

bool IsLegalTransition(RobotPhase from, RobotPhase to) {
  using P = RobotPhase;
  switch (from) {
    case P::kResetting:
      return to == P::kRolling;
    case P::kRolling:
      return to == P::kAwaitingOperator || to == P::kFinalizing;
    case P::kAwaitingOperator:
      return to == P::kRewinding;
    case P::kRewinding:
      return to == P::kUnderIntervention;
    case P::kUnderIntervention:
      return to == P::kRolling || to == P::kFinalizing ||
             to == P::kAwaitingOperator;
    case P::kFinalizing:
      return to == P::kResetting;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Dispatcher

int Dispatcher::AddOperator(OperatorKind kind) {
  std::lock_guard<std::mutex> lock(mu_);
  OperatorNode node;
  node.id = next_operator_id_++;
  node.kind = kind;
  operators_.push_back(node);
  return node.id;
}

std::optional<int> Dispatcher::RemoveOperator(int operator_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = std::find_if(operators_.begin(), operators_.end(),
                         [&](const OperatorNode& o) { return o.id == operator_id; });
  if (it == operators_.end()) {
    throw Error(ErrorCode::kProtocol,
                "unknown operator " + std::to_string(operator_id));
  }
  std::optional<int> robot = it->busy_robot;
  operators_.erase(it);
  auto un = std::find_if(
      unacknowledged_.begin(), unacknowledged_.end(),
      [&](const Assignment& a) { return a.operator_id == operator_id; });
  if (un != unacknowledged_.end()) {
    // The robot never took over; its request goes back to the head.
    queue_.push_front(un->request);
    unacknowledged_.erase(un);
    return std::nullopt;
  }
  return robot;
}

std::uint64_t Dispatcher::Enqueue(InterventionRequest request) {
  std::lock_guard<std::mutex> lock(mu_);
  const int robot = request.robot_id;
  const bool queued = std::any_of(queue_.begin(), queue_.end(),
                                  [&](const auto& r) { return r.robot_id == robot; });
  const bool assigned =
      std::any_of(unacknowledged_.begin(), unacknowledged_.end(),
                  [&](const auto& a) { return a.request.robot_id == robot; });
  if (queued || assigned) {
    throw Error(ErrorCode::kProtocol, "robot " + std::to_string(robot) +
                                          " already has an outstanding request");
  }
  request.seq = next_seq_++;
  queue_.push_back(request);
  return request.seq;
}

std::optional<Assignment> Dispatcher::NextAssignment() {
  std::lock_guard<std::mutex> lock(mu_);
  if (queue_.empty()) return std::nullopt;
  OperatorNode* idle = nullptr;
  for (OperatorNode& o : operators_) {
    if (o.kind == OperatorKind::kOracle && !o.busy_robot.has_value()) {
      idle = &o;
      break;
    }
  }
  if (idle == nullptr) return std::nullopt;
  Assignment a{queue_.front(), idle->id};
  queue_.pop_front();
  idle->busy_robot = a.request.robot_id;
  unacknowledged_.push_back(a);
  return a;
}

Assignment Dispatcher::Claim(int operator_id, std::optional<int> robot_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto op = std::find_if(operators_.begin(), operators_.end(),
                         [&](const OperatorNode& o) { return o.id == operator_id; });
  if (op == operators_.end()) {
    throw Error(ErrorCode::kProtocol,
                "unknown operator " + std::to_string(operator_id));
  }
  if (op->busy_robot.has_value()) {
    throw Error(ErrorCode::kProtocol,
                "operator " + std::to_string(operator_id) + " is busy on robot " +
                    std::to_string(*op->busy_robot));
  }
  auto req = queue_.begin();
  if (robot_id.has_value()) {
    req = std::find_if(queue_.begin(), queue_.end(),
                       [&](const auto& r) { return r.robot_id == *robot_id; });
  }
  if (req == queue_.end()) {
    throw Error(ErrorCode::kProtocol,
                robot_id.has_value()
                    ? "no pending alert for robot " + std::to_string(*robot_id)
                    : std::string("no pending alerts"));
  }
  Assignment a{*req, operator_id};
  queue_.erase(req);
  op->busy_robot = a.request.robot_id;
  unacknowledged_.push_back(a);
  return a;
}

int Dispatcher::Release(int operator_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto op = std::find_if(operators_.begin(), operators_.end(),
                         [&](const OperatorNode& o) { return o.id == operator_id; });
  if (op == operators_.end() || !op->busy_robot.has_value()) {
    throw Error(ErrorCode::kProtocol,
                "operator " + std::to_string(operator_id) + " is not busy");
  }
  const int robot = *op->busy_robot;
  op->busy_robot.reset();
  auto un = std::find_if(
      unacknowledged_.begin(), unacknowledged_.end(),
      [&](const Assignment& a) { return a.operator_id == operator_id; });
  if (un != unacknowledged_.end()) {
    queue_.push_front(un->request);
    unacknowledged_.erase(un);
  }
  return robot;
}

std::optional<Assignment> Dispatcher::TakeAssignmentFor(int robot_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto un = std::find_if(
      unacknowledged_.begin(), unacknowledged_.end(),
      [&](const Assignment& a) { return a.request.robot_id == robot_id; });
  if (un == unacknowledged_.end()) return std::nullopt;
  Assignment a = *un;
  unacknowledged_.erase(un);
  return a;
}

std::vector<InterventionRequest> Dispatcher::QueueSnapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return {queue_.begin(), queue_.end()};
}

std::vector<OperatorNode> Dispatcher::OperatorsSnapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return operators_;
}

std::size_t Dispatcher::BusyOperatorsOn(int robot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(operators_.begin(), operators_.end(),
                    [&](const OperatorNode& o) { return o.busy_robot == robot_id; }));
}

bool Dispatcher::HasOutstanding(int robot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return std::any_of(queue_.begin(), queue_.end(),
                     [&](const auto& r) { return r.robot_id == robot_id; }) ||
         std::any_of(unacknowledged_.begin(), unacknowledged_.end(),
                     [&](const auto& a) { return a.request.robot_id == robot_id; });
}

std::optional<int> Dispatcher::OperatorFor(int robot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  for (const OperatorNode& o : operators_) {
    if (o.busy_robot == robot_id) return o.id;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Event log

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 7> kEventNames = {{
    {EventKind::kRaise, "RAISE"},
    {EventKind::kEnqueue, "ENQUEUE"},
    {EventKind::kAssign, "ASSIGN"},
    {EventKind::kRewind, "REWIND"},
    {EventKind::kTakeoverStep, "TAKEOVER_STEP"},
    {EventKind::kRelease, "RELEASE"},
    {EventKind::kFinalize, "FINALIZE"},
}};

}  // namespace

std::string_view EventKindName(EventKind kind) {
  for (const auto& [k, name] : kEventNames) {
    if (k == kind) return name;
  }
  return "RAISE";
}

EventKind ParseEventKind(std::string_view name) {
  for (const auto& [k, n] : kEventNames) {
    if (n == name) return k;
  }
  throw Error(ErrorCode::kParse, "unknown event kind '" + std::string(name) + "'");
}

std::string FleetEvent::ToJsonLine() const {
  ordered_json j;
  j["seq"] = seq;
  j["clock"] = clock;
  j["kind"] = EventKindName(kind);
  j["robot_id"] = robot_id;
  if (operator_id.has_value()) j["operator_id"] = *operator_id;
  j["payload"] = payload;
  return j.dump();
}

FleetEvent FleetEvent::FromJsonLine(std::string_view line, std::size_t line_no) {
  try {
    const ordered_json j = ordered_json::parse(line);
    FleetEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.clock = j.at("clock").get<std::int64_t>();
    e.kind = ParseEventKind(j.at("kind").get<std::string>());
    e.robot_id = j.at("robot_id").get<int>();
    if (j.contains("operator_id")) e.operator_id = j.at("operator_id").get<int>();
    e.payload = j.value("payload", ordered_json::object());
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParse, "event log line " + std::to_string(line_no) +
                                       ": " + ex.what());
  }
}

void EventLog::Append(FleetEvent event) {
  std::lock_guard<std::mutex> lock(mu_);
  event.seq = events_.size() + 1;
  events_.push_back(std::move(event));
  if (listener_) listener_(events_.back());
}

std::vector<FleetEvent> EventLog::Snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_;
}

std::size_t EventLog::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return events_.size();
}

std::string EventLog::ToJsonLines() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::string out;
  for (const FleetEvent& e : events_) {
    out += e.ToJsonLine();
    out += '\n';
  }
  return out;
}

void EventLog::Write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  out << ToJsonLines();
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<FleetEvent> EventLog::Read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<FleetEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    events.push_back(FleetEvent::FromJsonLine(line, line_no));
  }
  return events;
}

void EventLog::set_listener(std::function<void(const FleetEvent&)> listener) {
  std::lock_guard<std::mutex> lock(mu_);
  listener_ = std::move(listener);
}

void EpisodeBuffer::Append(Episode episode) {
  std::lock_guard<std::mutex> lock(mu_);
  episodes_.push_back(std::move(episode));
}

std::vector<Episode> EpisodeBuffer::Snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return episodes_;
}

std::size_t EpisodeBuffer::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return episodes_.size();
}

void FleetConfig::Validate() const {
  if (num_robots < 1) throw Error(ErrorCode::kConfig, "num_robots must be >= 1");
  if (num_oracle_operators < 0) {
    throw Error(ErrorCode::kConfig, "num_oracle_operators must be >= 0");
  }
  if (tasks.empty()) throw Error(ErrorCode::kConfig, "fleet needs at least one task");
  rewind.Validate();
  index.solver.Validate();
}

// ---------------------------------------------------------------------------
// Fleet

struct Fleet::Robot {
  int id = 0;
  const TaskSpec* task = nullptr;
  mutable std::mutex mu;
  RobotPhase phase = RobotPhase::kResetting;

  Episode episode;
  WorldState state;
  std::uint64_t episode_seed = 0;
  std::optional<FailureInjection> injection;
  std::optional<FailureInjection> original_injection;
  PrefixIndexCache cache;
  std::uint64_t epoch = 0;
  bool ended = false;

  std::vector<std::size_t> warnings;
  std::size_t raise_t0 = 0;
  bool alert_open = false;
  std::size_t false_alarms = 0;
  std::optional<Assignment> assignment;
  OperatorKind operator_kind = OperatorKind::kOracle;
  std::size_t operator_steps = 0;
  std::size_t steps_since_raise = 0;
  bool autonomous_failure = false;
  bool intervened = false;
  std::deque<Action> inbox;
  bool release_requested = false;
  std::optional<double> last_lambda;
  bool alert_marked = false;
};

Fleet::Fleet(FleetConfig config, std::map<std::string, TaskResources> resources,
             const FeatureEncoder& encoder, ScriptedPolicy policy)
    : config_(std::move(config)),
      resources_(std::move(resources)),
      encoder_(encoder),
      policy_(policy),
      interleave_rng_(DeriveSeed(config_.seed, "interleave")) {
  config_.Validate();
  for (const std::string& task : config_.tasks) {
    FindTask(task);
    auto it = resources_.find(task);
    if (it == resources_.end() || !it->second.bank || !it->second.detector) {
      throw Error(ErrorCode::kConfig, "no demo bank or detector for task " + task);
    }
    CheckEncoder(*it->second.bank, encoder_.id());
  }
  for (int r = 0; r < config_.num_robots; ++r) {
    auto robot = std::make_unique<Robot>();
    robot->id = r;
    robot->task = &FindTask(config_.tasks[r % config_.tasks.size()]);
    robots_.push_back(std::move(robot));
  }
  for (int o = 0; o < config_.num_oracle_operators; ++o) {
    dispatcher_.AddOperator(OperatorKind::kOracle);
  }
}

Fleet::~Fleet() { StopRealtime(); }

TaskResources& Fleet::ResourcesFor(const Robot& robot) {
  return resources_.at(robot.task->id);
}

std::int64_t Fleet::Now() const {
  if (!realtime_) return static_cast<std::int64_t>(tick_);
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now() - start_time_)
      .count();
}

void Fleet::Emit(EventKind kind, int robot_id, std::optional<int> operator_id,
                 ordered_json payload) {
  FleetEvent e;
  e.clock = Now();
  e.kind = kind;
  e.robot_id = robot_id;
  e.operator_id = operator_id;
  e.payload = std::move(payload);
  log_.Append(std::move(e));
}

void Fleet::SetPhase(Robot& robot, RobotPhase to) {
  if (!IsLegalTransition(robot.phase, to)) {
    throw Error(ErrorCode::kProtocol,
                "illegal transition for robot " + std::to_string(robot.id) + ": " +
                    std::string(RobotPhaseName(robot.phase)) + " -> " +
                    std::string(RobotPhaseName(to)));
  }
  robot.phase = to;
}

void Fleet::Tick() {
  if (!channel_) {
    std::vector<const DemoBank*> banks;
    for (const auto& r : robots_) banks.push_back(ResourcesFor(*r).bank.get());
    channel_ = std::make_unique<EvaluationChannel>(banks, config_.index, false);
  }
  std::vector<int> order;
  order.push_back(-1);
  for (int r = 0; r < config_.num_robots; ++r) order.push_back(r);
  if (config_.randomize_interleaving) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(interleave_rng_.UniformInt(0, i));
      std::swap(order[i], order[j]);
    }
  }
  for (int activity : order) {
    if (activity < 0) {
      DispatchTick();
    } else {
      RobotTick(*robots_[activity]);
    }
    CheckInvariants();
  }
  ++tick_;
}

bool Fleet::Done() const {
  {
    std::lock_guard<std::mutex> lock(episode_mu_);
    if (episodes_finished_ < config_.episode_budget) return false;
  }
  return std::all_of(robots_.begin(), robots_.end(), [](const auto& r) {
    std::lock_guard<std::mutex> lock(r->mu);
    return r->phase == RobotPhase::kResetting;
  });
}

FleetResult Fleet::RunLogical() {
  std::size_t l_max = 0;
  for (const auto& [task, res] : resources_) l_max = std::max(l_max, res.bank->l_max());
  const std::size_t max_ticks =
      config_.max_ticks > 0 ? config_.max_ticks
                            : (config_.episode_budget + 1) * (4 * l_max + 16) + 64;
  while (!Done()) {
    if (tick_ >= max_ticks) {
      std::string stuck;
      for (const auto& r : robots_) {
        if (r->phase == RobotPhase::kResetting) continue;
        if (!stuck.empty()) stuck += ", ";
        stuck += "robot " + std::to_string(r->id) + " (" +
                 std::string(RobotPhaseName(r->phase)) + ")";
      }
      throw Error(ErrorCode::kDeadlock,
                  "tick budget " + std::to_string(max_ticks) +
                      " exhausted with " + std::to_string(episodes_finished_) + "/" +
                      std::to_string(config_.episode_budget) +
                      " episodes finished; stuck: " + stuck);
    }
    Tick();
  }
  return Result();
}

FleetResult Fleet::Result() const {
  FleetResult result;
  result.buffer = buffer_.Snapshot();
  result.events = log_.Snapshot();
  {
    std::lock_guard<std::mutex> lock(detector_log_mu_);
    result.detector_log = detector_log_;
  }
  result.ticks = tick_;
  result.invariant_violations = violations_;
  return result;
}

void Fleet::DispatchTick() {
  while (auto a = dispatcher_.NextAssignment()) {
    Emit(EventKind::kAssign, a->request.robot_id, a->operator_id,
         {{"request_seq", a->request.seq}, {"kind", "oracle"}});
  }
}

void Fleet::RobotTick(Robot& robot) {
  switch (robot.phase) {
    case RobotPhase::kResetting:
      StartEpisode(robot);
      break;
    case RobotPhase::kRolling:
      RollingTick(robot);
      break;
    case RobotPhase::kAwaitingOperator:
      if (auto a = dispatcher_.TakeAssignmentFor(robot.id)) {
        SetPhase(robot, RobotPhase::kRewinding);
        // An oracle that sees nothing wrong keeps the current state.
        const bool hold = OperatorKindOf(a->operator_id) == OperatorKind::kOracle &&
                          IsFalseAlarm(robot);
        RewindAndHandoff(robot, *a, hold);
      }
      break;
    case RobotPhase::kRewinding:
    case RobotPhase::kUnderIntervention:
      InterventionTick(robot);
      break;
    case RobotPhase::kFinalizing:
      Finalize(robot);
      break;
  }
}

void Fleet::StartEpisode(Robot& robot) {
  std::uint64_t episode_id = 0;
  {
    std::lock_guard<std::mutex> lock(episode_mu_);
    if (episodes_started_ >= config_.episode_budget) return;
    episode_id = episodes_started_++;
  }
  robot.episode_seed = DeriveSeed(config_.seed, "episode", episode_id);
  Rng injection_rng(DeriveSeed(robot.episode_seed, "injection"));
  robot.injection = SampleInjection(policy_, injection_rng, config_.sim);
  robot.original_injection = robot.injection;
  Rng init(DeriveSeed(robot.episode_seed, "initial-state"));
  robot.state = InitialState(*robot.task, init);
  robot.episode = Episode{};
  robot.episode.id = episode_id;
  robot.episode.task_id = robot.task->id;
  robot.episode.encoder_id = encoder_.id();
  RecordObservation(robot.episode.trajectory, robot.state, encoder_);
  robot.cache.Clear();
  robot.ended = false;
  robot.warnings.clear();
  robot.alert_open = false;
  robot.false_alarms = 0;
  robot.assignment.reset();
  robot.operator_steps = 0;
  robot.steps_since_raise = 0;
  robot.autonomous_failure = false;
  robot.intervened = false;
  robot.inbox.clear();
  robot.release_requested = false;
  robot.last_lambda.reset();
  channel_->Reset(robot.id, ++robot.epoch);
  SetPhase(robot, RobotPhase::kRolling);
}

void Fleet::TakeStep(Robot& robot, const Action& action, bool operator_step) {
  Trajectory& traj = robot.episode.trajectory;
  traj.actions.back().assign(action.begin(), action.end());
  traj.intervention_flags.back() = operator_step;
  if (operator_step) {
    robot.state = ApplyAction(robot.state, action, config_.sim);
  } else {
    if (robot.injection.has_value() && robot.injection->ActiveAt(robot.state.clock)) {
      robot.autonomous_failure = true;
    }
    robot.state =
        Step(robot.state, policy_, robot.injection, robot.episode_seed, config_.sim)
            .state;
  }
  RecordObservation(traj, robot.state, encoder_);
  ++robot.steps_since_raise;
  const std::size_t l_max = ResourcesFor(robot).bank->l_max();
  robot.ended = EvaluateSuccess(robot.state) || traj.length() >= l_max;
  if (!operator_step && !robot.ended &&
      traj.length() % ResourcesFor(robot).detector->config().stride == 0) {
    EvalRequest req;
    req.robot_id = robot.id;
    req.epoch = robot.epoch;
    req.t0 = traj.length();
    req.prefix = traj.embeddings;
    channel_->Submit(std::move(req));
  }
}

void Fleet::RollingTick(Robot& robot) {
  TaskResources& res = ResourcesFor(robot);
  const std::size_t l_max = res.bank->l_max();
  for (const EvalReply& reply : channel_->Poll(robot.id)) {
    if (!robot.cache.empty() &&
        reply.index.prefix_len <= robot.cache.back().prefix_len) {
      continue;
    }
    robot.cache.Append(reply.index);
    robot.last_lambda = reply.index.value;
    Decision decision;
    std::optional<double> threshold;
    double delta;
    {
      std::lock_guard<std::mutex> lock(calibration_mu_);
      decision = res.detector->Check(reply.index, l_max);
      threshold = res.detector->ThresholdAt(reply.index.prefix_len);
      delta = res.detector->delta();
    }
    {
      std::lock_guard<std::mutex> lock(detector_log_mu_);
      detector_log_.push_back(DetectorLogLine({robot.id, reply.index.prefix_len,
                                               reply.index.value,
                                               reply.index.nearest_demo, threshold,
                                               delta, decision}));
    }
    if (decision != Decision::kRaise) continue;

    const std::size_t t0 = reply.index.prefix_len;
    InterventionRequest req;
    req.robot_id = robot.id;
    req.raise_timestep = t0;
    req.lambda = reply.index.value;
    req.rewind_target = RewindTarget(robot.cache.entries(), t0, config_.rewind);
    Emit(EventKind::kRaise, robot.id, std::nullopt,
         {{"t0", t0},
          {"lambda", req.lambda},
          {"threshold", *threshold},
          {"nearest_demo", reply.index.nearest_demo},
          {"rewind_target", req.rewind_target},
          {"episode_id", robot.episode.id}});
    const std::uint64_t seq = dispatcher_.Enqueue(req);
    Emit(EventKind::kEnqueue, robot.id, std::nullopt,
         {{"request_seq", seq},
          {"t0", t0},
          {"t", robot.episode.trajectory.length()},
          {"rewind_target", req.rewind_target}});
    robot.warnings.push_back(t0);
    robot.raise_t0 = t0;
    robot.alert_open = true;
    robot.alert_marked = false;
    robot.steps_since_raise = 0;
    SetPhase(robot, RobotPhase::kAwaitingOperator);
    return;
  }
  if (robot.ended) {
    SetPhase(robot, RobotPhase::kFinalizing);
    Finalize(robot);
    return;
  }
  TakeStep(robot, Action{}, false);
}

// Ground truth: no fault active at the raise. A fault cleared by an earlier
// takeover no longer counts.
bool Fleet::IsFalseAlarm(const Robot& robot) const {
  return !(robot.injection.has_value() &&
           robot.injection->onset <= static_cast<int>(robot.raise_t0));
}

OperatorKind Fleet::OperatorKindOf(int operator_id) const {
  for (const OperatorNode& o : dispatcher_.OperatorsSnapshot()) {
    if (o.id == operator_id) return o.kind;
  }
  return OperatorKind::kOracle;
}

void Fleet::RewindAndHandoff(Robot& robot, const Assignment& assignment,
                             bool hold_position) {
  Trajectory& traj = robot.episode.trajectory;
  const std::size_t from = traj.length();
  std::size_t target = hold_position ? from : assignment.request.rewind_target;
  bool fallback = false;
  if (target < 1 || target > traj.states.size()) {
    target = 1;
    fallback = true;
  }
  robot.state = Restore(traj.states, target);
  traj.TruncateTo(target);
  robot.cache.TruncateTo(target);
  channel_->Reset(robot.id, ++robot.epoch);
  robot.ended = false;
  robot.assignment = assignment;
  robot.operator_steps = 0;
  robot.release_requested = false;
  robot.operator_kind = OperatorKindOf(assignment.operator_id);
  ordered_json payload = {{"from", from}, {"to", target}, {"fallback", fallback}};
  if (hold_position) payload["hold"] = true;
  if (fallback) {
    payload["diagnostic"] = "rewind target " +
                            std::to_string(assignment.request.rewind_target) +
                            " not recorded; full reset";
  }
  Emit(EventKind::kRewind, robot.id, assignment.operator_id, std::move(payload));
  SetPhase(robot, RobotPhase::kUnderIntervention);
}

void Fleet::InterventionTick(Robot& robot) {
  if (!robot.assignment.has_value()) return;
  const int op = robot.assignment->operator_id;
  const bool oracle = robot.operator_kind == OperatorKind::kOracle;
  TaskResources& res = ResourcesFor(robot);
  Trajectory& traj = robot.episode.trajectory;
  auto finish = [&] {
    robot.assignment.reset();
    robot.alert_open = false;
    robot.inbox.clear();
    if (robot.ended) {
      SetPhase(robot, RobotPhase::kFinalizing);
      Finalize(robot);
    } else {
      SetPhase(robot, RobotPhase::kRolling);
    }
  };
  auto release = [&](std::string_view reason) {
    dispatcher_.Release(op);
    Emit(EventKind::kRelease, robot.id, op,
         {{"reason", reason}, {"t", traj.length()}});
    finish();
  };

  Action action{};
  if (!oracle) {
    // A requested release takes effect once queued steps are consumed. Past
    // the episode end queued steps are dropped and the console must release.
    if (robot.ended || robot.inbox.empty()) {
      if (robot.release_requested) {
        robot.release_requested = false;
        release("manual");
      }
      return;
    }
    action = robot.inbox.front();
    robot.inbox.pop_front();
  } else {
    if (robot.operator_steps == 0 && robot.alert_open && IsFalseAlarm(robot)) {
      if (!robot.alert_marked) {
        std::lock_guard<std::mutex> lock(calibration_mu_);
        res.detector->UpdateDelta(DetectorEvent::kFalseAlarm);
        robot.alert_marked = true;
        ++robot.false_alarms;
      }
      release("false_alarm");
      return;
    }
    if (robot.ended) {
      release(EvaluateSuccess(robot.state) ? "goal" : "cap");
      return;
    }
    action = OracleOperator(robot.state, config_.sim);
  }

  // The operator clears whatever fault was injected.
  robot.injection.reset();
  robot.intervened = true;
  const std::size_t t = traj.length();
  TakeStep(robot, action, true);
  ++robot.operator_steps;
  Emit(EventKind::kTakeoverStep, robot.id, op,
       {{"t", t}, {"action", std::vector<double>(action.begin(), action.end())}});
  if (!oracle) return;
  if (robot.ended) {
    release(EvaluateSuccess(robot.state) ? "goal" : "cap");
    return;
  }
  if (robot.operator_steps < config_.min_operator_steps) return;
  const FailureIndex idx =
      ComputeFailureIndex(traj.embeddings, *res.bank, config_.index);
  std::optional<double> threshold;
  {
    std::lock_guard<std::mutex> lock(calibration_mu_);
    threshold = res.detector->ThresholdAt(idx.prefix_len);
  }
  robot.last_lambda = idx.value;
  if (!threshold.has_value() || idx.value <= *threshold) {
    if (robot.cache.empty() || robot.cache.back().prefix_len < idx.prefix_len) {
      robot.cache.Append(idx);
    }
    release("recovered");
  }
}

void Fleet::Finalize(Robot& robot) {
  TaskResources& res = ResourcesFor(robot);
  Trajectory& traj = robot.episode.trajectory;
  const bool success = EvaluateSuccess(robot.state);
  robot.episode.success = success;
  if (robot.original_injection.has_value()) {
    robot.episode.injection = robot.original_injection->ToRecord();
  }
  // An injected fault that forced an intervention counts as a policy
  // failure even when the operator rescued the episode.
  const bool failure = !success || (robot.autonomous_failure && robot.intervened);
  const std::size_t length = traj.length();
  std::size_t intervened_steps = 0;
  for (bool f : traj.intervention_flags) intervened_steps += f ? 1 : 0;

  if (success && !robot.intervened) {
    const FailureIndex final_index =
        ComputeFailureIndex(traj.embeddings, *res.bank, config_.index);
    std::lock_guard<std::mutex> lock(calibration_mu_);
    res.detector->RecordSuccess(final_index, robot.cache.entries());
  }
  if (failure && robot.warnings.empty()) {
    std::lock_guard<std::mutex> lock(calibration_mu_);
    res.detector->UpdateDelta(DetectorEvent::kMissedFailure);
  }

  std::vector<std::size_t> warnings = robot.warnings;
  std::sort(warnings.begin(), warnings.end());
  warnings.erase(std::unique(warnings.begin(), warnings.end()), warnings.end());

  ordered_json onset = nullptr;
  if (failure) {
    std::size_t t_f = length;
    if (robot.original_injection.has_value() && robot.autonomous_failure) {
      t_f = std::min<std::size_t>(
          static_cast<std::size_t>(robot.original_injection->onset), length);
    }
    onset = t_f;
  }
  Emit(EventKind::kFinalize, robot.id, std::nullopt,
       {{"episode_id", robot.episode.id},
        {"task_id", robot.task->id},
        {"success", success},
        {"failure", failure},
        {"failure_onset", onset},
        {"length", length},
        {"intervened_steps", intervened_steps},
        {"warnings", warnings},
        {"false_alarms", robot.false_alarms}});
  buffer_.Append(robot.episode);
  {
    std::lock_guard<std::mutex> lock(episode_mu_);
    ++episodes_finished_;
  }
  robot.alert_open = false;
  SetPhase(robot, RobotPhase::kResetting);
}

void Fleet::CheckInvariants() {
  if (violations_.size() >= 100) return;
  for (const auto& r : robots_) {
    const std::size_t busy = dispatcher_.BusyOperatorsOn(r->id);
    const std::string who = "tick " + std::to_string(tick_) + " robot " +
                            std::to_string(r->id) + ": ";
    if (busy > 1) {
      violations_.push_back(who + std::to_string(busy) + " operators busy");
    }
    if (r->phase == RobotPhase::kAwaitingOperator && r->steps_since_raise != 0) {
      violations_.push_back(who + "stepped while awaiting an operator");
    }
    if (busy > 0 && (r->phase == RobotPhase::kRolling ||
                     r->phase == RobotPhase::kResetting ||
                     r->phase == RobotPhase::kFinalizing)) {
      violations_.push_back(who + "operator busy on a robot in " +
                            std::string(RobotPhaseName(r->phase)));
    }
  }
}

void Fleet::StartRealtime(std::chrono::milliseconds period) {
  if (running_.load()) return;
  realtime_ = true;
  start_time_ = std::chrono::steady_clock::now();
  std::vector<const DemoBank*> banks;
  for (const auto& r : robots_) banks.push_back(ResourcesFor(*r).bank.get());
  channel_ = std::make_unique<EvaluationChannel>(banks, config_.index, true);
  running_ = true;
  for (auto& robot : robots_) {
    Robot* r = robot.get();
    threads_.emplace_back([this, r, period] {
      while (running_.load()) {
        {
          std::lock_guard<std::mutex> lock(r->mu);
          RobotTick(*r);
        }
        std::this_thread::sleep_for(period);
      }
    });
  }
  threads_.emplace_back([this, period] {
    const auto pause = std::max(std::chrono::milliseconds(1), period / 4);
    while (running_.load()) {
      DispatchTick();
      std::this_thread::sleep_for(pause);
    }
  });
}

void Fleet::StopRealtime() {
  running_ = false;
  for (std::thread& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

int Fleet::AddConsoleOperator() {
  return dispatcher_.AddOperator(OperatorKind::kHumanConsole);
}

void Fleet::RemoveOperator(int operator_id) {
  const std::optional<int> robot_id = dispatcher_.RemoveOperator(operator_id);
  if (!robot_id.has_value()) return;
  Robot& robot = *robots_.at(*robot_id);
  std::lock_guard<std::mutex> lock(robot.mu);
  if (robot.phase != RobotPhase::kUnderIntervention) return;
  InterventionRequest req;
  req.robot_id = robot.id;
  req.raise_timestep = robot.episode.trajectory.length();
  req.lambda = robot.last_lambda.value_or(0.0);
  req.rewind_target = robot.episode.trajectory.length();
  const std::uint64_t seq = dispatcher_.Enqueue(req);
  Emit(EventKind::kEnqueue, robot.id, std::nullopt,
       {{"request_seq", seq},
        {"t0", req.raise_timestep},
        {"t", robot.episode.trajectory.length()},
        {"rewind_target", req.rewind_target},
        {"reason", "operator_disconnected"}});
  robot.assignment.reset();
  robot.inbox.clear();
  robot.release_requested = false;
  robot.steps_since_raise = 0;
  SetPhase(robot, RobotPhase::kAwaitingOperator);
}

Assignment Fleet::Claim(int operator_id, std::optional<int> robot_id) {
  Assignment a = dispatcher_.Claim(operator_id, robot_id);
  Emit(EventKind::kAssign, a.request.robot_id, a.operator_id,
       {{"request_seq", a.request.seq}, {"kind", "console"}});
  return a;
}

void Fleet::SubmitTakeover(int operator_id, int robot_id, const Action& action) {
  if (robot_id < 0 || robot_id >= config_.num_robots) {
    throw Error(ErrorCode::kProtocol, "unknown robot " + std::to_string(robot_id));
  }
  if (dispatcher_.OperatorFor(robot_id) != operator_id) {
    throw Error(ErrorCode::kProtocol, "operator " + std::to_string(operator_id) +
                                          " is not assigned to robot " +
                                          std::to_string(robot_id));
  }
  for (double a : action) {
    if (!std::isfinite(a)) {
      throw Error(ErrorCode::kProtocol, "non-finite takeover action");
    }
  }
  Robot& robot = *robots_[robot_id];
  std::lock_guard<std::mutex> lock(robot.mu);
  robot.inbox.push_back(action);
}

void Fleet::ReleaseOperator(int operator_id) {
  std::optional<int> robot_id;
  for (const OperatorNode& o : dispatcher_.OperatorsSnapshot()) {
    if (o.id == operator_id) robot_id = o.busy_robot;
  }
  if (!robot_id.has_value()) {
    throw Error(ErrorCode::kProtocol,
                "operator " + std::to_string(operator_id) + " is not busy");
  }
  Robot& robot = *robots_.at(*robot_id);
  std::lock_guard<std::mutex> lock(robot.mu);
  if (robot.assignment.has_value() && robot.assignment->operator_id == operator_id) {
    robot.release_requested = true;
    return;
  }
  // Not yet picked up by the robot: the request goes back to the queue.
  dispatcher_.Release(operator_id);
  Emit(EventKind::kRelease, robot.id, operator_id,
       {{"reason", "manual"}, {"t", robot.episode.trajectory.length()}});
}

void Fleet::MarkFalseAlarm(int robot_id) {
  if (robot_id < 0 || robot_id >= config_.num_robots) {
    throw Error(ErrorCode::kProtocol, "unknown robot " + std::to_string(robot_id));
  }
  Robot& robot = *robots_[robot_id];
  std::lock_guard<std::mutex> lock(robot.mu);
  if (!robot.alert_open) {
    throw Error(ErrorCode::kProtocol,
                "no active alert for robot " + std::to_string(robot_id));
  }
  if (robot.alert_marked) return;
  std::lock_guard<std::mutex> calibration(calibration_mu_);
  ResourcesFor(robot).detector->UpdateDelta(DetectorEvent::kFalseAlarm);
  robot.alert_marked = true;
  ++robot.false_alarms;
}

std::vector<RobotSummary> Fleet::Summaries() const {
  std::vector<RobotSummary> out;
  for (const auto& r : robots_) {
    std::lock_guard<std::mutex> lock(r->mu);
    RobotSummary s;
    s.id = r->id;
    s.phase = r->phase;
    s.task_id = r->task->id;
    if (!r->episode.trajectory.embeddings.empty()) s.episode_id = r->episode.id;
    s.clock = static_cast<std::size_t>(r->state.clock);
    s.lambda = r->last_lambda;
    {
      std::lock_guard<std::mutex> calibration(calibration_mu_);
      s.threshold = resources_.at(r->task->id)
                        .detector->ThresholdAt(r->episode.trajectory.length());
    }
    s.effector = r->state.effector;
    s.object = {r->state.objects[0].x, r->state.objects[0].y};
    s.goal = {r->state.goal.x, r->state.goal.y};
    s.alert_open = r->alert_open;
    out.push_back(s);
  }
  return out;
}

std::vector<InterventionRequest> Fleet::Alerts() const {
  return dispatcher_.QueueSnapshot();
}

std::vector<OperatorNode> Fleet::Operators() const {
  return dispatcher_.OperatorsSnapshot();
}

double Fleet::Delta(std::string_view task_id) const {
  std::lock_guard<std::mutex> lock(calibration_mu_);
  return resources_.at(std::string(task_id)).detector->delta();
}

}  // namespace otfleet
