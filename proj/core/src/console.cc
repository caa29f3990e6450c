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

#include "otfleet/console.h"

#include "otfleet/error.h"

namespace otfleet {
namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json Optional(const std::optional<double>& v) {
  return v.has_value() ? ordered_json(*v) : ordered_json();
}

ordered_json Point(const std::array<double, 2>& p) {
  return ordered_json::array({p[0], p[1]});
}

int RobotIdField(const ordered_json& msg) {
  const auto it = msg.find("robot_id");
  if (it == msg.end() || !it->is_number_integer()) {
    throw Error(ErrorCode::kProtocol, "robot_id must be an integer");
  }
  return it->get<int>();
}

}  // namespace

ConsoleHub::ConsoleHub(Fleet& fleet) : fleet_(fleet) {}

std::string ConsoleHub::Stamp(ordered_json message) {
  message["schema"] = kConsoleSchema;
  message["seq"] = next_seq_++;
  return message.dump();
}

std::string ConsoleHub::ErrorMessage(std::string_view message,
                                     std::string_view code,
                                     std::string_view request_type) {
  return Stamp({{"type", "error"},
                {"message", message},
                {"code", code},
                {"request", request_type}});
}

ConsoleHub::Opened ConsoleHub::Open() {
  const int op = fleet_.AddConsoleOperator();
  std::lock_guard<std::mutex> lock(mu_);
  ordered_json hello = {{"type", "hello"},
                        {"operator_id", op},
                        {"robots", fleet_.config().num_robots},
                        {"tasks", fleet_.config().tasks}};
  return {op, Stamp(std::move(hello))};
}

void ConsoleHub::Close(int operator_id) { fleet_.RemoveOperator(operator_id); }

std::vector<std::string> ConsoleHub::Handle(int operator_id,
                                            std::string_view text) {
  ordered_json msg;
  std::string type;
  try {
    msg = ordered_json::parse(text);
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
      std::lock_guard<std::mutex> lock(mu_);
      return {ErrorMessage("message must be an object with a string type",
                           "malformed", "")};
    }
    type = msg["type"].get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    std::lock_guard<std::mutex> lock(mu_);
    return {ErrorMessage(std::string("unparseable message: ") + ex.what(),
                         "malformed", "")};
  }

  try {
    if (type == "hello") {
      std::lock_guard<std::mutex> lock(mu_);
      return {Stamp({{"type", "hello"},
                     {"operator_id", operator_id},
                     {"robots", fleet_.config().num_robots},
                     {"tasks", fleet_.config().tasks}})};
    }
    if (type == "claim") {
      std::optional<int> robot;
      if (msg.contains("robot_id") && !msg["robot_id"].is_null()) {
        robot = RobotIdField(msg);
      }
      const Assignment a = fleet_.Claim(operator_id, robot);
      std::lock_guard<std::mutex> lock(mu_);
      return {Stamp({{"type", "assign"},
                     {"operator_id", a.operator_id},
                     {"robot_id", a.request.robot_id},
                     {"request_seq", a.request.seq},
                     {"raise_timestep", a.request.raise_timestep},
                     {"rewind_target", a.request.rewind_target}})};
    }
    if (type == "takeover_step") {
      const int robot = RobotIdField(msg);
      const auto it = msg.find("action");
      if (it == msg.end() || !it->is_array() || it->size() != kActionDim) {
        throw Error(ErrorCode::kProtocol, "action must be an array of " +
                                              std::to_string(kActionDim) +
                                              " numbers");
      }
      Action action{};
      for (std::size_t i = 0; i < kActionDim; ++i) {
        if (!(*it)[i].is_number()) {
          throw Error(ErrorCode::kProtocol, "action entries must be numbers");
        }
        action[i] = (*it)[i].get<double>();
      }
      fleet_.SubmitTakeover(operator_id, robot, action);
      return {};
    }
    if (type == "release") {
      fleet_.ReleaseOperator(operator_id);
      return {};
    }
    if (type == "mark_false_alarm") {
      fleet_.MarkFalseAlarm(RobotIdField(msg));
      return {MetricsTickMessage()};
    }
    std::lock_guard<std::mutex> lock(mu_);
    return {ErrorMessage("unsupported message type '" + type + "'",
                         "unknown_type", type)};
  } catch (const Error& ex) {
    std::lock_guard<std::mutex> lock(mu_);
    return {ErrorMessage(ex.what(), ErrorCodeName(ex.code()), type)};
  }
}

std::vector<std::string> ConsoleHub::Poll() {
  const std::vector<FleetEvent> events = fleet_.events().Snapshot();
  std::vector<std::string> out;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (; event_cursor_ < events.size(); ++event_cursor_) {
      const FleetEvent& e = events[event_cursor_];
      const auto& p = e.payload;
      switch (e.kind) {
        case EventKind::kEnqueue:
          out.push_back(Stamp({{"type", "alert"},
                               {"robot_id", e.robot_id},
                               {"request_seq", p.value("request_seq", 0)},
                               {"raise_timestep", p.value("t0", 0)},
                               {"rewind_target", p.value("rewind_target", 0)},
                               {"clock", e.clock}}));
          break;
        case EventKind::kRewind:
          out.push_back(Stamp({{"type", "rewound"},
                               {"robot_id", e.robot_id},
                               {"operator_id", e.operator_id.value_or(-1)},
                               {"from", p.value("from", 0)},
                               {"to", p.value("to", 0)},
                               {"fallback", p.value("fallback", false)}}));
          break;
        case EventKind::kRelease:
          out.push_back(Stamp({{"type", "release"},
                               {"robot_id", e.robot_id},
                               {"operator_id", e.operator_id.value_or(-1)},
                               {"reason", p.value("reason", "")}}));
          break;
        case EventKind::kFinalize:
          ++episodes_finished_;
          successes_ += p.value("failure", true) ? 0 : 1;
          steps_total_ += p.value("length", std::size_t{0});
          steps_intervened_ += p.value("intervened_steps", std::size_t{0});
          break;
        default:
          break;
      }
    }
  }
  out.push_back(FleetStateMessage());
  out.push_back(MetricsTickMessage());
  return out;
}

std::string ConsoleHub::FleetStateMessage() {
  ordered_json robots = ordered_json::array();
  for (const RobotSummary& s : fleet_.Summaries()) {
    robots.push_back({{"robot_id", s.id},
                      {"task_id", s.task_id},
                      {"phase", RobotPhaseName(s.phase)},
                      {"clock", s.clock},
                      {"lambda", Optional(s.lambda)},
                      {"threshold", Optional(s.threshold)},
                      {"alert", s.alert_open},
                      {"position",
                       {{"effector", Point(s.effector)},
                        {"object", Point(s.object)},
                        {"goal", Point(s.goal)}}}});
  }
  ordered_json queue = ordered_json::array();
  for (const InterventionRequest& r : fleet_.Alerts()) {
    queue.push_back({{"robot_id", r.robot_id},
                     {"request_seq", r.seq},
                     {"raise_timestep", r.raise_timestep}});
  }
  ordered_json operators = ordered_json::array();
  for (const OperatorNode& o : fleet_.Operators()) {
    operators.push_back(
        {{"operator_id", o.id},
         {"kind", o.kind == OperatorKind::kOracle ? "oracle" : "human_console"},
         {"busy_robot",
          o.busy_robot.has_value() ? ordered_json(*o.busy_robot) : ordered_json()}});
  }
  std::lock_guard<std::mutex> lock(mu_);
  return Stamp({{"type", "fleet_state"},
                {"robots", std::move(robots)},
                {"queue", std::move(queue)},
                {"operators", std::move(operators)}});
}

std::string ConsoleHub::MetricsTickMessage() {
  ordered_json deltas = ordered_json::object();
  for (const std::string& task : fleet_.config().tasks) {
    deltas[task] = fleet_.Delta(task);
  }
  std::lock_guard<std::mutex> lock(mu_);
  ordered_json sr = ordered_json();
  ordered_json ir = ordered_json();
  if (episodes_finished_ > 0) {
    sr = static_cast<double>(successes_) / static_cast<double>(episodes_finished_);
  }
  if (steps_total_ > 0) {
    ir = static_cast<double>(steps_intervened_) / static_cast<double>(steps_total_);
  }
  return Stamp({{"type", "metrics_tick"},
                {"episodes_finished", episodes_finished_},
                {"success_rate", sr},
                {"intervention_rate", ir},
                {"delta", std::move(deltas)}});
}

}  // namespace otfleet
