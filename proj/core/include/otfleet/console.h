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

// Console wire protocol, independent of the transport. Every message is one
// JSON object with a "type" field and the schema tag; unknown fields are
// ignored.
//
// client -> server: hello, claim {robot_id?}, takeover_step {robot_id,
//   action[4]}, release {robot_id?}, mark_false_alarm {robot_id}
// server -> client: hello {operator_id, robots, tasks}, fleet_state, alert,
//   assign, rewound, release, metrics_tick, error {message, code, request}

#ifndef OTFLEET_CONSOLE_H_
#define OTFLEET_CONSOLE_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "otfleet/fleet.h"

namespace otfleet {

inline constexpr std::string_view kConsoleSchema = "otfleet.console/1";

inline constexpr std::array<std::string_view, 11> kConsoleMessageTypes = {
    "hello",    "fleet_state", "alert",   "claim",
    "assign",   "takeover_step", "release", "mark_false_alarm",
    "rewound",  "metrics_tick", "error"};

class ConsoleHub {
 public:
  explicit ConsoleHub(Fleet& fleet);

  struct Opened {
    int operator_id = 0;
    std::string hello;
  };

  // Registers a console operator for a new connection.
  Opened Open();
  // Connection gone. An intervention in progress goes back to the queue.
  void Close(int operator_id);
  // Replies for the sending session. Malformed or rejected messages yield a
  // single error message; the session stays usable.
  std::vector<std::string> Handle(int operator_id, std::string_view text);

  // Messages for every session since the previous call: alert per new
  // request, rewound per rewind, release per release, then a fleet_state and
  // a metrics_tick frame.
  std::vector<std::string> Poll();

  std::string FleetStateMessage();
  std::string MetricsTickMessage();

 private:
  std::string Stamp(nlohmann::ordered_json message);
  std::string ErrorMessage(std::string_view message, std::string_view code,
                           std::string_view request_type);

  Fleet& fleet_;
  std::mutex mu_;
  std::uint64_t next_seq_ = 1;
  std::size_t event_cursor_ = 0;
  std::size_t episodes_finished_ = 0;
  std::size_t successes_ = 0;
  std::size_t steps_total_ = 0;
  std::size_t steps_intervened_ = 0;
};

}  // namespace otfleet

#endif  // OTFLEET_CONSOLE_H_
