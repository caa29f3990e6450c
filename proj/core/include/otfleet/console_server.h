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

#ifndef OTFLEET_CONSOLE_SERVER_H_
#define OTFLEET_CONSOLE_SERVER_H_

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "otfleet/console.h"

namespace otfleet {

// Web-socket transport for ConsoleHub. Each connection is one console
// operator; frames from ConsoleHub::Poll go to every open connection.
class ConsoleServer {
 public:
  struct Options {
    std::string address = "127.0.0.1";
    // 0 picks a free port.
    std::uint16_t port = 8765;
    std::chrono::milliseconds frame_period{100};
  };

  ConsoleServer(ConsoleHub& hub, Options options);
  ~ConsoleServer();
  ConsoleServer(const ConsoleServer&) = delete;
  ConsoleServer& operator=(const ConsoleServer&) = delete;

  // Binds and starts serving on a background thread. Throws kIo when the
  // port cannot be bound.
  void Start();
  void Stop();
  std::uint16_t port() const;
  std::size_t connections() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace otfleet

#endif  // OTFLEET_CONSOLE_SERVER_H_
