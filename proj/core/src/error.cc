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

#include "otfleet/error.h"

namespace otfleet {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDomain:
      return "domain";
    case ErrorCode::kSize:
      return "size";
    case ErrorCode::kSchema:
      return "schema";
    case ErrorCode::kParse:
      return "parse";
    case ErrorCode::kIndex:
      return "index";
    case ErrorCode::kSolver:
      return "solver";
    case ErrorCode::kCompatibility:
      return "compatibility";
    case ErrorCode::kProtocol:
      return "protocol";
    case ErrorCode::kConfig:
      return "config";
    case ErrorCode::kIo:
      return "io";
    case ErrorCode::kEmptyInput:
      return "empty_input";
    case ErrorCode::kDeadlock:
      return "deadlock";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + " error: " +
                         message),
      code_(code) {}

}  // namespace otfleet
