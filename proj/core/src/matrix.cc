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

#include "otfleet/matrix.h"

namespace otfleet {

double Matrix::RowSum(std::size_t r) const {
  double sum = 0.0;
  for (double v : row(r)) sum += v;
  return sum;
}

double Matrix::ColSum(std::size_t c) const {
  double sum = 0.0;
  for (std::size_t r = 0; r < rows_; ++r) sum += (*this)(r, c);
  return sum;
}

}  // namespace otfleet
