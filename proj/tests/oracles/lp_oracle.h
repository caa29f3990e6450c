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

// Test-only reference solvers for the uniform-marginal transport problem.
// Nothing here shares code with the library solvers.

#ifndef OTFLEET_TESTS_ORACLES_LP_ORACLE_H_
#define OTFLEET_TESTS_ORACLES_LP_ORACLE_H_

#include <cstddef>
#include <vector>

namespace otfleet::oracle {

// Row-major m x n cost. Returns the optimal cost of
//   min sum c_ij x_ij  s.t. row sums 1/m, column sums 1/n, x >= 0
// by a dense two-phase tableau simplex with Bland's rule in long double.
long double TransportLpCost(const std::vector<double>& cost, std::size_t m,
                            std::size_t n);

// Square case only: the optimum sits at a permutation matrix scaled by 1/n,
// so enumerating all n! assignments gives the exact optimum. n <= 8.
long double AssignmentBruteForceCost(const std::vector<double>& cost,
                                     std::size_t n);

}  // namespace otfleet::oracle

#endif  // OTFLEET_TESTS_ORACLES_LP_ORACLE_H_
