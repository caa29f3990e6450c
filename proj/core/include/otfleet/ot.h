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

// Discrete optimal transport between two trajectories with uniform marginals:
//
//   min_{mu >= 0} sum_ij c_ij mu_ij  s.t.  sum_j mu_ij = 1/l_e,
//                                          sum_i mu_ij = 1/l_b.
//
// SolveExact is a min-cost-flow reference used for tests and small
// instances; SolveSinkhorn is the entropic approximation used online.

#ifndef OTFLEET_OT_H_
#define OTFLEET_OT_H_

#include <cstddef>
#include <span>
#include <vector>

#include "otfleet/matrix.h"

namespace otfleet {

using Embedding = std::vector<double>;

enum class CostKind {
  // 1 - cos(u, v): similar embeddings are cheap to match.
  kCosineDistance,
  // 1 + cos(u, v): the literal "similarity as cost" reading, shifted by the
  // constant 1 so entries stay nonnegative. Same minimizer as raw similarity.
  kShiftedCosineSimilarity,
};

// 1 - (u.v) / (|u| |v|), in [0, 2]. Throws kDomain on a zero-norm input.
double CosineDistance(std::span<const double> u, std::span<const double> v);

// Pairwise costs; rows are expert timesteps, columns rollout timesteps.
class CostMatrix {
 public:
  // Throws kSize on an empty matrix, kDomain on negative/non-finite entries.
  explicit CostMatrix(Matrix values);

  static CostMatrix FromEmbeddings(std::span<const Embedding> expert,
                                   std::span<const Embedding> rollout,
                                   CostKind kind = CostKind::kCosineDistance);

  // Rows already scaled to unit norm. Avoids recomputing norms in the
  // detector's inner loop.
  static CostMatrix FromUnitRows(const Matrix& expert_unit,
                                 std::span<const Embedding> rollout_unit,
                                 CostKind kind = CostKind::kCosineDistance);

  std::size_t expert_len() const { return values_.rows(); }
  std::size_t rollout_len() const { return values_.cols(); }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(i, j);
  }
  const Matrix& values() const { return values_; }
  double MaxEntry() const;

 private:
  Matrix values_;
};

struct TransportPlan {
  Matrix mass;
  double total_cost = 0.0;
};

// Frobenius inner product <cost, mass>.
double TransportCost(const CostMatrix& cost, const Matrix& mass);

// max over rows/cols of |sum - 1/l|.
double MaxMarginalViolation(const Matrix& mass);

struct SinkhornConfig {
  double regularization = 0.02;
  int max_iterations = 500;
  double marginal_tolerance = 1e-6;

  // Throws kConfig when a field is out of range.
  void Validate() const;
};

struct SinkhornResult {
  TransportPlan plan;
  bool converged = false;
  double max_marginal_violation = 0.0;
  int iterations = 0;
  bool log_domain = false;
};

inline constexpr std::size_t kDefaultExactSolveCap = 64;
// Cost quantum of the integer min-cost-flow formulation. This is the only
// source of inexactness in SolveExact.
inline constexpr double kExactCostResolution = 1e-9;

// Globally optimal plan via successive shortest paths on the bipartite
// supply graph (supply l_b per row node, demand l_e per column node).
// Throws kSize when either side exceeds max_dim.
TransportPlan SolveExact(const CostMatrix& cost,
                         std::size_t max_dim = kDefaultExactSolveCap);

// Entropic approximation. Uses matrix scaling when exp(-c/reg) is safely
// representable and log-domain updates otherwise. Throws kSolver if the
// iteration still produces non-finite values.
SinkhornResult SolveSinkhorn(const CostMatrix& cost,
                             const SinkhornConfig& config = {});

// r_t = -sum_i c(i, t) mu(i, t) for 1-based rollout timestep t.
double PerStepReward(const CostMatrix& cost, const TransportPlan& plan,
                     std::size_t t);

}  // namespace otfleet

#endif  // OTFLEET_OT_H_
