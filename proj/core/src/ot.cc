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

#include "otfleet/ot.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>

#include "otfleet/error.h"

namespace otfleet {
namespace {

double Dot(std::span<const double> u, std::span<const double> v) {
  double sum = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) sum += u[k] * v[k];
  return sum;
}

double ApplyKind(double cos_sim, CostKind kind) {
  const double c = std::clamp(cos_sim, -1.0, 1.0);
  return kind == CostKind::kCosineDistance ? 1.0 - c : 1.0 + c;
}

// Successive-shortest-path min-cost flow over a dense bipartite transport
// graph. Node 0 is the source, 1..m rows, m+1..m+n columns, m+n+1 the sink.
class TransportFlow {
 public:
  TransportFlow(std::size_t m, std::size_t n) : m_(m), n_(n) {
    adjacency_.resize(m + n + 2);
  }

  void AddEdge(int from, int to, std::int64_t cap, std::int64_t cost) {
    adjacency_[from].push_back(static_cast<int>(edges_.size()));
    edges_.push_back({to, cap, cost});
    adjacency_[to].push_back(static_cast<int>(edges_.size()));
    edges_.push_back({from, 0, -cost});
  }

  // Pushes `required` units from source to sink at minimum cost.
  void Run(std::int64_t required) {
    const int nodes = static_cast<int>(adjacency_.size());
    const int source = 0;
    const int sink = nodes - 1;
    constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
    std::vector<std::int64_t> potential(nodes, 0);
    std::vector<std::int64_t> dist(nodes);
    std::vector<int> via_edge(nodes);
    std::vector<char> done(nodes);
    std::int64_t pushed = 0;
    while (pushed < required) {
      std::fill(dist.begin(), dist.end(), kInf);
      std::fill(done.begin(), done.end(), 0);
      std::fill(via_edge.begin(), via_edge.end(), -1);
      dist[source] = 0;
      // Dense Dijkstra: the graph is nearly complete, so O(V^2) is the
      // right shape.
      for (int iter = 0; iter < nodes; ++iter) {
        int u = -1;
        for (int v = 0; v < nodes; ++v) {
          if (!done[v] && dist[v] < kInf && (u < 0 || dist[v] < dist[u])) u = v;
        }
        if (u < 0) break;
        done[u] = 1;
        for (int e : adjacency_[u]) {
          const Edge& edge = edges_[e];
          if (edge.cap <= 0) continue;
          const std::int64_t nd =
              dist[u] + edge.cost + potential[u] - potential[edge.to];
          if (nd < dist[edge.to]) {
            dist[edge.to] = nd;
            via_edge[edge.to] = e;
          }
        }
      }
      if (dist[sink] >= kInf) {
        throw Error(ErrorCode::kSolver, "transport graph disconnected");
      }
      for (int v = 0; v < nodes; ++v) {
        if (dist[v] < kInf) potential[v] += dist[v];
      }
      std::int64_t bottleneck = required - pushed;
      for (int v = sink; v != source; v = edges_[via_edge[v] ^ 1].to) {
        bottleneck = std::min(bottleneck, edges_[via_edge[v]].cap);
      }
      for (int v = sink; v != source; v = edges_[via_edge[v] ^ 1].to) {
        edges_[via_edge[v]].cap -= bottleneck;
        edges_[via_edge[v] ^ 1].cap += bottleneck;
      }
      pushed += bottleneck;
    }
  }

  // Flow on the forward edge with the given index.
  std::int64_t FlowOn(int forward_edge) const {
    return edges_[forward_edge ^ 1].cap;
  }

 private:
  struct Edge {
    int to;
    std::int64_t cap;
    std::int64_t cost;
  };
  std::size_t m_;
  std::size_t n_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> adjacency_;
};

void CheckFinite(const Matrix& values, const char* what) {
  for (double v : values.data()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kSolver,
                  std::string("non-finite ") + what +
                      " in Sinkhorn iteration; increase regularization");
    }
  }
}

double LogSumExp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - hi);
  return hi + std::log(sum);
}

// Matrix scaling with the duals held in log form ("absorption") and an
// annealed regularization schedule. Every stage solves the same entropic
// problem family; only the final stage runs at the requested regularization,
// so the fixed point is the plain entropic plan.
SinkhornResult SinkhornStabilized(const CostMatrix& cost,
                                  const SinkhornConfig& config) {
  const std::size_t m = cost.expert_len();
  const std::size_t n = cost.rollout_len();
  const double a = 1.0 / static_cast<double>(m);
  const double b = 1.0 / static_cast<double>(n);
  const double target = config.regularization;
  constexpr double kAbsorbBound = 1e30;
  constexpr double kStageTolerance = 1e-3;
  constexpr int kStageIterations = 20;

  std::vector<double> f(m, 0.0), g(n, 0.0);
  std::vector<double> u(m, 1.0), v(n, 1.0), kv(m), ktu(n);
  Matrix kernel(m, n);
  double eps = std::max(target, cost.MaxEntry());

  auto rebuild = [&](double e) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        kernel(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / e);
      }
    }
  };
  auto absorb = [&](double e) {
    for (std::size_t i = 0; i < m; ++i) f[i] += e * std::log(u[i]);
    for (std::size_t j = 0; j < n; ++j) g[j] += e * std::log(v[j]);
    std::fill(u.begin(), u.end(), 1.0);
    std::fill(v.begin(), v.end(), 1.0);
    rebuild(e);
  };
  auto multiply_kv = [&] {
    for (std::size_t i = 0; i < m; ++i) kv[i] = Dot(kernel.row(i), v);
  };

  SinkhornResult result;
  int it = 0;
  rebuild(eps);
  bool healthy = true;
  while (healthy) {
    const bool final_stage = eps <= target;
    const double tolerance =
        final_stage ? config.marginal_tolerance : kStageTolerance;
    multiply_kv();
    for (int stage_it = 0; it < config.max_iterations &&
                           (final_stage || stage_it < kStageIterations);
         ++stage_it, ++it) {
      for (std::size_t i = 0; i < m; ++i) u[i] = a / kv[i];
      std::fill(ktu.begin(), ktu.end(), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const auto krow = kernel.row(i);
        const double ui = u[i];
        for (std::size_t j = 0; j < n; ++j) ktu[j] += krow[j] * ui;
      }
      for (std::size_t j = 0; j < n; ++j) v[j] = b / ktu[j];
      bool large = false;
      for (double x : u) large = large || !(x < kAbsorbBound && x > 1.0 / kAbsorbBound);
      for (double x : v) large = large || !(x < kAbsorbBound && x > 1.0 / kAbsorbBound);
      if (large) {
        for (double x : u) healthy = healthy && std::isfinite(x) && x > 0.0;
        for (double x : v) healthy = healthy && std::isfinite(x) && x > 0.0;
        if (!healthy) break;
        absorb(eps);
      }
      multiply_kv();
      // Columns are exact after the v-update; rows carry the violation.
      double violation = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        violation = std::max(violation, std::abs(u[i] * kv[i] - a));
      }
      if (!std::isfinite(violation)) {
        healthy = false;
        break;
      }
      if (violation <= tolerance) {
        ++it;
        if (final_stage) result.converged = true;
        break;
      }
    }
    if (!healthy || final_stage || it >= config.max_iterations) {
      if (!final_stage) result.converged = false;
      if (healthy && !final_stage) {
        // Budget ran out mid-schedule: finish with one pass at the target so
        // the returned plan belongs to the requested regularization.
        absorb(eps);
        eps = target;
        rebuild(eps);
      }
      break;
    }
    absorb(eps);
    eps = std::max(target, eps * 0.5);
    rebuild(eps);
  }
  result.iterations = it;
  Matrix& mass = result.plan.mass;
  mass = Matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) mass(i, j) = u[i] * kernel(i, j) * v[j];
  }
  if (!healthy) {
    mass = Matrix(m, n, std::numeric_limits<double>::quiet_NaN());
  }
  return result;
}

SinkhornResult SinkhornLogDomain(const CostMatrix& cost,
                                 const SinkhornConfig& config) {
  const std::size_t m = cost.expert_len();
  const std::size_t n = cost.rollout_len();
  const double log_a = -std::log(static_cast<double>(m));
  const double log_b = -std::log(static_cast<double>(n));
  const double target = config.regularization;
  std::vector<double> f(m, 0.0), g(n, 0.0), scratch(std::max(m, n));
  SinkhornResult result;
  result.log_domain = true;

  // Epsilon scaling: anneal from the cost scale down to the target so the
  // duals are warm when the small regularization kicks in.
  double eps = std::max(target, cost.MaxEntry());
  int it = 0;
  auto update = [&](double e) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) scratch[j] = (g[j] - cost(i, j)) / e;
      f[i] = e * (log_a - LogSumExp({scratch.data(), n}));
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) scratch[i] = (f[i] - cost(i, j)) / e;
      g[j] = e * (log_b - LogSumExp({scratch.data(), m}));
    }
  };
  auto row_violation = [&](double e) {
    const double a = std::exp(log_a);
    double worst = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row += std::exp((f[i] + g[j] - cost(i, j)) / e);
      }
      worst = std::max(worst, std::abs(row - a));
    }
    return worst;
  };
  while (eps > target && it < config.max_iterations) {
    for (int k = 0; k < 8 && it < config.max_iterations; ++k, ++it) update(eps);
    eps = std::max(target, eps * 0.5);
  }
  for (; it < config.max_iterations; ++it) {
    update(target);
    const double violation = row_violation(target);
    if (!std::isfinite(violation)) break;
    if (violation <= config.marginal_tolerance) {
      ++it;
      result.converged = true;
      break;
    }
  }
  result.iterations = it;
  Matrix& mass = result.plan.mass;
  mass = Matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      mass(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / target);
    }
  }
  return result;
}

}  // namespace

double CosineDistance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(ErrorCode::kSchema, "cosine distance of vectors with sizes " +
                                        std::to_string(u.size()) + " and " +
                                        std::to_string(v.size()));
  }
  const double uu = Dot(u, u);
  const double vv = Dot(v, v);
  if (!(uu > 0.0)) throw Error(ErrorCode::kDomain, "first vector has zero norm");
  if (!(vv > 0.0)) {
    throw Error(ErrorCode::kDomain, "second vector has zero norm");
  }
  return ApplyKind(Dot(u, v) / std::sqrt(uu * vv), CostKind::kCosineDistance);
}

CostMatrix::CostMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0) {
    throw Error(ErrorCode::kSize, "cost matrix needs at least one row and column");
  }
  for (std::size_t i = 0; i < values_.rows(); ++i) {
    for (std::size_t j = 0; j < values_.cols(); ++j) {
      const double c = values_(i, j);
      if (!std::isfinite(c) || c < 0.0) {
        std::ostringstream msg;
        msg << "cost entry (" << i << ", " << j << ") = " << c
            << " is not finite and nonnegative";
        throw Error(ErrorCode::kDomain, msg.str());
      }
    }
  }
}

CostMatrix CostMatrix::FromEmbeddings(std::span<const Embedding> expert,
                                      std::span<const Embedding> rollout,
                                      CostKind kind) {
  Matrix values(expert.size(), rollout.size());
  for (std::size_t i = 0; i < expert.size(); ++i) {
    for (std::size_t j = 0; j < rollout.size(); ++j) {
      const double d = CosineDistance(expert[i], rollout[j]);
      values(i, j) = kind == CostKind::kCosineDistance ? d : 2.0 - d;
    }
  }
  return CostMatrix(std::move(values));
}

CostMatrix CostMatrix::FromUnitRows(const Matrix& expert_unit,
                                    std::span<const Embedding> rollout_unit,
                                    CostKind kind) {
  Matrix values(expert_unit.rows(), rollout_unit.size());
  for (std::size_t i = 0; i < expert_unit.rows(); ++i) {
    const auto e = expert_unit.row(i);
    for (std::size_t j = 0; j < rollout_unit.size(); ++j) {
      values(i, j) = ApplyKind(Dot(e, rollout_unit[j]), kind);
    }
  }
  return CostMatrix(std::move(values));
}

double CostMatrix::MaxEntry() const {
  double hi = 0.0;
  for (double c : values_.data()) hi = std::max(hi, c);
  return hi;
}

double TransportCost(const CostMatrix& cost, const Matrix& mass) {
  if (mass.rows() != cost.expert_len() || mass.cols() != cost.rollout_len()) {
    throw Error(ErrorCode::kSize, "plan shape does not match cost shape");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < mass.rows(); ++i) {
    total += Dot(cost.values().row(i), mass.row(i));
  }
  return total;
}

double MaxMarginalViolation(const Matrix& mass) {
  const double a = 1.0 / static_cast<double>(mass.rows());
  const double b = 1.0 / static_cast<double>(mass.cols());
  double worst = 0.0;
  for (std::size_t i = 0; i < mass.rows(); ++i) {
    worst = std::max(worst, std::abs(mass.RowSum(i) - a));
  }
  for (std::size_t j = 0; j < mass.cols(); ++j) {
    worst = std::max(worst, std::abs(mass.ColSum(j) - b));
  }
  return worst;
}

void SinkhornConfig::Validate() const {
  if (!(regularization > 0.0) || !std::isfinite(regularization)) {
    throw Error(ErrorCode::kConfig, "sinkhorn regularization must be > 0");
  }
  if (max_iterations < 1) {
    throw Error(ErrorCode::kConfig, "sinkhorn max_iterations must be >= 1");
  }
  if (!(marginal_tolerance > 0.0)) {
    throw Error(ErrorCode::kConfig, "sinkhorn marginal_tolerance must be > 0");
  }
}

TransportPlan SolveExact(const CostMatrix& cost, std::size_t max_dim) {
  const std::size_t m = cost.expert_len();
  const std::size_t n = cost.rollout_len();
  if (m > max_dim || n > max_dim) {
    throw Error(ErrorCode::kSize, "exact solve of " + std::to_string(m) + "x" +
                                      std::to_string(n) + " exceeds cap " +
                                      std::to_string(max_dim));
  }
  // Scaling masses by m*n makes every supply integral: row i ships n units,
  // column j receives m units.
  TransportFlow flow(m, n);
  const int sink = static_cast<int>(m + n + 1);
  const auto units = static_cast<std::int64_t>(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    flow.AddEdge(0, static_cast<int>(1 + i), static_cast<std::int64_t>(n), 0);
  }
  std::vector<int> cell_edge(m * n);
  int edge_index = static_cast<int>(2 * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto scaled =
          static_cast<std::int64_t>(std::llround(cost(i, j) / kExactCostResolution));
      cell_edge[i * n + j] = edge_index;
      flow.AddEdge(static_cast<int>(1 + i), static_cast<int>(1 + m + j), units,
                   scaled);
      edge_index += 2;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    flow.AddEdge(static_cast<int>(1 + m + j), sink, static_cast<std::int64_t>(m),
                 0);
  }
  flow.Run(units);

  TransportPlan plan;
  plan.mass = Matrix(m, n);
  const double scale = 1.0 / static_cast<double>(units);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      plan.mass(i, j) = static_cast<double>(flow.FlowOn(cell_edge[i * n + j])) * scale;
    }
  }
  plan.total_cost = TransportCost(cost, plan.mass);
  return plan;
}

SinkhornResult SolveSinkhorn(const CostMatrix& cost,
                             const SinkhornConfig& config) {
  config.Validate();
  SinkhornResult result = SinkhornStabilized(cost, config);
  bool finite = true;
  for (double v : result.plan.mass.data()) finite = finite && std::isfinite(v);
  if (!finite) result = SinkhornLogDomain(cost, config);
  CheckFinite(result.plan.mass, "transport mass");
  result.max_marginal_violation = MaxMarginalViolation(result.plan.mass);
  result.converged = result.converged &&
                     result.max_marginal_violation <= config.marginal_tolerance;
  result.plan.total_cost = TransportCost(cost, result.plan.mass);
  return result;
}

double PerStepReward(const CostMatrix& cost, const TransportPlan& plan,
                     std::size_t t) {
  if (plan.mass.rows() != cost.expert_len() ||
      plan.mass.cols() != cost.rollout_len()) {
    throw Error(ErrorCode::kSize, "plan shape does not match cost shape");
  }
  if (t < 1 || t > cost.rollout_len()) {
    throw Error(ErrorCode::kIndex, "rollout timestep " + std::to_string(t) +
                                       " outside [1, " +
                                       std::to_string(cost.rollout_len()) + "]");
  }
  double reward = 0.0;
  for (std::size_t i = 0; i < cost.expert_len(); ++i) {
    reward -= cost(i, t - 1) * plan.mass(i, t - 1);
  }
  return reward;
}

}  // namespace otfleet
