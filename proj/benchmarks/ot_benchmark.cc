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

#include <benchmark/benchmark.h>

#include "otfleet/matrix.h"
#include "otfleet/ot.h"
#include "otfleet/rng.h"

namespace otfleet {
namespace {

CostMatrix RandomCost(std::size_t m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix values(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) values(i, j) = rng.Uniform(0.0, 2.0);
  }
  return CostMatrix(std::move(values));
}

void BM_SolveSinkhorn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const CostMatrix cost = RandomCost(n, n, 7);
  SinkhornConfig config;
  config.regularization = static_cast<double>(state.range(1)) / 1000.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(SolveSinkhorn(cost, config));
  }
}
BENCHMARK(BM_SolveSinkhorn)
    ->ArgsProduct({{8, 16, 32, 64, 128}, {20, 50}})
    ->Unit(benchmark::kMicrosecond);

void BM_SolveExact(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const CostMatrix cost = RandomCost(n, n, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(SolveExact(cost));
  }
}
BENCHMARK(BM_SolveExact)->RangeMultiplier(2)->Range(4, 64)->Unit(
    benchmark::kMicrosecond);

void BM_CostFromEmbeddings(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<Embedding> a(n, Embedding(16));
  std::vector<Embedding> b(n, Embedding(16));
  for (auto& v : a) {
    for (double& x : v) x = rng.Normal();
  }
  for (auto& v : b) {
    for (double& x : v) x = rng.Normal();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(CostMatrix::FromEmbeddings(a, b));
  }
}
BENCHMARK(BM_CostFromEmbeddings)->Arg(32)->Arg(128);

}  // namespace
}  // namespace otfleet

BENCHMARK_MAIN();
