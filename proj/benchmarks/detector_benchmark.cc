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

#include <map>
#include <optional>

#include <benchmark/benchmark.h>

#include "otfleet/demo_bank.h"
#include "otfleet/failure_detector.h"
#include "otfleet/sim_world.h"

namespace otfleet {
namespace {

struct Fixture {
  FeatureEncoder encoder;
  DemoBank bank;
  Episode rollout;
};

const Fixture& SharedFixture(std::size_t num_demos) {
  static std::map<std::size_t, Fixture>* cache = new std::map<std::size_t, Fixture>;
  auto it = cache->find(num_demos);
  if (it != cache->end()) return it->second;
  FeatureEncoder encoder;
  DemoBank bank = DemoBank::Build(
      GenerateExpertDemos("pour", num_demos, 1, encoder), encoder.id());
  ScriptedPolicy policy{0.5, 0.004, 9};
  Episode rollout = RunScriptedEpisode(FindTask("pour"), policy, std::nullopt,
                                       5, bank.l_max(), encoder);
  return cache->emplace(num_demos, Fixture{encoder, std::move(bank),
                                           std::move(rollout)})
      .first->second;
}

void BM_FailureIndex(benchmark::State& state) {
  const Fixture& f = SharedFixture(static_cast<std::size_t>(state.range(0)));
  FailureIndexOptions options;
  options.prune = state.range(1) != 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ComputeFailureIndex(f.rollout.trajectory.embeddings, f.bank, options));
  }
}
BENCHMARK(BM_FailureIndex)
    ->ArgsProduct({{10, 50}, {0, 1}})
    ->Unit(benchmark::kMillisecond);

void BM_EvaluatePrefixes(benchmark::State& state) {
  const Fixture& f = SharedFixture(50);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        EvaluatePrefixes(f.rollout.trajectory.embeddings, f.bank, {}, 4));
  }
}
BENCHMARK(BM_EvaluatePrefixes)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace otfleet
