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

#include "otfleet/failure_detector.h"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "oracles/reference.h"
#include "otfleet/error.h"
#include "otfleet/sim_world.h"
#include "unit/test_util.h"

namespace otfleet {
namespace {

Episode EpisodeOf(std::vector<Embedding> rows) {
  Episode e;
  e.trajectory.embeddings = std::move(rows);
  e.trajectory.actions.assign(e.trajectory.embeddings.size(), {});
  e.trajectory.intervention_flags.assign(e.trajectory.embeddings.size(), false);
  return e;
}

std::vector<Embedding> RandomRows(Rng& rng, std::size_t len, std::size_t dim) {
  std::vector<Embedding> rows(len, Embedding(dim));
  for (auto& r : rows) {
    for (double& v : r) v = rng.Normal();
  }
  return rows;
}

DemoBank RandomBank(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<Episode> demos;
  for (std::size_t k = 0; k < n; ++k) {
    demos.push_back(EpisodeOf(
        RandomRows(rng, static_cast<std::size_t>(rng.UniformInt(4, 12)), dim)));
  }
  return DemoBank::Build(std::move(demos), "enc");
}

TEST(FailureIndexTest, DemoAgainstItselfIsZero) {
  // Orthonormal rows: the only zero-cost coupling is the identity.
  std::vector<Embedding> rows;
  for (std::size_t k = 0; k < 6; ++k) {
    Embedding e(6, 0.0);
    e[k] = 1.0;
    rows.push_back(e);
  }
  const DemoBank bank = DemoBank::Build({EpisodeOf(rows)}, "enc");
  const FailureIndex idx = ComputeFailureIndex(rows, bank);
  EXPECT_LE(idx.value, 1e-6);
  EXPECT_EQ(idx.nearest_demo, 0u);
  EXPECT_EQ(idx.prefix_len, 6u);
}

TEST(FailureIndexTest, PruningNeverChangesTheResult) {
  Rng rng(21);
  const DemoBank bank = RandomBank(rng, 12, 5);
  FailureIndexOptions pruned;
  FailureIndexOptions full;
  full.prune = false;
  for (int trial = 0; trial < 20; ++trial) {
    const auto prefix =
        RandomRows(rng, static_cast<std::size_t>(rng.UniformInt(1, 12)), 5);
    EXPECT_EQ(ComputeFailureIndex(prefix, bank, pruned),
              ComputeFailureIndex(prefix, bank, full));
  }
}

TEST(FailureIndexTest, MinimumOverDemos) {
  Rng rng(22);
  const DemoBank bank = RandomBank(rng, 5, 4);
  const auto prefix = RandomRows(rng, 7, 4);
  const FailureIndex idx = ComputeFailureIndex(prefix, bank);
  const auto unit = NormalizeRows(prefix);
  double best = 1e300;
  for (const Matrix& demo : bank.unit_padded()) {
    best = std::min(best,
                    SolveSinkhorn(CostMatrix::FromUnitRows(demo, unit)).plan.total_cost);
  }
  EXPECT_DOUBLE_EQ(idx.value, best);
}

TEST(FailureIndexTest, Errors) {
  Rng rng(23);
  const DemoBank bank = RandomBank(rng, 2, 3);
  EXPECT_ERROR_CODE(ComputeFailureIndex({}, bank), ErrorCode::kDomain);
  const std::vector<Embedding> wrong = {{1.0, 0.0}};
  EXPECT_ERROR_CODE(ComputeFailureIndex(wrong, bank), ErrorCode::kSchema);
  const std::vector<Embedding> ok = {{1.0, 0.0, 0.0}};
  EXPECT_ERROR_CODE(EvaluatePrefixes(ok, bank, {}, 0), ErrorCode::kConfig);
}

TEST(EvaluatePrefixesTest, StrideAndFinalPrefix) {
  Rng rng(24);
  const DemoBank bank = RandomBank(rng, 3, 3);
  const auto traj = RandomRows(rng, 10, 3);
  const auto out = EvaluatePrefixes(traj, bank, {}, 4);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].prefix_len, 4u);
  EXPECT_EQ(out[1].prefix_len, 8u);
  EXPECT_EQ(out[2].prefix_len, 10u);
  EXPECT_EQ(out[1], ComputeFailureIndex(std::span(traj).first(8), bank));
  EXPECT_EQ(EvaluatePrefixes(std::span(traj).first(8), bank, {}, 4).size(), 2u);
}

TEST(QuantileTest, MatchesNumpyGolden) {
  std::ifstream in(std::string(OTFLEET_TEST_DATA_DIR) + "/quantile_golden.json");
  ASSERT_TRUE(in) << "missing golden file";
  const auto golden = nlohmann::json::parse(in);
  ASSERT_GT(golden["cases"].size(), 50u);
  for (const auto& c : golden["cases"]) {
    const auto values = c["values"].get<std::vector<double>>();
    const double q = c["q"].get<double>();
    const double want = c["expected"].get<double>();
    EXPECT_NEAR(Quantile(values, q), want, 1e-15 * std::max(1.0, std::fabs(want)))
        << "n=" << values.size() << " q=" << q;
  }
}

TEST(QuantileTest, MatchesRankCountingOracle) {
  Rng rng(25);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(rng.UniformInt(1, 40)));
    for (double& x : v) x = std::floor(rng.Uniform(0.0, 20.0)) / 4.0;
    const double q = rng.Uniform();
    EXPECT_NEAR(Quantile(v, q), static_cast<double>(oracle::Quantile7(v, q)),
                1e-12);
  }
}

TEST(QuantileTest, Errors) {
  const std::vector<double> v = {1.0, 2.0};
  EXPECT_ERROR_CODE(Quantile({}, 0.5), ErrorCode::kEmptyInput);
  EXPECT_ERROR_CODE(Quantile(v, -0.01), ErrorCode::kDomain);
  EXPECT_ERROR_CODE(Quantile(v, 1.01), ErrorCode::kDomain);
  EXPECT_EQ(Quantile(v, 0.0), 1.0);
  EXPECT_EQ(Quantile(v, 1.0), 2.0);
}

TEST(DetectorStateTest, DeltaStepsAndClamps) {
  DetectorState s;
  EXPECT_EQ(s.delta(), 10.0);
  s.UpdateDelta(DetectorEvent::kFalseAlarm);
  EXPECT_EQ(s.delta(), 7.5);
  s.UpdateDelta(DetectorEvent::kMissedFailure);
  s.UpdateDelta(DetectorEvent::kMissedFailure);
  EXPECT_EQ(s.delta(), 12.5);
  for (int k = 0; k < 50; ++k) s.UpdateDelta(DetectorEvent::kMissedFailure);
  EXPECT_EQ(s.delta(), 50.0);
  for (int k = 0; k < 50; ++k) s.UpdateDelta(DetectorEvent::kFalseAlarm);
  EXPECT_EQ(s.delta(), 0.5);

  DetectorConfig literal;
  literal.direction = DeltaDirection::kLiteral;
  DetectorState l(literal);
  l.UpdateDelta(DetectorEvent::kMissedFailure);
  EXPECT_EQ(l.delta(), 7.5);
}

TEST(DetectorStateTest, WarmupGatesAlarms) {
  DetectorState s;
  const FailureIndex big{5.0, 0, 40};
  EXPECT_EQ(s.Check(big, 40), Decision::kWarmingUp);
  for (int k = 0; k < 4; ++k) s.RecordSuccess({0.1, 0, 40});
  EXPECT_FALSE(s.calibrated());
  EXPECT_FALSE(s.ThresholdAt(40).has_value());
  s.RecordSuccess({0.1, 0, 40});
  EXPECT_TRUE(s.calibrated());
  EXPECT_EQ(s.Check(big, 40), Decision::kRaise);
}

TEST(DetectorStateTest, EarlyPrefixesAreGated) {
  DetectorConfig cfg;
  cfg.calibration = CalibrationMode::kFinalIndex;
  DetectorState s(cfg);
  for (int k = 0; k < 5; ++k) s.RecordSuccess({0.1, 0, 40});
  // floor(0.25 * 42) = 10.
  EXPECT_EQ(s.Check({9.0, 0, 9}, 42), Decision::kSilent);
  EXPECT_EQ(s.Check({9.0, 0, 10}, 42), Decision::kRaise);
  EXPECT_EQ(s.Check({0.1, 0, 10}, 42), Decision::kSilent);
}

TEST(DetectorStateTest, FinalIndexThresholdIsTheQuantile) {
  DetectorConfig cfg;
  cfg.calibration = CalibrationMode::kFinalIndex;
  DetectorState s(cfg);
  std::vector<double> finals;
  Rng rng(26);
  for (int k = 0; k < 30; ++k) {
    finals.push_back(rng.Uniform(0.05, 0.3));
    s.RecordSuccess({finals.back(), 0, 20});
  }
  EXPECT_NEAR(*s.threshold(), static_cast<double>(oracle::Quantile7(finals, 0.9)),
              1e-15);
  s.UpdateDelta(DetectorEvent::kFalseAlarm);
  EXPECT_NEAR(*s.threshold(),
              static_cast<double>(oracle::Quantile7(finals, 0.925)), 1e-15);
}

TEST(DetectorStateTest, BandThresholdMatchesOracle) {
  Rng rng(27);
  DetectorState s;
  std::vector<oracle::Trace> traces;
  for (int k = 0; k < 25; ++k) {
    const auto len = static_cast<std::size_t>(rng.UniformInt(8, 30));
    std::vector<FailureIndex> trace;
    oracle::Trace ref;
    double level = rng.Uniform(0.05, 0.2);
    for (std::size_t t = 4; t <= len; t += 4) {
      level += rng.Uniform(-0.01, 0.03);
      trace.push_back({level, 0, t});
      ref.push_back({t, level});
    }
    s.RecordSuccess(trace.back(), trace);
    traces.push_back(ref);
  }
  for (double delta : {10.0, 7.5, 5.0}) {
    for (std::size_t t : {1u, 4u, 9u, 16u, 28u, 60u}) {
      const double got = *s.ThresholdAt(t);
      const double want =
          static_cast<double>(oracle::BandThreshold(traces, delta, t));
      EXPECT_NEAR(got, want, 1e-12 * want) << "delta " << delta << " t " << t;
    }
    s.UpdateDelta(DetectorEvent::kFalseAlarm);
  }
}

TEST(DetectorConfigTest, Validation) {
  DetectorConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.delta = 60.0;
  EXPECT_ERROR_CODE(c.Validate(), ErrorCode::kConfig);
  c = {};
  c.stride = 0;
  EXPECT_ERROR_CODE(c.Validate(), ErrorCode::kConfig);
  c = {};
  c.min_prefix_fraction = 1.0;
  EXPECT_ERROR_CODE(c.Validate(), ErrorCode::kConfig);
  EXPECT_ERROR_CODE(ParseCalibrationMode("vibes"), ErrorCode::kConfig);
  EXPECT_ERROR_CODE(ParseDeltaDirection("up"), ErrorCode::kConfig);
}

TEST(RewindTargetTest, MatchesExhaustiveScan) {
  Rng rng(28);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<FailureIndex> cache;
    std::vector<oracle::TracePoint> ref;
    const auto n = static_cast<std::size_t>(rng.UniformInt(1, 15));
    for (std::size_t k = 1; k <= n; ++k) {
      const double v = rng.Uniform(0.0, 1.0);
      cache.push_back({v, 0, 4 * k});
      ref.push_back({4 * k, v});
    }
    const std::size_t t0 = 4 * static_cast<std::size_t>(rng.UniformInt(1, n));
    const double eps = rng.Uniform(0.05, 0.95);
    EXPECT_EQ(RewindTarget(cache, t0, {eps}), oracle::RewindScan(ref, t0, eps));
  }
}

TEST(RewindTargetTest, FallsBackToOneAndRejectsBadInput) {
  const std::vector<FailureIndex> cache = {{0.5, 0, 4}, {0.6, 0, 8}};
  EXPECT_EQ(RewindTarget(cache, 8), 1u);
  EXPECT_EQ(RewindTarget(cache, 8, {0.9}), 4u);
  EXPECT_ERROR_CODE(RewindTarget({}, 4), ErrorCode::kDomain);
  EXPECT_ERROR_CODE(RewindTarget(cache, 6), ErrorCode::kDomain);
  EXPECT_ERROR_CODE(RewindTarget(cache, 8, {1.0}), ErrorCode::kConfig);
}

TEST(PrefixIndexCacheTest, StrictAppendAndTruncate) {
  PrefixIndexCache c;
  c.Append({0.1, 0, 4});
  c.Append({0.2, 0, 8});
  EXPECT_ERROR_CODE(c.Append({0.3, 0, 8}), ErrorCode::kDomain);
  EXPECT_ERROR_CODE(c.Append({0.3, 0, 2}), ErrorCode::kDomain);
  c.TruncateTo(5);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.back().prefix_len, 4u);
  c.Append({0.3, 0, 6});
  EXPECT_EQ(c.size(), 2u);
  c.Clear();
  EXPECT_TRUE(c.empty());
}

TEST(DetectorLogLineTest, FieldsAndNullThreshold) {
  DetectorLogRecord r;
  r.robot_id = 2;
  r.t0 = 12;
  r.lambda = 0.25;
  r.nearest_demo = 3;
  r.delta = 7.5;
  r.decision = Decision::kWarmingUp;
  const auto j = nlohmann::json::parse(DetectorLogLine(r));
  EXPECT_EQ(j["robot_id"], 2);
  EXPECT_EQ(j["t0"], 12);
  EXPECT_EQ(j["lambda"], 0.25);
  EXPECT_TRUE(j["threshold"].is_null());
  EXPECT_EQ(j["decision"], "WARMING_UP");
  r.threshold = 0.5;
  r.decision = Decision::kRaise;
  const auto k = nlohmann::json::parse(DetectorLogLine(r));
  EXPECT_EQ(k["threshold"], 0.5);
  EXPECT_EQ(k["decision"], "RAISE");
}

class EvaluationChannelTest : public ::testing::TestWithParam<bool> {};

TEST_P(EvaluationChannelTest, DropsStaleEpochsAndOldPrefixes) {
  Rng rng(29);
  const DemoBank bank = RandomBank(rng, 3, 3);
  EvaluationChannel ch({&bank, &bank}, {}, GetParam());
  const auto traj = RandomRows(rng, 12, 3);
  auto req = [&](int robot, std::uint64_t epoch, std::size_t t) {
    return EvalRequest{robot, epoch, t,
                       {traj.begin(), traj.begin() + static_cast<long>(t)}};
  };
  ch.Submit(req(0, 0, 4));
  ch.Submit(req(0, 0, 8));
  ch.Submit(req(1, 0, 4));
  ch.Drain();
  auto r0 = ch.Poll(0);
  ASSERT_EQ(r0.size(), 2u);
  EXPECT_EQ(r0[0].index.prefix_len, 4u);
  EXPECT_EQ(r0[1].index.prefix_len, 8u);
  EXPECT_EQ(r0[1].index, ComputeFailureIndex(std::span(traj).first(8), bank));
  ch.Submit(req(0, 0, 4));
  ch.Drain();
  EXPECT_TRUE(ch.Poll(0).empty());
  ch.Reset(0, 1);
  ch.Submit(req(0, 0, 12));
  ch.Submit(req(0, 1, 4));
  ch.Drain();
  r0 = ch.Poll(0);
  ASSERT_EQ(r0.size(), 1u);
  EXPECT_EQ(r0[0].epoch, 1u);
  EXPECT_EQ(r0[0].index.prefix_len, 4u);
  EXPECT_EQ(ch.Poll(1).size(), 1u);
  EXPECT_ERROR_CODE(ch.Submit(req(2, 0, 4)), ErrorCode::kIndex);
}

INSTANTIATE_TEST_SUITE_P(SyncAndThreaded, EvaluationChannelTest,
                         ::testing::Bool());

}  // namespace
}  // namespace otfleet
