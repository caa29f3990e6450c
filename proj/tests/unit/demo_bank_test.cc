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

#include "otfleet/demo_bank.h"

#include <gtest/gtest.h>

#include <fstream>

#include "otfleet/error.h"
#include "otfleet/sim_world.h"
#include "unit/test_util.h"

namespace otfleet {
namespace {

Episode MakeEpisode(std::uint64_t id, std::vector<Embedding> rows) {
  Episode e;
  e.id = id;
  e.task_id = "toy";
  e.encoder_id = "enc";
  e.trajectory.embeddings = std::move(rows);
  e.trajectory.actions.assign(e.trajectory.embeddings.size(), {0.0, 0.0});
  e.trajectory.intervention_flags.assign(e.trajectory.embeddings.size(), false);
  e.success = true;
  return e;
}

TEST(DemoBankTest, BuildRejectsEmptyAndMixedDimensions) {
  EXPECT_ERROR_CODE(DemoBank::Build({}, "enc"), ErrorCode::kDomain);
  std::vector<Episode> mixed = {MakeEpisode(0, {{1.0, 0.0}}),
                                MakeEpisode(1, {{1.0, 0.0, 0.0}})};
  EXPECT_ERROR_CODE(DemoBank::Build(mixed, "enc"), ErrorCode::kSchema);
  std::vector<Episode> empty_traj = {MakeEpisode(0, {})};
  EXPECT_ERROR_CODE(DemoBank::Build(empty_traj, "enc"), ErrorCode::kDomain);
}

TEST(DemoBankTest, PadsShortDemosWithTheirLastEmbedding) {
  const DemoBank bank = DemoBank::Build(
      {MakeEpisode(0, {{1.0, 0.0}, {0.0, 1.0}}),
       MakeEpisode(1, {{1.0, 1.0}, {2.0, 1.0}, {3.0, 1.0}, {4.0, 1.0}})},
      "enc");
  EXPECT_EQ(bank.size(), 2u);
  EXPECT_EQ(bank.l_max(), 4u);
  EXPECT_EQ(bank.dim(), 2u);
  const Matrix& p = bank.padded_embeddings()[0];
  ASSERT_EQ(p.rows(), 4u);
  for (std::size_t r = 1; r < 4; ++r) {
    EXPECT_EQ(p(r, 0), 0.0);
    EXPECT_EQ(p(r, 1), 1.0);
  }
  EXPECT_EQ(bank.unit_unpadded()[0].rows(), 2u);
  EXPECT_NEAR(bank.unit_padded()[1](2, 0), 3.0 / std::sqrt(10.0), 1e-15);
}

TEST(DemoBankTest, SingleDemoBank) {
  const DemoBank bank = DemoBank::Build({MakeEpisode(0, {{0.0, 1.0}})}, "enc");
  EXPECT_EQ(bank.size(), 1u);
  EXPECT_EQ(bank.l_max(), 1u);
}

TEST(DemoBankTest, SaveLoadRoundTripIsExact) {
  const FeatureEncoder encoder;
  const DemoBank bank = DemoBank::Build(
      GenerateExpertDemos("pour", 4, 77, encoder), encoder.id());
  const auto dir = testing::TempDir("bank_roundtrip");
  SaveBank(bank, dir / "pour.bank.jsonl");
  const DemoBank loaded = LoadBank(dir / "pour.bank.jsonl");
  EXPECT_TRUE(loaded == bank);
  EXPECT_EQ(loaded.l_max(), bank.l_max());
  SaveBank(loaded, dir / "again.jsonl");
  std::ifstream a(dir / "pour.bank.jsonl");
  std::ifstream b(dir / "again.jsonl");
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST(DemoBankTest, EncoderMismatchIsACompatibilityError) {
  const DemoBank bank = DemoBank::Build({MakeEpisode(0, {{0.0, 1.0}})}, "enc");
  EXPECT_NO_THROW(CheckEncoder(bank, "enc"));
  EXPECT_ERROR_CODE(CheckEncoder(bank, "other"), ErrorCode::kCompatibility);
}

TEST(DemoBankTest, LoadErrors) {
  const auto dir = testing::TempDir("bank_errors");
  EXPECT_ERROR_CODE(LoadBank(dir / "missing.jsonl"), ErrorCode::kIo);
  {
    std::ofstream out(dir / "empty.jsonl");
  }
  EXPECT_ERROR_CODE(LoadBank(dir / "empty.jsonl"), ErrorCode::kParse);
  {
    std::ofstream out(dir / "garbage.jsonl");
    out << "{not json\n";
  }
  EXPECT_ERROR_CODE(LoadBank(dir / "garbage.jsonl"), ErrorCode::kParse);
}

TEST(EpisodeJsonTest, RoundTripWithInjection) {
  Episode e = MakeEpisode(5, {{0.5, 0.25}, {0.125, 1.0}});
  e.success = false;
  e.injection = InjectionRecord{"drift", 3, 0.02};
  const Episode back = EpisodeFromJsonLine(EpisodeToJsonLine(e), 0);
  EXPECT_EQ(back, e);
  EXPECT_ERROR_CODE(EpisodeFromJsonLine("[1,2]", 7), ErrorCode::kParse);
}

TEST(TrajectoryTest, TruncateAndValidate) {
  Trajectory t = MakeEpisode(0, {{1.0}, {2.0}, {3.0}}).trajectory;
  t.TruncateTo(2);
  EXPECT_EQ(t.length(), 2u);
  EXPECT_EQ(t.actions.size(), 2u);
  EXPECT_ERROR_CODE(t.TruncateTo(5), ErrorCode::kIndex);
  t.actions.pop_back();
  EXPECT_ERROR_CODE(t.Validate(), ErrorCode::kSchema);
  Trajectory empty;
  EXPECT_ERROR_CODE(empty.Validate(), ErrorCode::kDomain);
}

}  // namespace
}  // namespace otfleet
