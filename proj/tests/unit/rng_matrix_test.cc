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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "otfleet/matrix.h"
#include "otfleet/rng.h"
#include "unit/test_util.h"

namespace otfleet {
namespace {

TEST(Fnv1a64Test, KnownVectors) {
  EXPECT_EQ(Fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(Fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(Fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.Uniform(), b.Uniform());
    ASSERT_EQ(a.Normal(), b.Normal());
  }
}

TEST(RngTest, UniformStaysInRange) {
  Rng rng(7);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.Uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(RngTest, NormalMoments) {
  Rng rng(9);
  double s = 0.0;
  double s2 = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.Normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(RngTest, UniformIntCoversClosedRange) {
  Rng rng(3);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.UniformInt(4, 9);
    ASSERT_GE(v, 4);
    ASSERT_LE(v, 9);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(DeriveSeedTest, LabelsAndIndicesSeparateStreams) {
  std::set<std::uint64_t> seeds;
  for (const char* label : {"demos/pour", "demos/hang", "fleet", "policy"}) {
    for (std::uint64_t k = 0; k < 50; ++k) seeds.insert(DeriveSeed(1, label, k));
  }
  EXPECT_EQ(seeds.size(), 200u);
  EXPECT_EQ(DeriveSeed(5, "x", 3), DeriveSeed(5, "x", 3));
  EXPECT_NE(DeriveSeed(5, "x", 3), DeriveSeed(6, "x", 3));
}

TEST(MatrixTest, RowAndColumnSums) {
  Matrix m(2, 3, 0.0);
  m(0, 0) = 1.0;
  m(0, 2) = 2.0;
  m(1, 1) = 4.0;
  EXPECT_DOUBLE_EQ(m.RowSum(0), 3.0);
  EXPECT_DOUBLE_EQ(m.RowSum(1), 4.0);
  EXPECT_DOUBLE_EQ(m.ColSum(1), 4.0);
  EXPECT_DOUBLE_EQ(m.ColSum(2), 2.0);
  EXPECT_EQ(m.row(1)[1], 4.0);
}

}  // namespace
}  // namespace otfleet
