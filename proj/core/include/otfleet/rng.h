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

#ifndef OTFLEET_RNG_H_
#define OTFLEET_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace otfleet {

// Seeded generator with portable distributions. std::mt19937_64 output is
// fully specified by the standard; the std:: distributions are not, so the
// uniform and normal draws here are computed by hand to keep episode logs
// bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Standard normal via Box-Muller; the second variate is cached.
  double Normal();
  bool Bernoulli(double p) { return Uniform() < p; }
  // Uniform integer in [lo, hi].
  std::int64_t UniformInt(std::int64_t lo, std::int64_t hi);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t SplitMix64(std::uint64_t x);

// Per-component seed derivation: every consumer of randomness gets its own
// stream keyed by a label and an index, all flowing from one root seed.
std::uint64_t DeriveSeed(std::uint64_t root, std::string_view label,
                         std::uint64_t index = 0);

// FNV-1a, used for config hashes and seed labels.
std::uint64_t Fnv1a64(std::string_view bytes);

}  // namespace otfleet

#endif  // OTFLEET_RNG_H_
