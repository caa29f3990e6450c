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

#ifndef OTFLEET_DEMO_BANK_H_
#define OTFLEET_DEMO_BANK_H_

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "otfleet/matrix.h"
#include "otfleet/trajectory.h"

namespace otfleet {

inline constexpr int kEpisodeFormatVersion = 1;

// Expert demonstrations padded to a common length l_max by repeating each
// demo's final embedding. Immutable after construction.
class DemoBank {
 public:
  // Throws kDomain on an empty set, kSchema on mixed embedding dimensions.
  static DemoBank Build(std::vector<Episode> demos, std::string encoder_id);

  std::size_t size() const { return demos_.size(); }
  std::size_t l_max() const { return l_max_; }
  std::size_t dim() const { return dim_; }
  const std::string& encoder_id() const { return encoder_id_; }
  const std::vector<Episode>& demos() const { return demos_; }
  const std::vector<Matrix>& padded_embeddings() const { return padded_; }
  // Row-normalized copies used by the detector's cost computation.
  const std::vector<Matrix>& unit_padded() const { return unit_padded_; }
  const std::vector<Matrix>& unit_unpadded() const { return unit_unpadded_; }

  bool operator==(const DemoBank& other) const {
    return demos_ == other.demos_ && encoder_id_ == other.encoder_id_ &&
           padded_ == other.padded_ && l_max_ == other.l_max_;
  }

 private:
  std::vector<Episode> demos_;
  std::string encoder_id_;
  std::vector<Matrix> padded_;
  std::vector<Matrix> unit_padded_;
  std::vector<Matrix> unit_unpadded_;
  std::size_t l_max_ = 0;
  std::size_t dim_ = 0;
};

// Throws kCompatibility when the bank was produced by another encoder.
void CheckEncoder(const DemoBank& bank, std::string_view encoder_id);

// JSON Lines persistence. Line 1 is the manifest
// {version, N, dim, l_max, encoder_id}; each further line is one episode.
void SaveBank(const DemoBank& bank, const std::filesystem::path& path);
DemoBank LoadBank(const std::filesystem::path& path);

// Episode logs: one episode per line, no manifest.
std::string EpisodeToJsonLine(const Episode& episode);
// record_index is only used in error messages.
Episode EpisodeFromJsonLine(std::string_view line, std::size_t record_index);
void WriteEpisodes(const std::filesystem::path& path,
                   const std::vector<Episode>& episodes);
std::vector<Episode> ReadEpisodes(const std::filesystem::path& path);

}  // namespace otfleet

#endif  // OTFLEET_DEMO_BANK_H_
