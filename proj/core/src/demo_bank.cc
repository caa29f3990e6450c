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

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "otfleet/error.h"

namespace otfleet {
namespace {

using nlohmann::json;

Matrix UnitRows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double norm = 0.0;
    for (double v : out.row(r)) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) {
      throw Error(ErrorCode::kDomain,
                  "embedding row " + std::to_string(r) + " has zero norm");
    }
    for (double& v : out.row(r)) v /= norm;
  }
  return out;
}

json StateToJson(const WorldState& s) {
  json objects = json::array();
  for (const auto& o : s.objects) objects.push_back({o.x, o.y, o.theta});
  return {{"effector", {s.effector[0], s.effector[1]}},
          {"objects", objects},
          {"held", s.held},
          {"clock", s.clock},
          {"clamped", s.clamped}};
}

WorldState StateFromJson(const json& j, const GoalSpec& goal) {
  WorldState s;
  s.effector = {j.at("effector").at(0).get<double>(),
                j.at("effector").at(1).get<double>()};
  const auto& objects = j.at("objects");
  if (objects.size() != kNumObjects) {
    throw Error(ErrorCode::kSchema, "state must list " +
                                        std::to_string(kNumObjects) + " objects");
  }
  for (std::size_t k = 0; k < kNumObjects; ++k) {
    s.objects[k] = {objects[k].at(0).get<double>(), objects[k].at(1).get<double>(),
                    objects[k].at(2).get<double>()};
  }
  s.held = j.at("held").get<int>();
  s.clock = j.at("clock").get<int>();
  s.clamped = j.at("clamped").get<bool>();
  s.goal = goal;
  return s;
}

json GoalToJson(const GoalSpec& g) {
  return {{"object", g.object},
          {"x", g.x},
          {"y", g.y},
          {"theta", g.theta},
          {"check_theta", g.check_theta},
          {"position_tolerance", g.position_tolerance},
          {"angle_tolerance", g.angle_tolerance}};
}

GoalSpec GoalFromJson(const json& j) {
  GoalSpec g;
  g.object = j.at("object").get<int>();
  g.x = j.at("x").get<double>();
  g.y = j.at("y").get<double>();
  g.theta = j.at("theta").get<double>();
  g.check_theta = j.at("check_theta").get<bool>();
  g.position_tolerance = j.at("position_tolerance").get<double>();
  g.angle_tolerance = j.at("angle_tolerance").get<double>();
  return g;
}

std::ofstream OpenForWrite(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream OpenForRead(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for reading");
  return in;
}

}  // namespace

void Trajectory::TruncateTo(std::size_t t) {
  if (t > length()) {
    throw Error(ErrorCode::kIndex, "cannot truncate trajectory of length " +
                                       std::to_string(length()) + " to " +
                                       std::to_string(t));
  }
  embeddings.resize(t);
  actions.resize(t);
  intervention_flags.resize(t);
  if (!states.empty()) states.resize(t);
}

void Trajectory::Validate() const {
  if (embeddings.empty()) throw Error(ErrorCode::kDomain, "trajectory is empty");
  const std::size_t l = embeddings.size();
  if (actions.size() != l || intervention_flags.size() != l ||
      (!states.empty() && states.size() != l)) {
    throw Error(ErrorCode::kSchema, "trajectory fields have unequal lengths");
  }
  const std::size_t d = embeddings.front().size();
  if (d == 0) throw Error(ErrorCode::kSchema, "embedding dimension is zero");
  for (const auto& e : embeddings) {
    if (e.size() != d) {
      throw Error(ErrorCode::kSchema, "trajectory mixes embedding dimensions");
    }
  }
}

DemoBank DemoBank::Build(std::vector<Episode> demos, std::string encoder_id) {
  if (demos.empty()) throw Error(ErrorCode::kDomain, "demo bank needs at least one demo");
  DemoBank bank;
  bank.dim_ = demos.front().trajectory.dim();
  for (std::size_t n = 0; n < demos.size(); ++n) {
    const Trajectory& t = demos[n].trajectory;
    t.Validate();
    if (t.dim() != bank.dim_) {
      throw Error(ErrorCode::kSchema, "demo " + std::to_string(n) +
                                          " has embedding dimension " +
                                          std::to_string(t.dim()) + ", expected " +
                                          std::to_string(bank.dim_));
    }
    bank.l_max_ = std::max(bank.l_max_, t.length());
  }
  for (const Episode& demo : demos) {
    const auto& emb = demo.trajectory.embeddings;
    Matrix padded(bank.l_max_, bank.dim_);
    Matrix raw(emb.size(), bank.dim_);
    for (std::size_t t = 0; t < bank.l_max_; ++t) {
      const Embedding& src = emb[std::min(t, emb.size() - 1)];
      std::copy(src.begin(), src.end(), padded.row(t).begin());
      if (t < emb.size()) std::copy(src.begin(), src.end(), raw.row(t).begin());
    }
    bank.unit_padded_.push_back(UnitRows(padded));
    bank.unit_unpadded_.push_back(UnitRows(raw));
    bank.padded_.push_back(std::move(padded));
  }
  bank.demos_ = std::move(demos);
  bank.encoder_id_ = std::move(encoder_id);
  return bank;
}

void CheckEncoder(const DemoBank& bank, std::string_view encoder_id) {
  if (bank.encoder_id() != encoder_id) {
    throw Error(ErrorCode::kCompatibility,
                "bank encoder '" + bank.encoder_id() + "' does not match '" +
                    std::string(encoder_id) + "'");
  }
}

std::string EpisodeToJsonLine(const Episode& episode) {
  const Trajectory& t = episode.trajectory;
  json j;
  j["id"] = episode.id;
  j["task_id"] = episode.task_id;
  j["encoder_id"] = episode.encoder_id;
  j["length"] = t.length();
  j["embeddings"] = t.embeddings;
  j["actions"] = t.actions;
  j["intervention_flags"] = t.intervention_flags;
  if (!t.states.empty()) {
    j["goal"] = GoalToJson(t.states.front().goal);
    json states = json::array();
    for (const auto& s : t.states) states.push_back(StateToJson(s));
    j["states"] = std::move(states);
  }
  if (episode.success.has_value()) j["success"] = *episode.success;
  if (episode.success.has_value() || episode.injection.has_value()) {
    if (episode.injection.has_value()) {
      j["injection"] = {{"mode", episode.injection->mode},
                        {"onset", episode.injection->onset},
                        {"magnitude", episode.injection->magnitude}};
    } else {
      j["injection"] = nullptr;
    }
  }
  return j.dump();
}

Episode EpisodeFromJsonLine(std::string_view line, std::size_t record_index) {
  const std::string where = "record " + std::to_string(record_index);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, where + ": " + e.what());
  }
  Episode episode;
  try {
    episode.id = j.at("id").get<std::uint64_t>();
    episode.task_id = j.value("task_id", "");
    episode.encoder_id = j.value("encoder_id", "");
    Trajectory& t = episode.trajectory;
    t.embeddings = j.at("embeddings").get<std::vector<Embedding>>();
    t.actions = j.at("actions").get<std::vector<std::vector<double>>>();
    t.intervention_flags = j.at("intervention_flags").get<std::vector<bool>>();
    if (j.contains("states")) {
      const GoalSpec goal = GoalFromJson(j.at("goal"));
      for (const auto& s : j.at("states")) t.states.push_back(StateFromJson(s, goal));
    }
    if (j.at("length").get<std::size_t>() != t.length()) {
      throw Error(ErrorCode::kParse, where + ": length field disagrees with data");
    }
    if (j.contains("success")) episode.success = j.at("success").get<bool>();
    if (j.contains("injection") && !j.at("injection").is_null()) {
      const auto& inj = j.at("injection");
      episode.injection = InjectionRecord{inj.at("mode").get<std::string>(),
                                          inj.at("onset").get<int>(),
                                          inj.at("magnitude").get<double>()};
    }
    t.Validate();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, where + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParse) throw;
    throw Error(ErrorCode::kParse, where + ": " + e.what());
  }
  return episode;
}

void WriteEpisodes(const std::filesystem::path& path,
                   const std::vector<Episode>& episodes) {
  auto out = OpenForWrite(path);
  for (const Episode& e : episodes) out << EpisodeToJsonLine(e) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<Episode> ReadEpisodes(const std::filesystem::path& path) {
  auto in = OpenForRead(path);
  std::vector<Episode> episodes;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    episodes.push_back(EpisodeFromJsonLine(line, record++));
  }
  return episodes;
}

void SaveBank(const DemoBank& bank, const std::filesystem::path& path) {
  auto out = OpenForWrite(path);
  json manifest = {{"version", kEpisodeFormatVersion},
                   {"N", bank.size()},
                   {"dim", bank.dim()},
                   {"l_max", bank.l_max()},
                   {"encoder_id", bank.encoder_id()}};
  out << manifest.dump() << '\n';
  for (const Episode& e : bank.demos()) out << EpisodeToJsonLine(e) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

DemoBank LoadBank(const std::filesystem::path& path) {
  auto in = OpenForRead(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::kParse, path.string() + ": missing manifest line");
  }
  json manifest;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::size_t l_max = 0;
  std::string encoder_id;
  try {
    manifest = json::parse(line);
    if (manifest.at("version").get<int>() != kEpisodeFormatVersion) {
      throw Error(ErrorCode::kParse, "unsupported bank version");
    }
    n = manifest.at("N").get<std::size_t>();
    dim = manifest.at("dim").get<std::size_t>();
    l_max = manifest.at("l_max").get<std::size_t>();
    encoder_id = manifest.at("encoder_id").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": manifest: " + e.what());
  }
  std::vector<Episode> demos;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    demos.push_back(EpisodeFromJsonLine(line, record++));
  }
  if (demos.size() != n) {
    throw Error(ErrorCode::kParse, path.string() + ": manifest promises " +
                                       std::to_string(n) + " episodes, found " +
                                       std::to_string(demos.size()));
  }
  DemoBank bank = DemoBank::Build(std::move(demos), encoder_id);
  if (bank.dim() != dim || bank.l_max() != l_max) {
    throw Error(ErrorCode::kParse, path.string() + ": manifest dim/l_max disagree with episodes");
  }
  return bank;
}

}  // namespace otfleet
