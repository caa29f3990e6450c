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

#include "otfleet/experiment.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "otfleet/error.h"
#include "otfleet/rng.h"

namespace otfleet {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string_view CostKindName(CostKind kind) {
  return kind == CostKind::kCosineDistance ? "cosine_distance"
                                           : "shifted_cosine_similarity";
}

CostKind ParseCostKind(std::string_view name) {
  if (name == "cosine_distance") return CostKind::kCosineDistance;
  if (name == "shifted_cosine_similarity") {
    return CostKind::kShiftedCosineSimilarity;
  }
  throw Error(ErrorCode::kConfig, "unknown cost kind '" + std::string(name) + "'");
}

ordered_json SimJson(const SimConfig& s) {
  return ordered_json{
      {"max_speed", s.max_speed},
      {"rotation_speed", s.rotation_speed},
      {"pursuit_gain", s.pursuit_gain},
      {"rotation_gain", s.rotation_gain},
      {"grasp_radius", s.grasp_radius},
      {"release_fraction", s.release_fraction},
      {"demo_speed_factor", s.demo_speed_factor},
      {"demo_noise", s.demo_noise},
      {"demo_step_cap", s.demo_step_cap},
      {"fail_prob_at_zero_skill", s.fail_prob_at_zero_skill},
      {"onset_min", s.onset_min},
      {"onset_max", s.onset_max},
      {"drift_magnitude", s.drift_magnitude},
      {"overshoot_magnitude", s.overshoot_magnitude},
  };
}

// Reads j[key] into out when present and records the key as consumed.
class Reader {
 public:
  Reader(const ordered_json& j, std::string scope)
      : j_(j), scope_(std::move(scope)) {
    if (!j_.is_object()) {
      throw Error(ErrorCode::kConfig, scope_ + ": expected an object");
    }
  }

  template <typename T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kConfig, scope_ + "." + key + ": " + ex.what());
    }
  }

  const ordered_json* Child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void Finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw Error(ErrorCode::kConfig,
                    scope_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const ordered_json& j_;
  std::string scope_;
  std::set<std::string> seen_;
};

void ReadSim(const ordered_json& j, SimConfig& s) {
  Reader r(j, "sim");
  r.Get("max_speed", s.max_speed);
  r.Get("rotation_speed", s.rotation_speed);
  r.Get("pursuit_gain", s.pursuit_gain);
  r.Get("rotation_gain", s.rotation_gain);
  r.Get("grasp_radius", s.grasp_radius);
  r.Get("release_fraction", s.release_fraction);
  r.Get("demo_speed_factor", s.demo_speed_factor);
  r.Get("demo_noise", s.demo_noise);
  r.Get("demo_step_cap", s.demo_step_cap);
  r.Get("fail_prob_at_zero_skill", s.fail_prob_at_zero_skill);
  r.Get("onset_min", s.onset_min);
  r.Get("onset_max", s.onset_max);
  r.Get("drift_magnitude", s.drift_magnitude);
  r.Get("overshoot_magnitude", s.overshoot_magnitude);
  r.Finish();
}

void EnsureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo,
                "cannot create directory " + dir.string() + ": " + ec.message());
  }
}

void RefuseExisting(const fs::path& path, bool force) {
  if (!force && fs::exists(path)) {
    throw Error(ErrorCode::kIo,
                path.string() + " exists; pass --force to overwrite");
  }
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void WriteLines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const std::string& l : lines) text += l + "\n";
  WriteText(path, text);
}

void WriteConfig(const ExperimentConfig& config, const fs::path& dir) {
  ordered_json j;
  j["config_hash"] = config.Hash();
  j["config"] = config.ToJson();
  WriteText(dir / "config.json", j.dump(2) + "\n");
}

ScriptedPolicy NominalPolicy(const ExperimentConfig& config) {
  return ScriptedPolicy{1.0, config.policy_noise, SeedPlan{config.seed}.PolicyNoise()};
}

std::map<std::string, std::vector<Episode>> ReadTaskDir(
    const ExperimentConfig& config, const fs::path& dir,
    bool require_nonempty) {
  std::map<std::string, std::vector<Episode>> by_task;
  std::size_t total = 0;
  if (fs::is_directory(dir)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      for (Episode& e : ReadEpisodes(f)) {
        ++total;
        by_task[e.task_id].push_back(std::move(e));
      }
    }
  } else if (require_nonempty) {
    throw Error(ErrorCode::kEmptyInput,
                "rollout directory " + dir.string() + " does not exist");
  }
  if (require_nonempty && total == 0) {
    throw Error(ErrorCode::kEmptyInput,
                "no rollouts found in " + dir.string());
  }
  for (const auto& [task, eps] : by_task) {
    if (std::find(config.tasks.begin(), config.tasks.end(), task) ==
        config.tasks.end()) {
      throw Error(ErrorCode::kConfig,
                  "rollouts for task '" + task + "' not in the config");
    }
  }
  return by_task;
}

}  // namespace

std::vector<Episode> NominalRollouts(const ExperimentConfig& config,
                                     const TaskSpec& task, std::size_t l_max,
                                     const FeatureEncoder& encoder) {
  const SeedPlan seeds{config.seed};
  const ScriptedPolicy policy = NominalPolicy(config);
  std::vector<Episode> out;
  for (std::size_t k = 0; k < config.calibration_rollouts; ++k) {
    Episode e = RunScriptedEpisode(task, policy, std::nullopt,
                                   seeds.Calibration(task.id, k), l_max,
                                   encoder, config.sim);
    e.id = k;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Episode> InjectedRollouts(const ExperimentConfig& config,
                                      const TaskSpec& task, std::size_t l_max,
                                      const FeatureEncoder& encoder) {
  const SeedPlan seeds{config.seed};
  const ScriptedPolicy policy{config.rollout_skill, config.policy_noise,
                              seeds.PolicyNoise()};
  std::vector<Episode> out;
  for (std::size_t k = 0; k < config.rollouts_per_task; ++k) {
    Rng rng(seeds.RolloutInjection(task.id, k));
    const auto injection = SampleInjection(policy, rng, config.sim);
    Episode e = RunScriptedEpisode(task, policy, injection,
                                   seeds.RolloutEpisode(task.id, k), l_max,
                                   encoder, config.sim);
    e.id = k;
    out.push_back(std::move(e));
  }
  return out;
}

std::string_view RunModeName(RunMode mode) {
  return mode == RunMode::kLogical ? "logical" : "realtime";
}

RunMode ParseRunMode(std::string_view name) {
  if (name == "logical") return RunMode::kLogical;
  if (name == "realtime") return RunMode::kRealtime;
  throw Error(ErrorCode::kConfig, "unknown mode '" + std::string(name) + "'");
}

void ExperimentConfig::Validate() const {
  if (tasks.empty()) throw Error(ErrorCode::kConfig, "no tasks configured");
  std::set<std::string> unique;
  for (const std::string& t : tasks) {
    try {
      FindTask(t);
    } catch (const Error&) {
      throw Error(ErrorCode::kConfig, "unknown task '" + t + "'");
    }
    if (!unique.insert(t).second) {
      throw Error(ErrorCode::kConfig, "task '" + t + "' listed twice");
    }
  }
  if (num_demos == 0) throw Error(ErrorCode::kConfig, "num_demos must be >= 1");
  if (embedding_dim < 2) {
    throw Error(ErrorCode::kConfig, "embedding_dim must be >= 2");
  }
  if (!(encoder_clock_scale > 0.0)) {
    throw Error(ErrorCode::kConfig, "encoder_clock_scale must be positive");
  }
  detector.Validate();
  rewind.Validate();
  index.solver.Validate();
  if (!(rollout_skill >= 0.0 && rollout_skill <= 1.0) ||
      !(initial_skill >= 0.0 && initial_skill <= 1.0)) {
    throw Error(ErrorCode::kConfig, "skill must lie in [0, 1]");
  }
  if (num_robots < 1) throw Error(ErrorCode::kConfig, "num_robots must be >= 1");
  if (num_oracle_operators < 0) {
    throw Error(ErrorCode::kConfig, "num_oracle_operators must be >= 0");
  }
  if (rounds == 0) throw Error(ErrorCode::kConfig, "rounds must be >= 1");
  if (!(post_train.normalizer > 0.0) || post_train.gain < 0.0) {
    throw Error(ErrorCode::kConfig, "post_train needs gain >= 0, normalizer > 0");
  }
  if (realtime_period_ms < 0) {
    throw Error(ErrorCode::kConfig, "realtime_period_ms must be >= 0");
  }
  MakeFleetConfig(*this).Validate();
}

ordered_json ExperimentConfig::ToJson() const {
  ordered_json j;
  j["tasks"] = tasks;
  j["num_demos"] = num_demos;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["encoder"] = {{"dim", embedding_dim},
                  {"projection_seed", encoder_seed},
                  {"clock_scale", encoder_clock_scale}};
  j["detector"] = {
      {"delta", detector.delta},
      {"delta_step", detector.delta_step},
      {"delta_min", detector.delta_min},
      {"delta_max", detector.delta_max},
      {"warmup_min_successes", detector.warmup_min_successes},
      {"min_prefix_fraction", detector.min_prefix_fraction},
      {"stride", detector.stride},
      {"direction", DeltaDirectionName(detector.direction)},
      {"calibration", CalibrationModeName(detector.calibration)},
  };
  j["rewind"] = {{"epsilon", rewind.epsilon}};
  j["sinkhorn"] = {{"regularization", index.solver.regularization},
                   {"max_iterations", index.solver.max_iterations},
                   {"marginal_tolerance", index.solver.marginal_tolerance}};
  j["index"] = {{"cost_kind", CostKindName(index.cost_kind)},
                {"use_padding", index.use_padding},
                {"prune", index.prune}};
  j["sim"] = SimJson(sim);
  j["calibration_rollouts"] = calibration_rollouts;
  j["detect"] = {{"rollouts_per_task", rollouts_per_task},
                 {"skill", rollout_skill},
                 {"online_feedback", online_feedback}};
  j["fleet"] = {{"num_robots", num_robots},
                {"num_oracle_operators", num_oracle_operators},
                {"min_operator_steps", min_operator_steps},
                {"randomize_interleaving", randomize_interleaving},
                {"mode", RunModeName(mode)},
                {"realtime_period_ms", realtime_period_ms}};
  j["rounds"] = {{"count", rounds},
                 {"episodes_per_round", episodes_per_round},
                 {"initial_skill", initial_skill},
                 {"policy_noise", policy_noise},
                 {"post_train_gain", post_train.gain},
                 {"post_train_normalizer", post_train.normalizer}};
  return j;
}

ExperimentConfig ExperimentConfig::FromJson(const ordered_json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  r.Get("tasks", c.tasks);
  r.Get("num_demos", c.num_demos);
  r.Get("seed", c.seed);
  r.Get("output_dir", c.output_dir);
  r.Get("calibration_rollouts", c.calibration_rollouts);
  if (const auto* e = r.Child("encoder")) {
    Reader er(*e, "encoder");
    er.Get("dim", c.embedding_dim);
    er.Get("projection_seed", c.encoder_seed);
    er.Get("clock_scale", c.encoder_clock_scale);
    er.Finish();
  }
  if (const auto* d = r.Child("detector")) {
    Reader dr(*d, "detector");
    dr.Get("delta", c.detector.delta);
    dr.Get("delta_step", c.detector.delta_step);
    dr.Get("delta_min", c.detector.delta_min);
    dr.Get("delta_max", c.detector.delta_max);
    dr.Get("warmup_min_successes", c.detector.warmup_min_successes);
    dr.Get("min_prefix_fraction", c.detector.min_prefix_fraction);
    dr.Get("stride", c.detector.stride);
    std::string direction(DeltaDirectionName(c.detector.direction));
    std::string calibration(CalibrationModeName(c.detector.calibration));
    dr.Get("direction", direction);
    dr.Get("calibration", calibration);
    dr.Finish();
    try {
      c.detector.direction = ParseDeltaDirection(direction);
      c.detector.calibration = ParseCalibrationMode(calibration);
    } catch (const Error& ex) {
      throw Error(ErrorCode::kConfig, std::string("detector: ") + ex.what());
    }
  }
  if (const auto* w = r.Child("rewind")) {
    Reader wr(*w, "rewind");
    wr.Get("epsilon", c.rewind.epsilon);
    wr.Finish();
  }
  if (const auto* s = r.Child("sinkhorn")) {
    Reader sr(*s, "sinkhorn");
    sr.Get("regularization", c.index.solver.regularization);
    sr.Get("max_iterations", c.index.solver.max_iterations);
    sr.Get("marginal_tolerance", c.index.solver.marginal_tolerance);
    sr.Finish();
  }
  if (const auto* ix = r.Child("index")) {
    Reader ir(*ix, "index");
    std::string cost(CostKindName(c.index.cost_kind));
    ir.Get("cost_kind", cost);
    ir.Get("use_padding", c.index.use_padding);
    ir.Get("prune", c.index.prune);
    ir.Finish();
    c.index.cost_kind = ParseCostKind(cost);
  }
  if (const auto* s = r.Child("sim")) ReadSim(*s, c.sim);
  if (const auto* d = r.Child("detect")) {
    Reader dr(*d, "detect");
    dr.Get("rollouts_per_task", c.rollouts_per_task);
    dr.Get("skill", c.rollout_skill);
    dr.Get("online_feedback", c.online_feedback);
    dr.Finish();
  }
  if (const auto* f = r.Child("fleet")) {
    Reader fr(*f, "fleet");
    fr.Get("num_robots", c.num_robots);
    fr.Get("num_oracle_operators", c.num_oracle_operators);
    fr.Get("min_operator_steps", c.min_operator_steps);
    fr.Get("randomize_interleaving", c.randomize_interleaving);
    std::string mode(RunModeName(c.mode));
    fr.Get("mode", mode);
    fr.Get("realtime_period_ms", c.realtime_period_ms);
    fr.Finish();
    c.mode = ParseRunMode(mode);
  }
  if (const auto* rd = r.Child("rounds")) {
    Reader rr(*rd, "rounds");
    rr.Get("count", c.rounds);
    rr.Get("episodes_per_round", c.episodes_per_round);
    rr.Get("initial_skill", c.initial_skill);
    rr.Get("policy_noise", c.policy_noise);
    rr.Get("post_train_gain", c.post_train.gain);
    rr.Get("post_train_normalizer", c.post_train.normalizer);
    rr.Finish();
  }
  r.Finish();
  c.Validate();
  return c;
}

ExperimentConfig ExperimentConfig::Load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  ordered_json j;
  try {
    j = ordered_json::parse(ss.str());
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParse, path.string() + ": " + ex.what());
  }
  return FromJson(j);
}

std::string ExperimentConfig::Hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a64(ToJson().dump())));
  return buf;
}

std::uint64_t SeedPlan::Demos(std::string_view task) const {
  return DeriveSeed(root, "demos/" + std::string(task));
}

std::uint64_t SeedPlan::Calibration(std::string_view task,
                                    std::size_t k) const {
  return DeriveSeed(root, "calibration/" + std::string(task), k);
}

std::uint64_t SeedPlan::RolloutInjection(std::string_view task,
                                         std::size_t k) const {
  return DeriveSeed(root, "rollout-injection/" + std::string(task), k);
}

std::uint64_t SeedPlan::RolloutEpisode(std::string_view task,
                                       std::size_t k) const {
  return DeriveSeed(root, "rollout/" + std::string(task), k);
}

std::uint64_t SeedPlan::PolicyNoise() const {
  return DeriveSeed(root, "policy");
}

std::uint64_t SeedPlan::Fleet() const { return DeriveSeed(root, "fleet"); }

FeatureEncoder MakeEncoder(const ExperimentConfig& config) {
  return FeatureEncoder(config.encoder_seed, config.embedding_dim,
                        config.encoder_clock_scale);
}

fs::path Layout::BankFile(std::string_view task) const {
  return banks() / (std::string(task) + ".bank.jsonl");
}

fs::path Layout::RolloutFile(std::string_view task) const {
  return rollouts() / (std::string(task) + ".jsonl");
}

fs::path Layout::CalibrationFile(std::string_view task) const {
  return calibration() / (std::string(task) + ".jsonl");
}

std::vector<BankSummary> GenerateDemoBanks(const ExperimentConfig& config,
                                           const fs::path& out, bool force) {
  config.Validate();
  const Layout layout{out};
  for (const std::string& task : config.tasks) {
    RefuseExisting(layout.BankFile(task), force);
  }
  EnsureDir(layout.banks());
  const FeatureEncoder encoder = MakeEncoder(config);
  const SeedPlan seeds{config.seed};
  std::vector<BankSummary> summaries;
  for (const std::string& task : config.tasks) {
    DemoBank bank = DemoBank::Build(
        GenerateExpertDemos(task, config.num_demos, seeds.Demos(task), encoder,
                            config.sim),
        encoder.id());
    SaveBank(bank, layout.BankFile(task));
    summaries.push_back({task, bank.size(), bank.l_max()});
  }
  WriteConfig(config, layout.banks());
  return summaries;
}

std::map<std::string, std::shared_ptr<const DemoBank>> LoadBanks(
    const ExperimentConfig& config, const fs::path& out) {
  const Layout layout{out};
  const FeatureEncoder encoder = MakeEncoder(config);
  std::map<std::string, std::shared_ptr<const DemoBank>> banks;
  for (const std::string& task : config.tasks) {
    auto bank = std::make_shared<const DemoBank>(LoadBank(layout.BankFile(task)));
    CheckEncoder(*bank, encoder.id());
    banks[task] = std::move(bank);
  }
  return banks;
}

void GenerateRollouts(const ExperimentConfig& config, const fs::path& out,
                      bool force) {
  config.Validate();
  const Layout layout{out};
  for (const std::string& task : config.tasks) {
    RefuseExisting(layout.RolloutFile(task), force);
    RefuseExisting(layout.CalibrationFile(task), force);
  }
  const auto banks = LoadBanks(config, out);
  const FeatureEncoder encoder = MakeEncoder(config);
  EnsureDir(layout.rollouts());
  EnsureDir(layout.calibration());
  for (const std::string& task : config.tasks) {
    const TaskSpec& spec = FindTask(task);
    const std::size_t l_max = banks.at(task)->l_max();
    WriteEpisodes(layout.CalibrationFile(task),
                  NominalRollouts(config, spec, l_max, encoder));
    WriteEpisodes(layout.RolloutFile(task),
                  InjectedRollouts(config, spec, l_max, encoder));
  }
  WriteConfig(config, layout.rollouts());
}

std::shared_ptr<DetectorState> CalibratedDetector(
    const ExperimentConfig& config, const DemoBank& bank,
    const std::vector<Episode>& calibration) {
  auto detector = std::make_shared<DetectorState>(config.detector);
  for (const Episode& e : calibration) {
    CheckEncoder(bank, e.encoder_id);
    if (!e.success.value_or(false)) continue;
    const auto trace = EvaluatePrefixes(e.trajectory.embeddings, bank,
                                        config.index, config.detector.stride);
    detector->RecordSuccess(trace.back(), trace);
  }
  return detector;
}

EpisodeOutcome OfflineOutcome(const Episode& episode,
                              std::vector<std::size_t> warnings) {
  EpisodeOutcome o;
  o.episode_id = episode.id;
  o.steps_total = episode.trajectory.length();
  for (bool f : episode.trajectory.intervention_flags) {
    o.steps_intervened += f ? 1 : 0;
  }
  if (!episode.success.has_value()) {
    throw Error(ErrorCode::kSchema, "episode " + std::to_string(episode.id) +
                                        " has no success label");
  }
  o.failure = !*episode.success;
  if (o.failure) {
    std::size_t onset = o.steps_total;
    if (episode.injection.has_value()) {
      onset = std::min<std::size_t>(
          static_cast<std::size_t>(std::max(episode.injection->onset, 1)),
          o.steps_total);
    }
    o.failure_onset = onset;
  }
  std::sort(warnings.begin(), warnings.end());
  o.warnings = std::move(warnings);
  return o;
}

DetectionResult RunDetection(
    const ExperimentConfig& config,
    const std::map<std::string, std::shared_ptr<const DemoBank>>& banks,
    const std::map<std::string, std::vector<Episode>>& calibration,
    const std::map<std::string, std::vector<Episode>>& rollouts) {
  std::size_t total = 0;
  for (const auto& [task, eps] : rollouts) total += eps.size();
  if (total == 0) {
    throw Error(ErrorCode::kEmptyInput, "detection: no rollouts to replay");
  }
  DetectionResult result;
  for (const std::string& task : config.tasks) {
    auto it = rollouts.find(task);
    if (it == rollouts.end() || it->second.empty()) continue;
    const DemoBank& bank = *banks.at(task);
    static const std::vector<Episode> kNone;
    auto cal = calibration.find(task);
    auto detector = CalibratedDetector(
        config, bank, cal == calibration.end() ? kNone : cal->second);

    std::vector<const Episode*> ordered;
    for (const Episode& e : it->second) ordered.push_back(&e);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const Episode* a, const Episode* b) { return a->id < b->id; });

    TaskDetection td;
    td.task_id = task;
    for (const Episode* e : ordered) {
      CheckEncoder(bank, e->encoder_id);
      const auto trace = EvaluatePrefixes(e->trajectory.embeddings, bank,
                                          config.index, config.detector.stride);
      std::vector<std::size_t> warnings;
      for (const FailureIndex& fi : trace) {
        const Decision d = detector->Check(fi, bank.l_max());
        if (d == Decision::kRaise) warnings.push_back(fi.prefix_len);
        ordered_json rec;
        rec["task_id"] = task;
        rec["episode_id"] = e->id;
        rec["t0"] = fi.prefix_len;
        rec["lambda"] = fi.value;
        rec["nearest_demo"] = fi.nearest_demo;
        const auto thr = detector->ThresholdAt(fi.prefix_len);
        rec["threshold"] = thr.has_value() ? ordered_json(*thr) : ordered_json();
        rec["delta"] = detector->delta();
        rec["decision"] = DecisionName(d);
        result.step_log.push_back(rec.dump());
      }
      EpisodeOutcome outcome = OfflineOutcome(*e, warnings);
      if (config.online_feedback) {
        if (!outcome.failure) {
          if (!warnings.empty()) detector->UpdateDelta(DetectorEvent::kFalseAlarm);
          detector->RecordSuccess(trace.back(), trace);
        } else if (warnings.empty()) {
          detector->UpdateDelta(DetectorEvent::kMissedFailure);
        }
      }
      td.outcomes.push_back(outcome);
      result.outcomes.push_back(std::move(outcome));
    }
    td.report = ComputeReport(td.outcomes);
    td.final_delta = detector->delta();
    result.tasks.push_back(std::move(td));
  }
  result.report = ComputeReport(result.outcomes);
  return result;
}

DetectionResult DetectCommand(const ExperimentConfig& config,
                              const fs::path& out,
                              const fs::path& rollout_dir) {
  config.Validate();
  const Layout layout{out};
  const auto banks = LoadBanks(config, out);
  const auto rollouts = ReadTaskDir(config, rollout_dir, true);
  const auto calibration = ReadTaskDir(config, layout.calibration(), false);
  DetectionResult result = RunDetection(config, banks, calibration, rollouts);

  EnsureDir(layout.detect());
  WriteConfig(config, layout.detect());
  WriteLines(layout.detect() / "step_log.jsonl", result.step_log);
  const ReportProvenance prov{"detect", config.Hash(), config.seed};
  EmitReport(result.report, prov, layout.detect() / "report.json",
             ReportFormat::kJson);
  EmitReport(result.report, prov, layout.detect() / "report.csv",
             ReportFormat::kCsv);
  for (const TaskDetection& td : result.tasks) {
    const ReportProvenance tp{"detect/" + td.task_id, config.Hash(), config.seed};
    EmitReport(td.report, tp, layout.detect() / (td.task_id + ".report.json"),
               ReportFormat::kJson);
  }
  return result;
}

FleetConfig MakeFleetConfig(const ExperimentConfig& config) {
  FleetConfig fc;
  fc.num_robots = config.num_robots;
  fc.num_oracle_operators = config.num_oracle_operators;
  fc.tasks = config.tasks;
  fc.episode_budget = config.episodes_per_round;
  fc.seed = SeedPlan{config.seed}.Fleet();
  fc.randomize_interleaving = config.randomize_interleaving;
  fc.min_operator_steps = config.min_operator_steps;
  fc.rewind = config.rewind;
  fc.index = config.index;
  fc.sim = config.sim;
  return fc;
}

std::map<std::string, TaskResources> BuildFleetResources(
    const ExperimentConfig& config,
    const std::map<std::string, std::shared_ptr<const DemoBank>>& banks) {
  const FeatureEncoder encoder = MakeEncoder(config);
  std::map<std::string, TaskResources> resources;
  for (const std::string& task : config.tasks) {
    const auto& bank = banks.at(task);
    const auto calibration =
        NominalRollouts(config, FindTask(task), bank->l_max(), encoder);
    resources[task] = {bank, CalibratedDetector(config, *bank, calibration)};
  }
  return resources;
}

FleetRunResult RunFleetRounds(
    const ExperimentConfig& config,
    const std::map<std::string, std::shared_ptr<const DemoBank>>& banks) {
  config.Validate();
  const FeatureEncoder encoder = MakeEncoder(config);
  const auto resources = BuildFleetResources(config, banks);
  ScriptedPolicy policy{config.initial_skill, config.policy_noise,
                        SeedPlan{config.seed}.PolicyNoise()};
  FleetRunResult out;
  for (std::size_t round = 0; round < config.rounds; ++round) {
    RoundResult rr;
    rr.round = round + 1;
    rr.skill = policy.skill;
    Fleet fleet(MakeFleetConfig(config), resources, encoder, policy);
    if (config.mode == RunMode::kLogical) {
      rr.fleet = fleet.RunLogical();
    } else {
      fleet.StartRealtime(std::chrono::milliseconds(config.realtime_period_ms));
      while (!fleet.Done()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      }
      fleet.StopRealtime();
      rr.fleet = fleet.Result();
    }
    rr.outcomes = OutcomesFromEvents(rr.fleet.events);
    rr.report = ComputeReport(rr.outcomes);
    out.table.push_back({rr.round, rr.skill, rr.outcomes.size(),
                         rr.report.success_rate, rr.report.intervention_rate,
                         rr.report.episode_intervention_rate});
    policy = PostTrain(policy, rr.fleet.buffer, config.post_train);
    out.rounds.push_back(std::move(rr));
  }
  return out;
}

FleetRunResult RunFleetCommand(const ExperimentConfig& config,
                               const fs::path& out) {
  const auto banks = LoadBanks(config, out);
  FleetRunResult result = RunFleetRounds(config, banks);
  const Layout layout{out};
  EnsureDir(layout.fleet());
  WriteConfig(config, layout.fleet());
  const std::string hash = config.Hash();
  for (const RoundResult& rr : result.rounds) {
    const fs::path dir = layout.fleet() / ("round" + std::to_string(rr.round));
    EnsureDir(dir);
    std::vector<std::string> events;
    for (const FleetEvent& e : rr.fleet.events) events.push_back(e.ToJsonLine());
    WriteLines(dir / "events.jsonl", events);
    WriteLines(dir / "detector_log.jsonl", rr.fleet.detector_log);
    WriteEpisodes(dir / "buffer.jsonl", rr.fleet.buffer);
    const ReportProvenance prov{"round" + std::to_string(rr.round), hash,
                                config.seed};
    EmitReport(rr.report, prov, dir / "report.json", ReportFormat::kJson);
    EmitReport(rr.report, prov, dir / "report.csv", ReportFormat::kCsv);
  }
  WriteText(layout.fleet() / "rounds.csv",
            RenderRoundTable(result.table, {"rounds", hash, config.seed}));
  return result;
}

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kDomain:
      return 2;
    case ErrorCode::kCompatibility:
    case ErrorCode::kSchema:
      return 3;
    case ErrorCode::kIo:
    case ErrorCode::kParse:
      return 4;
    case ErrorCode::kProtocol:
      return 5;
    case ErrorCode::kEmptyInput:
      return 6;
    case ErrorCode::kDeadlock:
      return 7;
    case ErrorCode::kSize:
    case ErrorCode::kIndex:
    case ErrorCode::kSolver:
      return 8;
  }
  return 1;
}

}  // namespace otfleet
