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

// Online failure detection against an expert bank: the OT-based failure
// index, quantile threshold calibration with adaptive sensitivity, and
// rewind-target search.

#ifndef OTFLEET_FAILURE_DETECTOR_H_
#define OTFLEET_FAILURE_DETECTOR_H_

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "otfleet/demo_bank.h"
#include "otfleet/ot.h"

namespace otfleet {

struct FailureIndex {
  double value = 0.0;
  std::size_t nearest_demo = 0;
  std::size_t prefix_len = 0;

  bool operator==(const FailureIndex&) const = default;
};

struct FailureIndexOptions {
  SinkhornConfig solver;
  CostKind cost_kind = CostKind::kCosineDistance;
  // Match against demos padded to l_max (the production setting). When false
  // each demo is used at its own length.
  bool use_padding = true;
  // Skip demos whose transport lower bound cannot beat the running minimum.
  // Never changes the result.
  bool prune = true;
};

// Min over bank demos of the transport cost between demo and prefix. Ties go
// to the lowest demo index. Throws kDomain on an empty prefix and kSchema on
// a dimension mismatch.
FailureIndex ComputeFailureIndex(std::span<const Embedding> prefix,
                                 const DemoBank& bank,
                                 const FailureIndexOptions& options = {});

// Same, using a prefix whose rows are already unit-normalized.
FailureIndex ComputeFailureIndexUnit(std::span<const Embedding> unit_prefix,
                                     const DemoBank& bank,
                                     const FailureIndexOptions& options);

// Indices of every prefix whose length is a multiple of stride, plus the full
// trajectory when its length is not.
std::vector<FailureIndex> EvaluatePrefixes(std::span<const Embedding> trajectory,
                                           const DemoBank& bank,
                                           const FailureIndexOptions& options,
                                           std::size_t stride);

std::vector<Embedding> NormalizeRows(std::span<const Embedding> rows);

// Quantile with linear interpolation between order statistics (the "type 7"
// definition: h = (M - 1) q). Throws kEmptyInput on empty input and kDomain
// when q is outside [0, 1].
double Quantile(std::span<const double> values, double q);

enum class DeltaDirection {
  // Missed failure makes the detector more sensitive (delta up).
  kSensitivityCorrecting,
  // Missed failure lowers delta, false alarm raises it.
  kLiteral,
};

enum class CalibrationMode {
  // Threshold from the final index of each successful rollout.
  kFinalIndex,
  // Threshold at prefix length t from each successful rollout's index at the
  // same prefix length (its final index if it ended earlier).
  kPrefixAligned,
  // Simultaneous band: each successful rollout scores its worst ratio to the
  // prefix-aligned median curve; the threshold at t is the median at t times
  // the quantile of those scores.
  kPrefixBand,
};

enum class DetectorEvent { kMissedFailure, kFalseAlarm };

std::string_view CalibrationModeName(CalibrationMode mode);
CalibrationMode ParseCalibrationMode(std::string_view name);
std::string_view DeltaDirectionName(DeltaDirection direction);
DeltaDirection ParseDeltaDirection(std::string_view name);

struct DetectorConfig {
  double delta = 10.0;  // percent
  double delta_step = 2.5;
  double delta_min = 0.5;
  double delta_max = 50.0;
  std::size_t warmup_min_successes = 5;
  double min_prefix_fraction = 0.25;
  std::size_t stride = 4;
  DeltaDirection direction = DeltaDirection::kSensitivityCorrecting;
  CalibrationMode calibration = CalibrationMode::kPrefixBand;

  void Validate() const;
};

enum class Decision { kSilent, kRaise, kWarmingUp };

std::string_view DecisionName(Decision decision);

// Ordered record of the indices evaluated so far in one live rollout.
class PrefixIndexCache {
 public:
  // Throws kDomain unless prefix_len exceeds the last cached one.
  void Append(const FailureIndex& index);
  // Drops entries past prefix length t.
  void TruncateTo(std::size_t t);
  void Clear() { entries_.clear(); }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const FailureIndex& back() const { return entries_.back(); }
  std::span<const FailureIndex> entries() const { return entries_; }

 private:
  std::vector<FailureIndex> entries_;
};

// Calibration data shared by every robot of a fleet. Not thread-safe; the
// owner serializes writes.
class DetectorState {
 public:
  explicit DetectorState(DetectorConfig config = {});

  const DetectorConfig& config() const { return config_; }
  double delta() const { return delta_; }
  bool calibrated() const {
    return success_final_.size() >= config_.warmup_min_successes;
  }
  std::size_t num_successes() const { return success_final_.size(); }
  std::span<const double> success_indices() const { return success_final_; }

  // Quantile of the final success indices, or nullopt while warming up.
  std::optional<double> threshold() const { return threshold_; }
  // Threshold in force for a prefix of the given length.
  std::optional<double> ThresholdAt(std::size_t prefix_len) const;

  // Recomputes and stores the threshold. Nullopt while warming up.
  std::optional<double> Calibrate();

  // RAISE iff calibrated, prefix_len >= min_prefix_fraction * l_max and the
  // index strictly exceeds the threshold.
  Decision Check(const FailureIndex& index, std::size_t l_max) const;

  void UpdateDelta(DetectorEvent event);

  // trace holds the rollout's evaluated prefixes; only its final entry
  // matters in kFinalIndex mode. final_index is appended to the final set.
  void RecordSuccess(const FailureIndex& final_index,
                     std::span<const FailureIndex> trace = {});

 private:
  DetectorConfig config_;
  double delta_;
  std::optional<double> threshold_;
  std::vector<double> success_final_;
  std::vector<std::vector<FailureIndex>> success_traces_;
  std::vector<double> band_scores_;

  std::vector<double> AlignedAt(std::size_t prefix_len) const;
  void RefreshBand();
};

struct RewindConfig {
  double epsilon = 0.2;
  void Validate() const;
};

// Largest cached t <= t0 with index(t) <= epsilon * index(t0), else 1. The
// cache must hold an entry at t0. Throws kDomain on an empty cache or a
// missing t0 entry.
std::size_t RewindTarget(std::span<const FailureIndex> cache, std::size_t t0,
                         const RewindConfig& config = {});

struct DetectorLogRecord {
  int robot_id = 0;
  std::size_t t0 = 0;
  double lambda = 0.0;
  std::size_t nearest_demo = 0;
  std::optional<double> threshold;
  double delta = 0.0;
  Decision decision = Decision::kSilent;
};

std::string DetectorLogLine(const DetectorLogRecord& record);

// Asynchronous index evaluation. Requests carry the robot, its rewind epoch
// and t0; replies for an older epoch, or not newer than the last delivered
// t0, are dropped.
struct EvalRequest {
  int robot_id = 0;
  std::uint64_t epoch = 0;
  std::size_t t0 = 0;
  std::vector<Embedding> prefix;
};

struct EvalReply {
  int robot_id = 0;
  std::uint64_t epoch = 0;
  FailureIndex index;
};

class EvaluationChannel {
 public:
  // threaded = false evaluates on Submit; the reply is visible on the next
  // Poll. threaded = true evaluates on a worker thread.
  EvaluationChannel(const std::vector<const DemoBank*>& banks_by_robot,
                    FailureIndexOptions options, bool threaded);
  ~EvaluationChannel();
  EvaluationChannel(const EvaluationChannel&) = delete;
  EvaluationChannel& operator=(const EvaluationChannel&) = delete;

  void Submit(EvalRequest request);
  // Invalidates outstanding work for the robot and moves it to a new epoch.
  void Reset(int robot_id, std::uint64_t epoch);
  // Fresh replies for the robot, oldest first.
  std::vector<EvalReply> Poll(int robot_id);
  // Blocks until every submitted request has been evaluated.
  void Drain();

 private:
  struct RobotSlot {
    std::uint64_t epoch = 0;
    std::size_t last_delivered = 0;
    std::vector<EvalReply> ready;
  };
  void Evaluate(const EvalRequest& request);
  void WorkerLoop();

  std::vector<const DemoBank*> banks_;
  FailureIndexOptions options_;
  bool threaded_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<EvalRequest> pending_;
  std::map<int, RobotSlot> slots_;
  bool busy_ = false;
  bool stop_ = false;
  std::thread worker_;
};

}  // namespace otfleet

#endif  // OTFLEET_FAILURE_DETECTOR_H_
