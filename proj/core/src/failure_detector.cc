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

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "otfleet/error.h"

namespace otfleet {
namespace {

// Transport lower bound: every unit of row mass pays at least that row's
// minimum, and likewise for columns.
double TransportLowerBound(const CostMatrix& cost) {
  const std::size_t le = cost.expert_len();
  const std::size_t lb = cost.rollout_len();
  std::vector<double> col_min(lb, std::numeric_limits<double>::infinity());
  double row_bound = 0.0;
  for (std::size_t i = 0; i < le; ++i) {
    double row_min = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lb; ++j) {
      const double c = cost(i, j);
      row_min = std::min(row_min, c);
      col_min[j] = std::min(col_min[j], c);
    }
    row_bound += row_min;
  }
  double col_bound = 0.0;
  for (double c : col_min) col_bound += c;
  return std::max(row_bound / static_cast<double>(le),
                  col_bound / static_cast<double>(lb));
}

}  // namespace

std::vector<Embedding> NormalizeRows(std::span<const Embedding> rows) {
  std::vector<Embedding> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double ss = 0.0;
    for (double x : rows[r]) ss += x * x;
    if (!(ss > 0.0) || !std::isfinite(ss)) {
      throw Error(ErrorCode::kDomain,
                  "embedding " + std::to_string(r + 1) + " has zero norm");
    }
    const double inv = 1.0 / std::sqrt(ss);
    Embedding e(rows[r].size());
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = rows[r][k] * inv;
    out.push_back(std::move(e));
  }
  return out;
}

FailureIndex ComputeFailureIndex(std::span<const Embedding> prefix,
                                 const DemoBank& bank,
                                 const FailureIndexOptions& options) {
  if (prefix.empty()) throw Error(ErrorCode::kDomain, "empty rollout prefix");
  for (const Embedding& e : prefix) {
    if (e.size() != bank.dim()) {
      throw Error(ErrorCode::kSchema,
                  "prefix embedding dimension " + std::to_string(e.size()) +
                      " does not match bank dimension " +
                      std::to_string(bank.dim()));
    }
  }
  const std::vector<Embedding> unit = NormalizeRows(prefix);
  return ComputeFailureIndexUnit(unit, bank, options);
}

FailureIndex ComputeFailureIndexUnit(std::span<const Embedding> unit_prefix,
                                     const DemoBank& bank,
                                     const FailureIndexOptions& options) {
  if (unit_prefix.empty()) {
    throw Error(ErrorCode::kDomain, "empty rollout prefix");
  }
  options.solver.Validate();
  const auto& experts =
      options.use_padding ? bank.unit_padded() : bank.unit_unpadded();
  FailureIndex best;
  best.prefix_len = unit_prefix.size();
  best.value = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < experts.size(); ++n) {
    const CostMatrix cost =
        CostMatrix::FromUnitRows(experts[n], unit_prefix, options.cost_kind);
    if (options.prune && n > 0) {
      // Allow for the solver's marginal slack so a pruned demo can still
      // never have won.
      const double slack =
          static_cast<double>(cost.expert_len() + cost.rollout_len()) *
          options.solver.marginal_tolerance * cost.MaxEntry();
      if (TransportLowerBound(cost) - slack >= best.value) continue;
    }
    const SinkhornResult r = SolveSinkhorn(cost, options.solver);
    if (r.plan.total_cost < best.value) {
      best.value = r.plan.total_cost;
      best.nearest_demo = n;
    }
  }
  best.value = std::max(best.value, 0.0);
  return best;
}

std::vector<FailureIndex> EvaluatePrefixes(std::span<const Embedding> trajectory,
                                           const DemoBank& bank,
                                           const FailureIndexOptions& options,
                                           std::size_t stride) {
  if (stride < 1) throw Error(ErrorCode::kConfig, "stride must be >= 1");
  if (trajectory.empty()) throw Error(ErrorCode::kDomain, "empty trajectory");
  for (const Embedding& e : trajectory) {
    if (e.size() != bank.dim()) {
      throw Error(ErrorCode::kSchema, "trajectory embedding dimension " +
                                          std::to_string(e.size()) +
                                          " does not match bank dimension " +
                                          std::to_string(bank.dim()));
    }
  }
  const std::vector<Embedding> unit = NormalizeRows(trajectory);
  std::vector<FailureIndex> out;
  for (std::size_t t = stride; t <= unit.size(); t += stride) {
    out.push_back(
        ComputeFailureIndexUnit(std::span(unit).first(t), bank, options));
  }
  if (out.empty() || out.back().prefix_len != unit.size()) {
    out.push_back(ComputeFailureIndexUnit(unit, bank, options));
  }
  return out;
}

double Quantile(std::span<const double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "quantile of no values");
  if (!(q >= 0.0 && q <= 1.0)) {
    throw Error(ErrorCode::kDomain, "quantile level must lie in [0, 1]");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0 || lo == hi) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::string_view CalibrationModeName(CalibrationMode mode) {
  switch (mode) {
    case CalibrationMode::kFinalIndex:
      return "final_index";
    case CalibrationMode::kPrefixAligned:
      return "prefix_aligned";
    case CalibrationMode::kPrefixBand:
      return "prefix_band";
  }
  return "final_index";
}

CalibrationMode ParseCalibrationMode(std::string_view name) {
  if (name == "final_index") return CalibrationMode::kFinalIndex;
  if (name == "prefix_aligned") return CalibrationMode::kPrefixAligned;
  if (name == "prefix_band") return CalibrationMode::kPrefixBand;
  throw Error(ErrorCode::kConfig,
              "unknown calibration mode '" + std::string(name) + "'");
}

std::string_view DeltaDirectionName(DeltaDirection direction) {
  return direction == DeltaDirection::kSensitivityCorrecting
             ? "sensitivity_correcting"
             : "literal";
}

DeltaDirection ParseDeltaDirection(std::string_view name) {
  if (name == "sensitivity_correcting") {
    return DeltaDirection::kSensitivityCorrecting;
  }
  if (name == "literal") return DeltaDirection::kLiteral;
  throw Error(ErrorCode::kConfig,
              "unknown delta direction '" + std::string(name) + "'");
}

void DetectorConfig::Validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kConfig, what);
  };
  if (!(delta_min > 0.0 && delta_min <= delta_max && delta_max < 100.0)) {
    fail("delta bounds must satisfy 0 < delta_min <= delta_max < 100");
  }
  if (!(delta >= delta_min && delta <= delta_max)) {
    fail("delta must lie within [delta_min, delta_max]");
  }
  if (!(delta_step >= 0.0) || !std::isfinite(delta_step)) {
    fail("delta_step must be finite and nonnegative");
  }
  if (warmup_min_successes < 1) fail("warmup_min_successes must be >= 1");
  if (!(min_prefix_fraction > 0.0 && min_prefix_fraction < 1.0)) {
    fail("min_prefix_fraction must lie in (0, 1)");
  }
  if (stride < 1) fail("stride must be >= 1");
}

std::string_view DecisionName(Decision decision) {
  switch (decision) {
    case Decision::kSilent:
      return "SILENT";
    case Decision::kRaise:
      return "RAISE";
    case Decision::kWarmingUp:
      return "WARMING_UP";
  }
  return "SILENT";
}

void PrefixIndexCache::Append(const FailureIndex& index) {
  if (!entries_.empty() && index.prefix_len <= entries_.back().prefix_len) {
    throw Error(ErrorCode::kDomain,
                "prefix cache must grow: " + std::to_string(index.prefix_len) +
                    " after " + std::to_string(entries_.back().prefix_len));
  }
  entries_.push_back(index);
}

void PrefixIndexCache::TruncateTo(std::size_t t) {
  while (!entries_.empty() && entries_.back().prefix_len > t) {
    entries_.pop_back();
  }
}

DetectorState::DetectorState(DetectorConfig config)
    : config_(config), delta_(config.delta) {
  config_.Validate();
}

std::optional<double> DetectorState::Calibrate() {
  if (!calibrated()) {
    threshold_.reset();
    return threshold_;
  }
  threshold_ = Quantile(success_final_, 1.0 - delta_ / 100.0);
  return threshold_;
}

std::vector<double> DetectorState::AlignedAt(std::size_t prefix_len) const {
  std::vector<double> aligned;
  aligned.reserve(success_traces_.size());
  for (const auto& trace : success_traces_) {
    // Latest entry not past prefix_len; the first entry if all are later.
    auto it = std::upper_bound(
        trace.begin(), trace.end(), prefix_len,
        [](std::size_t t, const FailureIndex& f) { return t < f.prefix_len; });
    aligned.push_back(it == trace.begin() ? trace.front().value
                                          : std::prev(it)->value);
  }
  return aligned;
}

void DetectorState::RefreshBand() {
  band_scores_.clear();
  for (const auto& trace : success_traces_) {
    double score = 0.0;
    for (const FailureIndex& f : trace) {
      const double median = Quantile(AlignedAt(f.prefix_len), 0.5);
      if (median > 0.0) score = std::max(score, f.value / median);
    }
    band_scores_.push_back(score);
  }
}

std::optional<double> DetectorState::ThresholdAt(std::size_t prefix_len) const {
  if (!calibrated()) return std::nullopt;
  const double q = 1.0 - delta_ / 100.0;
  switch (config_.calibration) {
    case CalibrationMode::kFinalIndex:
      return threshold_;
    case CalibrationMode::kPrefixAligned:
      return Quantile(AlignedAt(prefix_len), q);
    case CalibrationMode::kPrefixBand:
      return Quantile(AlignedAt(prefix_len), 0.5) * Quantile(band_scores_, q);
  }
  return threshold_;
}

Decision DetectorState::Check(const FailureIndex& index,
                              std::size_t l_max) const {
  if (!calibrated()) return Decision::kWarmingUp;
  const auto min_len = static_cast<std::size_t>(
      std::floor(config_.min_prefix_fraction * static_cast<double>(l_max)));
  if (index.prefix_len < min_len) return Decision::kSilent;
  const std::optional<double> threshold = ThresholdAt(index.prefix_len);
  return index.value > *threshold ? Decision::kRaise : Decision::kSilent;
}

void DetectorState::UpdateDelta(DetectorEvent event) {
  double sign = event == DetectorEvent::kMissedFailure ? 1.0 : -1.0;
  if (config_.direction == DeltaDirection::kLiteral) sign = -sign;
  delta_ = std::clamp(delta_ + sign * config_.delta_step, config_.delta_min,
                      config_.delta_max);
  Calibrate();
}

void DetectorState::RecordSuccess(const FailureIndex& final_index,
                                  std::span<const FailureIndex> trace) {
  success_final_.push_back(final_index.value);
  std::vector<FailureIndex> stored(trace.begin(), trace.end());
  if (stored.empty() || stored.back().prefix_len < final_index.prefix_len) {
    stored.push_back(final_index);
  }
  success_traces_.push_back(std::move(stored));
  if (config_.calibration == CalibrationMode::kPrefixBand) RefreshBand();
  Calibrate();
}

void RewindConfig::Validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw Error(ErrorCode::kConfig, "rewind epsilon must lie in (0, 1)");
  }
}

std::size_t RewindTarget(std::span<const FailureIndex> cache, std::size_t t0,
                         const RewindConfig& config) {
  config.Validate();
  if (cache.empty()) throw Error(ErrorCode::kDomain, "empty prefix cache");
  const auto at_t0 =
      std::find_if(cache.begin(), cache.end(),
                   [t0](const FailureIndex& f) { return f.prefix_len == t0; });
  if (at_t0 == cache.end()) {
    throw Error(ErrorCode::kDomain,
                "prefix cache has no entry at t0 = " + std::to_string(t0));
  }
  const double bound = config.epsilon * at_t0->value;
  std::size_t best = 1;
  for (const FailureIndex& f : cache) {
    if (f.prefix_len <= t0 && f.value <= bound) {
      best = std::max(best, f.prefix_len);
    }
  }
  return best;
}

std::string DetectorLogLine(const DetectorLogRecord& record) {
  nlohmann::ordered_json j;
  j["robot_id"] = record.robot_id;
  j["t0"] = record.t0;
  j["lambda"] = record.lambda;
  j["nearest_demo"] = record.nearest_demo;
  if (record.threshold.has_value()) {
    j["threshold"] = *record.threshold;
  } else {
    j["threshold"] = nullptr;
  }
  j["delta"] = record.delta;
  j["decision"] = DecisionName(record.decision);
  return j.dump();
}

EvaluationChannel::EvaluationChannel(
    const std::vector<const DemoBank*>& banks_by_robot,
    FailureIndexOptions options, bool threaded)
    : banks_(banks_by_robot), options_(options), threaded_(threaded) {
  options_.solver.Validate();
  if (threaded_) worker_ = std::thread([this] { WorkerLoop(); });
}

EvaluationChannel::~EvaluationChannel() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void EvaluationChannel::Submit(EvalRequest request) {
  if (request.robot_id < 0 ||
      static_cast<std::size_t>(request.robot_id) >= banks_.size()) {
    throw Error(ErrorCode::kIndex,
                "no bank for robot " + std::to_string(request.robot_id));
  }
  if (!threaded_) {
    Evaluate(request);
    return;
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    pending_.push_back(std::move(request));
  }
  cv_.notify_one();
}

void EvaluationChannel::Evaluate(const EvalRequest& request) {
  EvalReply reply;
  reply.robot_id = request.robot_id;
  reply.epoch = request.epoch;
  reply.index = ComputeFailureIndex(request.prefix, *banks_[request.robot_id],
                                    options_);
  std::lock_guard<std::mutex> lock(mu_);
  RobotSlot& slot = slots_[request.robot_id];
  if (reply.epoch == slot.epoch) slot.ready.push_back(std::move(reply));
}

void EvaluationChannel::WorkerLoop() {
  std::unique_lock<std::mutex> lock(mu_);
  while (true) {
    cv_.wait(lock, [this] { return stop_ || !pending_.empty(); });
    if (stop_) return;
    EvalRequest request = std::move(pending_.front());
    pending_.pop_front();
    if (request.epoch != slots_[request.robot_id].epoch) {
      if (pending_.empty()) idle_cv_.notify_all();
      continue;
    }
    busy_ = true;
    lock.unlock();
    Evaluate(request);
    lock.lock();
    busy_ = false;
    if (pending_.empty()) idle_cv_.notify_all();
  }
}

void EvaluationChannel::Reset(int robot_id, std::uint64_t epoch) {
  std::lock_guard<std::mutex> lock(mu_);
  RobotSlot& slot = slots_[robot_id];
  slot.epoch = epoch;
  slot.last_delivered = 0;
  slot.ready.clear();
  std::erase_if(pending_, [robot_id, epoch](const EvalRequest& r) {
    return r.robot_id == robot_id && r.epoch != epoch;
  });
}

std::vector<EvalReply> EvaluationChannel::Poll(int robot_id) {
  std::lock_guard<std::mutex> lock(mu_);
  RobotSlot& slot = slots_[robot_id];
  std::vector<EvalReply> fresh;
  for (EvalReply& r : slot.ready) {
    if (r.epoch != slot.epoch || r.index.prefix_len <= slot.last_delivered) {
      continue;
    }
    slot.last_delivered = r.index.prefix_len;
    fresh.push_back(std::move(r));
  }
  slot.ready.clear();
  return fresh;
}

void EvaluationChannel::Drain() {
  if (!threaded_) return;
  std::unique_lock<std::mutex> lock(mu_);
  idle_cv_.wait(lock, [this] { return stop_ || (pending_.empty() && !busy_); });
}

}  // namespace otfleet
