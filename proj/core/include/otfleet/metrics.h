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

#ifndef OTFLEET_METRICS_H_
#define OTFLEET_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "otfleet/fleet.h"

namespace otfleet {

inline constexpr std::string_view kReportSchema = "otfleet.metrics/1";
inline constexpr std::string_view kRoundTableSchema = "otfleet.rounds/1";

// A ratio with its backing counts. value is empty when the denominator is
// zero; it is never coerced to 0.
struct Rate {
  std::optional<double> value;
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  static Rate Of(std::size_t numerator, std::size_t denominator);
  bool defined() const { return value.has_value(); }
  bool operator==(const Rate&) const = default;
};

struct EpisodeOutcome {
  std::uint64_t episode_id = 0;
  bool failure = false;
  // 1-based failure onset, required when failure is set.
  std::optional<std::size_t> failure_onset;
  // Sorted warning timesteps.
  std::vector<std::size_t> warnings;
  std::size_t steps_total = 0;
  std::size_t steps_intervened = 0;

  // Throws kDomain on a broken invariant.
  void Validate() const;
  bool operator==(const EpisodeOutcome&) const = default;
};

struct Confusion {
  std::size_t true_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t true_negatives = 0;
  std::size_t false_positives = 0;
  Rate tpr;
  Rate tnr;
};

// Throws kEmptyInput when there is neither a failure nor a success.
Confusion EpisodeConfusion(std::span<const EpisodeOutcome> outcomes);

// Both throw kDomain for inputs outside [0, 1]; an undefined input gives an
// undefined result.
std::optional<double> Accuracy(std::optional<double> tpr,
                               std::optional<double> tnr);
std::optional<double> WeightedAccuracy(std::optional<double> tpr,
                                       std::optional<double> tnr,
                                       std::optional<double> success_rate);

enum class SampleTnrAggregation {
  // Mean of per-episode rates.
  kEpisodeMean,
  // Clean pre-failure steps over all pre-failure steps.
  kPooledSteps,
};

// A step counts as warned from the first warning onward: once raised, the
// alarm stays up for the rest of the episode. Failed episodes with t_f = 1
// have no pre-failure steps and are skipped. numerator/denominator are step
// counts for kPooledSteps and episode counts for kEpisodeMean.
Rate SampleLevelTnr(std::span<const EpisodeOutcome> outcomes,
                    SampleTnrAggregation aggregation =
                        SampleTnrAggregation::kEpisodeMean);

// Step fraction. Throws kEmptyInput on no outcomes.
Rate InterventionRate(std::span<const EpisodeOutcome> outcomes);
// Episodes with at least one intervened step over all episodes.
Rate EpisodeInterventionRate(std::span<const EpisodeOutcome> outcomes);
Rate SuccessRate(std::span<const EpisodeOutcome> outcomes);

struct MetricsReport {
  std::size_t episodes = 0;
  std::size_t failures = 0;
  std::size_t successes = 0;
  Confusion confusion;
  std::optional<double> accuracy;
  std::optional<double> weighted_accuracy;
  Rate sample_level_tnr;
  SampleTnrAggregation sample_tnr_aggregation =
      SampleTnrAggregation::kEpisodeMean;
  Rate success_rate;
  Rate intervention_rate;
  Rate episode_intervention_rate;
};

MetricsReport ComputeReport(std::span<const EpisodeOutcome> outcomes,
                            SampleTnrAggregation aggregation =
                                SampleTnrAggregation::kEpisodeMean);

// Builds outcomes from FINALIZE events, in log order.
std::vector<EpisodeOutcome> OutcomesFromEvents(
    std::span<const FleetEvent> events);

struct ReportProvenance {
  std::string label;
  std::string config_hash;
  std::uint64_t seed = 0;
};

enum class ReportFormat { kJson, kCsv };

std::string_view ReportFormatName(ReportFormat format);
ReportFormat ParseReportFormat(std::string_view name);

// Fixed CSV header, one row per report.
const std::vector<std::string>& ReportCsvColumns();

std::string RenderReport(const MetricsReport& report,
                         const ReportProvenance& provenance,
                         ReportFormat format);
// Throws kIo naming the path.
void EmitReport(const MetricsReport& report, const ReportProvenance& provenance,
                const std::filesystem::path& path, ReportFormat format);

struct ParsedReport {
  MetricsReport report;
  ReportProvenance provenance;
};

// Inverse of the JSON rendering. Throws kParse.
ParsedReport ParseReportJson(std::string_view text);

struct RoundRow {
  std::size_t round = 0;
  double skill = 0.0;
  std::size_t episodes = 0;
  Rate success_rate;
  Rate intervention_rate;
  Rate episode_intervention_rate;
};

// Adds deltas against the first round: absolute (difference of rates) and
// relative (difference over the first-round rate).
std::string RenderRoundTable(std::span<const RoundRow> rows,
                             const ReportProvenance& provenance);
const std::vector<std::string>& RoundTableColumns();

// Shortest decimal text that round-trips to the same double.
std::string FormatDouble(double value);

}  // namespace otfleet

#endif  // OTFLEET_METRICS_H_
