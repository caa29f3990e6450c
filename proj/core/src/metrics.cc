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

#include "otfleet/metrics.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "otfleet/error.h"

namespace otfleet {
namespace {

using ordered_json = nlohmann::ordered_json;

void RequireNonEmpty(std::span<const EpisodeOutcome> outcomes,
                     std::string_view what) {
  if (outcomes.empty()) {
    throw Error(ErrorCode::kEmptyInput,
                std::string(what) + ": no episode outcomes");
  }
}

void CheckUnit(std::optional<double> v, std::string_view name) {
  if (v.has_value() && !(*v >= 0.0 && *v <= 1.0)) {
    throw Error(ErrorCode::kDomain,
                std::string(name) + " must lie in [0, 1], got " +
                    FormatDouble(*v));
  }
}

// Steps before the latched alarm, capped at the pre-failure window.
std::size_t CleanPreFailureSteps(const EpisodeOutcome& o) {
  const std::size_t window = *o.failure_onset - 1;
  if (o.warnings.empty()) return window;
  return std::min(window, o.warnings.front() - 1);
}

ordered_json RateJson(const Rate& r) {
  ordered_json j;
  j["value"] = r.value.has_value() ? ordered_json(*r.value) : ordered_json();
  j["numerator"] = r.numerator;
  j["denominator"] = r.denominator;
  return j;
}

ordered_json OptionalJson(std::optional<double> v) {
  return v.has_value() ? ordered_json(*v) : ordered_json();
}

Rate RateFromJson(const ordered_json& j) {
  Rate r;
  if (!j.at("value").is_null()) r.value = j.at("value").get<double>();
  r.numerator = j.at("numerator").get<std::size_t>();
  r.denominator = j.at("denominator").get<std::size_t>();
  return r;
}

std::optional<double> OptionalFromJson(const ordered_json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string CsvValue(std::optional<double> v) {
  return v.has_value() ? FormatDouble(*v) : std::string("undefined");
}

std::string CsvJoin(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) line += ',';
    line += cells[i];
  }
  line += '\n';
  return line;
}

std::string_view AggregationName(SampleTnrAggregation a) {
  return a == SampleTnrAggregation::kEpisodeMean ? "episode_mean"
                                                 : "pooled_steps";
}

SampleTnrAggregation ParseAggregation(std::string_view name) {
  if (name == "episode_mean") return SampleTnrAggregation::kEpisodeMean;
  if (name == "pooled_steps") return SampleTnrAggregation::kPooledSteps;
  throw Error(ErrorCode::kParse,
              "unknown sample TNR aggregation '" + std::string(name) + "'");
}

}  // namespace

Rate Rate::Of(std::size_t numerator, std::size_t denominator) {
  if (numerator > denominator) {
    throw Error(ErrorCode::kDomain, "rate numerator exceeds denominator");
  }
  Rate r;
  r.numerator = numerator;
  r.denominator = denominator;
  if (denominator > 0) {
    r.value = static_cast<double>(numerator) / static_cast<double>(denominator);
  }
  return r;
}

void EpisodeOutcome::Validate() const {
  const std::string who = "episode " + std::to_string(episode_id) + ": ";
  if (failure) {
    if (!failure_onset.has_value()) {
      throw Error(ErrorCode::kDomain, who + "failure without onset");
    }
    if (*failure_onset < 1 || *failure_onset > steps_total) {
      throw Error(ErrorCode::kDomain, who + "failure onset outside [1, steps]");
    }
  }
  if (steps_intervened > steps_total) {
    throw Error(ErrorCode::kDomain, who + "more intervened steps than steps");
  }
  if (!std::is_sorted(warnings.begin(), warnings.end())) {
    throw Error(ErrorCode::kDomain, who + "warnings not sorted");
  }
  for (std::size_t w : warnings) {
    if (w < 1 || w > steps_total) {
      throw Error(ErrorCode::kDomain,
                  who + "warning at " + std::to_string(w) + " outside episode");
    }
  }
}

Confusion EpisodeConfusion(std::span<const EpisodeOutcome> outcomes) {
  Confusion c;
  for (const EpisodeOutcome& o : outcomes) {
    o.Validate();
    const bool warned = !o.warnings.empty();
    if (o.failure) {
      ++(warned ? c.true_positives : c.false_negatives);
    } else {
      ++(warned ? c.false_positives : c.true_negatives);
    }
  }
  const std::size_t failures = c.true_positives + c.false_negatives;
  const std::size_t successes = c.true_negatives + c.false_positives;
  if (failures == 0 && successes == 0) {
    throw Error(ErrorCode::kEmptyInput, "confusion: no episode outcomes");
  }
  c.tpr = Rate::Of(c.true_positives, failures);
  c.tnr = Rate::Of(c.true_negatives, successes);
  return c;
}

std::optional<double> Accuracy(std::optional<double> tpr,
                               std::optional<double> tnr) {
  CheckUnit(tpr, "tpr");
  CheckUnit(tnr, "tnr");
  if (!tpr.has_value() || !tnr.has_value()) return std::nullopt;
  return (*tpr + *tnr) / 2.0;
}

std::optional<double> WeightedAccuracy(std::optional<double> tpr,
                                       std::optional<double> tnr,
                                       std::optional<double> success_rate) {
  CheckUnit(tpr, "tpr");
  CheckUnit(tnr, "tnr");
  CheckUnit(success_rate, "success rate");
  if (!tpr.has_value() || !tnr.has_value() || !success_rate.has_value()) {
    return std::nullopt;
  }
  return *tpr * *success_rate + *tnr * (1.0 - *success_rate);
}

Rate SampleLevelTnr(std::span<const EpisodeOutcome> outcomes,
                    SampleTnrAggregation aggregation) {
  std::size_t clean_steps = 0;
  std::size_t window_steps = 0;
  std::size_t episodes = 0;
  double rate_sum = 0.0;
  for (const EpisodeOutcome& o : outcomes) {
    o.Validate();
    if (!o.failure || *o.failure_onset < 2) continue;
    const std::size_t window = *o.failure_onset - 1;
    const std::size_t clean = CleanPreFailureSteps(o);
    clean_steps += clean;
    window_steps += window;
    rate_sum += static_cast<double>(clean) / static_cast<double>(window);
    ++episodes;
  }
  if (aggregation == SampleTnrAggregation::kPooledSteps) {
    return Rate::Of(clean_steps, window_steps);
  }
  Rate r;
  r.denominator = episodes;
  if (episodes > 0) {
    r.value = rate_sum / static_cast<double>(episodes);
    // Episodes with every pre-failure step clean.
    for (const EpisodeOutcome& o : outcomes) {
      if (o.failure && *o.failure_onset >= 2 &&
          CleanPreFailureSteps(o) == *o.failure_onset - 1) {
        ++r.numerator;
      }
    }
  }
  return r;
}

Rate InterventionRate(std::span<const EpisodeOutcome> outcomes) {
  RequireNonEmpty(outcomes, "intervention rate");
  std::size_t intervened = 0;
  std::size_t total = 0;
  for (const EpisodeOutcome& o : outcomes) {
    o.Validate();
    intervened += o.steps_intervened;
    total += o.steps_total;
  }
  return Rate::Of(intervened, total);
}

Rate EpisodeInterventionRate(std::span<const EpisodeOutcome> outcomes) {
  RequireNonEmpty(outcomes, "episode intervention rate");
  std::size_t n = 0;
  for (const EpisodeOutcome& o : outcomes) n += o.steps_intervened > 0 ? 1 : 0;
  return Rate::Of(n, outcomes.size());
}

Rate SuccessRate(std::span<const EpisodeOutcome> outcomes) {
  RequireNonEmpty(outcomes, "success rate");
  std::size_t n = 0;
  for (const EpisodeOutcome& o : outcomes) n += o.failure ? 0 : 1;
  return Rate::Of(n, outcomes.size());
}

MetricsReport ComputeReport(std::span<const EpisodeOutcome> outcomes,
                            SampleTnrAggregation aggregation) {
  RequireNonEmpty(outcomes, "report");
  MetricsReport r;
  r.episodes = outcomes.size();
  r.confusion = EpisodeConfusion(outcomes);
  r.failures = r.confusion.tpr.denominator;
  r.successes = r.confusion.tnr.denominator;
  r.success_rate = SuccessRate(outcomes);
  r.accuracy = Accuracy(r.confusion.tpr.value, r.confusion.tnr.value);
  r.weighted_accuracy = WeightedAccuracy(
      r.confusion.tpr.value, r.confusion.tnr.value, r.success_rate.value);
  r.sample_tnr_aggregation = aggregation;
  r.sample_level_tnr = SampleLevelTnr(outcomes, aggregation);
  r.intervention_rate = InterventionRate(outcomes);
  r.episode_intervention_rate = EpisodeInterventionRate(outcomes);
  return r;
}

std::vector<EpisodeOutcome> OutcomesFromEvents(
    std::span<const FleetEvent> events) {
  std::vector<EpisodeOutcome> out;
  for (const FleetEvent& e : events) {
    if (e.kind != EventKind::kFinalize) continue;
    try {
      const auto& p = e.payload;
      EpisodeOutcome o;
      o.episode_id = p.at("episode_id").get<std::uint64_t>();
      o.failure = p.at("failure").get<bool>();
      if (!p.at("failure_onset").is_null()) {
        o.failure_onset = p.at("failure_onset").get<std::size_t>();
      }
      o.warnings = p.at("warnings").get<std::vector<std::size_t>>();
      o.steps_total = p.at("length").get<std::size_t>();
      // A rewind can shorten the episode below an earlier raise timestep.
      for (std::size_t& w : o.warnings) w = std::min(w, o.steps_total);
      o.steps_intervened = p.at("intervened_steps").get<std::size_t>();
      out.push_back(std::move(o));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kParse, "FINALIZE event seq " +
                                         std::to_string(e.seq) + ": " +
                                         ex.what());
    }
  }
  return out;
}

std::string_view ReportFormatName(ReportFormat format) {
  return format == ReportFormat::kJson ? "json" : "csv";
}

ReportFormat ParseReportFormat(std::string_view name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  throw Error(ErrorCode::kConfig,
              "unknown report format '" + std::string(name) + "'");
}

const std::vector<std::string>& ReportCsvColumns() {
  static const std::vector<std::string> kColumns = {
      "schema",
      "label",
      "config_hash",
      "seed",
      "episodes",
      "failures",
      "successes",
      "true_positives",
      "true_negatives",
      "tpr",
      "tnr",
      "accuracy",
      "weighted_accuracy",
      "sample_level_tnr",
      "sample_tnr_aggregation",
      "success_rate",
      "intervention_rate",
      "intervened_steps",
      "total_steps",
      "episode_intervention_rate",
  };
  return kColumns;
}

std::string RenderReport(const MetricsReport& r, const ReportProvenance& p,
                         ReportFormat format) {
  if (format == ReportFormat::kCsv) {
    std::string out = CsvJoin(ReportCsvColumns());
    out += CsvJoin({
        std::string(kReportSchema),
        p.label,
        p.config_hash,
        std::to_string(p.seed),
        std::to_string(r.episodes),
        std::to_string(r.failures),
        std::to_string(r.successes),
        std::to_string(r.confusion.true_positives),
        std::to_string(r.confusion.true_negatives),
        CsvValue(r.confusion.tpr.value),
        CsvValue(r.confusion.tnr.value),
        CsvValue(r.accuracy),
        CsvValue(r.weighted_accuracy),
        CsvValue(r.sample_level_tnr.value),
        std::string(AggregationName(r.sample_tnr_aggregation)),
        CsvValue(r.success_rate.value),
        CsvValue(r.intervention_rate.value),
        std::to_string(r.intervention_rate.numerator),
        std::to_string(r.intervention_rate.denominator),
        CsvValue(r.episode_intervention_rate.value),
    });
    return out;
  }
  ordered_json j;
  j["schema"] = kReportSchema;
  j["label"] = p.label;
  j["config_hash"] = p.config_hash;
  j["seed"] = p.seed;
  j["episodes"] = r.episodes;
  j["failures"] = r.failures;
  j["successes"] = r.successes;
  j["true_positives"] = r.confusion.true_positives;
  j["false_negatives"] = r.confusion.false_negatives;
  j["true_negatives"] = r.confusion.true_negatives;
  j["false_positives"] = r.confusion.false_positives;
  j["tpr"] = RateJson(r.confusion.tpr);
  j["tnr"] = RateJson(r.confusion.tnr);
  j["accuracy"] = OptionalJson(r.accuracy);
  j["weighted_accuracy"] = OptionalJson(r.weighted_accuracy);
  j["sample_level_tnr"] = RateJson(r.sample_level_tnr);
  j["sample_tnr_aggregation"] = AggregationName(r.sample_tnr_aggregation);
  j["success_rate"] = RateJson(r.success_rate);
  j["intervention_rate"] = RateJson(r.intervention_rate);
  j["episode_intervention_rate"] = RateJson(r.episode_intervention_rate);
  return j.dump(2) + "\n";
}

void EmitReport(const MetricsReport& report, const ReportProvenance& provenance,
                const std::filesystem::path& path, ReportFormat format) {
  const std::string text = RenderReport(report, provenance, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ParsedReport ParseReportJson(std::string_view text) {
  try {
    const ordered_json j = ordered_json::parse(text);
    if (j.at("schema").get<std::string>() != kReportSchema) {
      throw Error(ErrorCode::kParse, "unsupported report schema " +
                                         j.at("schema").get<std::string>());
    }
    ParsedReport out;
    out.provenance.label = j.at("label").get<std::string>();
    out.provenance.config_hash = j.at("config_hash").get<std::string>();
    out.provenance.seed = j.at("seed").get<std::uint64_t>();
    MetricsReport& r = out.report;
    r.episodes = j.at("episodes").get<std::size_t>();
    r.failures = j.at("failures").get<std::size_t>();
    r.successes = j.at("successes").get<std::size_t>();
    r.confusion.true_positives = j.at("true_positives").get<std::size_t>();
    r.confusion.false_negatives = j.at("false_negatives").get<std::size_t>();
    r.confusion.true_negatives = j.at("true_negatives").get<std::size_t>();
    r.confusion.false_positives = j.at("false_positives").get<std::size_t>();
    r.confusion.tpr = RateFromJson(j.at("tpr"));
    r.confusion.tnr = RateFromJson(j.at("tnr"));
    r.accuracy = OptionalFromJson(j.at("accuracy"));
    r.weighted_accuracy = OptionalFromJson(j.at("weighted_accuracy"));
    r.sample_level_tnr = RateFromJson(j.at("sample_level_tnr"));
    r.sample_tnr_aggregation =
        ParseAggregation(j.at("sample_tnr_aggregation").get<std::string>());
    r.success_rate = RateFromJson(j.at("success_rate"));
    r.intervention_rate = RateFromJson(j.at("intervention_rate"));
    r.episode_intervention_rate =
        RateFromJson(j.at("episode_intervention_rate"));
    return out;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParse, std::string("metrics report: ") + ex.what());
  }
}

const std::vector<std::string>& RoundTableColumns() {
  static const std::vector<std::string> kColumns = {
      "round",
      "skill",
      "episodes",
      "success_rate",
      "intervention_rate",
      "episode_intervention_rate",
      "success_rate_delta_abs",
      "success_rate_delta_rel",
      "intervention_rate_delta_abs",
      "intervention_rate_delta_rel",
      "schema",
      "config_hash",
      "seed",
  };
  return kColumns;
}

std::string RenderRoundTable(std::span<const RoundRow> rows,
                             const ReportProvenance& provenance) {
  std::ostringstream out;
  out << CsvJoin(RoundTableColumns());
  auto abs_delta = [](const Rate& now, const Rate& base) {
    if (!now.defined() || !base.defined()) return std::optional<double>();
    return std::optional<double>(*now.value - *base.value);
  };
  auto rel_delta = [](const Rate& now, const Rate& base) {
    if (!now.defined() || !base.defined() || *base.value == 0.0) {
      return std::optional<double>();
    }
    return std::optional<double>((*now.value - *base.value) / *base.value);
  };
  for (const RoundRow& row : rows) {
    const RoundRow& base = rows.front();
    out << CsvJoin({
        std::to_string(row.round),
        FormatDouble(row.skill),
        std::to_string(row.episodes),
        CsvValue(row.success_rate.value),
        CsvValue(row.intervention_rate.value),
        CsvValue(row.episode_intervention_rate.value),
        CsvValue(abs_delta(row.success_rate, base.success_rate)),
        CsvValue(rel_delta(row.success_rate, base.success_rate)),
        CsvValue(abs_delta(row.intervention_rate, base.intervention_rate)),
        CsvValue(rel_delta(row.intervention_rate, base.intervention_rate)),
        std::string(kRoundTableSchema),
        provenance.config_hash,
        std::to_string(provenance.seed),
    });
  }
  return out.str();
}

std::string FormatDouble(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace otfleet
