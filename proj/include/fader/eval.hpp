#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fader {

// ---------------------------------------------------------------------------
// Tasks and predictions
// ---------------------------------------------------------------------------

struct QaTask {
  std::string task_id;
  std::string doc_id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::vector<std::string> options;  // empty, or exactly 4
  std::optional<int> gold_index;     // 1..4, present iff options are

  bool is_multiple_choice() const noexcept { return gold_index.has_value(); }
};

// Throws ArgumentError when the task breaks its invariants.
void validate_task(const QaTask& task);

struct Prediction {
  std::string task_id;
  std::string answer;
  std::optional<int> option_index;  // multiple choice only; nullopt when invalid
};

// ---------------------------------------------------------------------------
// Metrics. Inputs are tokenized with the default tokenizer and lowercased
// (punctuation tokens kept) except token_f1, which applies its own
// normalization. Multi-reference metrics return the max over references.
// ---------------------------------------------------------------------------

struct BleuOptions {
  // Add-one smoothing of the n >= 2 precisions.
  bool smoothing = false;
};

double bleu4(std::string_view candidate, std::span<const std::string> references,
             BleuOptions options = {});

// LCS F-measure with beta = 1.
double rouge_l(std::string_view candidate, std::span<const std::string> references);

// METEOR without the synonym stage: exact then Porter-stem matching,
// Fmean = PR / (0.9P + 0.1R), penalty = 0.5 (chunks / m)^3.
double meteor_lite(std::string_view candidate, std::span<const std::string> references);

// Lowercase, strip punctuation, drop a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view s);
double token_f1(std::string_view candidate, std::span<const std::string> references);

int mc_accuracy(std::optional<int> predicted_index, int gold_index);

// Porter (1980) suffix stripping of a lowercase ASCII word; other input is
// returned unchanged.
std::string porter_stem(std::string_view word);

std::vector<std::string> metric_tokens(std::string_view text);

// ---------------------------------------------------------------------------
// Reports and curves
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMetricBleu4 = "bleu4";
inline constexpr std::string_view kMetricRougeL = "rouge_l";
inline constexpr std::string_view kMetricMeteorLite = "meteor_lite";
inline constexpr std::string_view kMetricTokenF1 = "token_f1";
inline constexpr std::string_view kMetricMcAccuracy = "mc_accuracy";

enum class DatasetProfile { kNarrativeQa, kQasper, kQuality };

DatasetProfile profile_from_string(std::string_view name);
std::string_view to_string(DatasetProfile profile);
std::vector<std::string> metric_set(DatasetProfile profile);

struct TaskScore {
  std::string task_id;
  double score = 0.0;

  bool operator==(const TaskScore&) const = default;
};

struct MetricReport {
  std::string metric_name;
  std::vector<TaskScore> per_task;  // sorted by task_id
  double aggregate = 0.0;           // mean of per_task, folded in task_id order
  std::size_t invalid_predictions = 0;

  bool operator==(const MetricReport&) const = default;
};

MetricReport make_report(std::string metric_name, std::vector<TaskScore> scores,
                         std::size_t invalid_predictions = 0);

// Scores every task (missing predictions score 0). threads > 1 uses the
// OpenMP pair kernel.
MetricReport evaluate(std::string_view metric_name, std::span<const QaTask> tasks,
                      std::span<const Prediction> predictions, int threads = 1,
                      BleuOptions bleu = {});

struct CurvePoint {
  std::size_t budget = 0;
  double score = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

using Curve = std::vector<CurvePoint>;

// Sorted by budget; duplicate budgets are an ArgumentError.
Curve build_curve(const std::vector<std::pair<std::size_t, MetricReport>>& runs);

// Points not dominated by another point with budget <= and score >=, one
// strict. Identical points collapse to one. Sorted by budget.
Curve pareto_frontier(std::span<const CurvePoint> points);

struct CurveRow {
  std::size_t budget = 0;
  std::string metric;
  double score = 0.0;
};

// Header "budget_tokens,metric,score"; scores printed with 6 decimals.
std::string curve_csv(std::span<const CurveRow> rows);
std::vector<CurveRow> parse_curve_csv(std::string_view csv);

}  // namespace fader
