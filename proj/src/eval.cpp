#include "fader/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "fader/errors.hpp"
#include "fader/kernels.hpp"
#include "fader/text.hpp"

namespace fader {

namespace {

using Tokens = std::vector<std::string>;
using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                    tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double meteor_single(const Tokens& cand, const Tokens& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  std::vector<int> ref_for(cand.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  // Exact stage, then stem stage on what is left.
  for (std::size_t i = 0; i < cand.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!ref_used[j] && cand[i] == ref[j]) {
        ref_for[i] = static_cast<int>(j);
        ref_used[j] = true;
        break;
      }
    }
  }
  std::vector<std::string> ref_stems(ref.size());
  for (std::size_t j = 0; j < ref.size(); ++j) ref_stems[j] = porter_stem(ref[j]);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (ref_for[i] >= 0) continue;
    const std::string stem = porter_stem(cand[i]);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!ref_used[j] && ref_stems[j] == stem) {
        ref_for[i] = static_cast<int>(j);
        ref_used[j] = true;
        break;
      }
    }
  }
  std::size_t matches = 0;
  std::size_t chunks = 0;
  int prev_i = -2;
  int prev_j = -2;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (ref_for[i] < 0) continue;
    ++matches;
    const int ii = static_cast<int>(i);
    if (ii != prev_i + 1 || ref_for[i] != prev_j + 1) ++chunks;
    prev_i = ii;
    prev_j = ref_for[i];
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = p * r / (0.9 * p + 0.1 * r);
  const double frag = static_cast<double>(chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return fmean * (1.0 - penalty);
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) ||
         (u >= 123 && u <= 126);
}

Tokens split_ws(std::string_view s) {
  Tokens out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

double f1_single(const Tokens& pred, const Tokens& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::unordered_map<std::string, long> counts;
  for (const auto& t : gold) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(pred.size());
  const double r = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

std::string format_score(double s) { return fmt::format("{:.6f}", s); }

}  // namespace

void validate_task(const QaTask& task) {
  if (task.task_id.empty()) throw ArgumentError("task has an empty task_id");
  if (task.doc_id.empty()) throw ArgumentError("task " + task.task_id + " has no doc_id");
  if (task.question.empty()) throw ArgumentError("task " + task.task_id + " has no question");
  if (task.options.empty() != !task.gold_index.has_value()) {
    throw ArgumentError("task " + task.task_id + ": options and gold_index must come together");
  }
  if (task.gold_index) {
    if (task.options.size() != 4) {
      throw ArgumentError("task " + task.task_id + " must have exactly 4 options");
    }
    if (*task.gold_index < 1 || *task.gold_index > 4) {
      throw ArgumentError("task " + task.task_id + ": gold_index must be in 1..4");
    }
  } else if (task.gold_answers.empty()) {
    throw ArgumentError("task " + task.task_id + " needs at least one gold answer");
  }
}

std::vector<std::string> metric_tokens(std::string_view text) {
  Tokens out;
  for (Token& t : tokenize(text)) out.push_back(lowercase_ascii(t.surface));
  return out;
}

double bleu4(std::string_view candidate, std::span<const std::string> references,
             BleuOptions options) {
  const Tokens cand = metric_tokens(candidate);
  if (cand.empty() || references.empty()) return 0.0;
  std::vector<Tokens> refs;
  for (const auto& r : references) refs.push_back(metric_tokens(r));

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts cand_counts = ngrams(cand, n);
    NgramCounts max_ref;
    for (const Tokens& ref : refs) {
      for (const auto& [gram, count] : ngrams(ref, n)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, count);
      }
    }
    std::size_t clipped = 0;
    for (const auto& [gram, count] : cand_counts) {
      const auto it = max_ref.find(gram);
      if (it != max_ref.end()) clipped += std::min(count, it->second);
    }
    const std::size_t total = cand.size() >= n ? cand.size() - n + 1 : 0;
    double p = 0.0;
    if (options.smoothing && n >= 2) {
      const std::size_t denom = std::max<std::size_t>(total, 1) + 1;
      p = static_cast<double>(clipped + 1) / static_cast<double>(denom);
    } else {
      if (total == 0 || clipped == 0) return 0.0;
      p = static_cast<double>(clipped) / static_cast<double>(total);
    }
    log_sum += std::log(p);
  }

  // Closest reference length; ties go to the shorter one.
  std::size_t best_len = refs.front().size();
  for (const Tokens& ref : refs) {
    const auto d = [&](std::size_t len) {
      return len > cand.size() ? len - cand.size() : cand.size() - len;
    };
    if (d(ref.size()) < d(best_len) || (d(ref.size()) == d(best_len) && ref.size() < best_len)) {
      best_len = ref.size();
    }
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(best_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(std::string_view candidate, std::span<const std::string> references) {
  const Tokens cand = metric_tokens(candidate);
  double best = 0.0;
  for (const auto& reference : references) {
    const Tokens ref = metric_tokens(reference);
    if (cand.empty() || ref.empty()) continue;
    const std::size_t lcs = lcs_length(cand, ref);
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
    const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
    best = std::max(best, 2.0 * p * r / (p + r));
  }
  return best;
}

double meteor_lite(std::string_view candidate, std::span<const std::string> references) {
  const Tokens cand = metric_tokens(candidate);
  double best = 0.0;
  for (const auto& reference : references) {
    best = std::max(best, meteor_single(cand, metric_tokens(reference)));
  }
  return best;
}

std::string normalize_answer(std::string_view s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (char c : s) {
    if (is_ascii_punct(c)) continue;
    if (c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') c = ' ';
    lowered.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
  }
  std::string out;
  for (const std::string& w : split_ws(lowered)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

double token_f1(std::string_view candidate, std::span<const std::string> references) {
  const Tokens pred = split_ws(normalize_answer(candidate));
  double best = 0.0;
  for (const auto& reference : references) {
    best = std::max(best, f1_single(pred, split_ws(normalize_answer(reference))));
  }
  return best;
}

int mc_accuracy(std::optional<int> predicted_index, int gold_index) {
  return predicted_index && *predicted_index == gold_index ? 1 : 0;
}

DatasetProfile profile_from_string(std::string_view name) {
  if (name == "narrativeqa") return DatasetProfile::kNarrativeQa;
  if (name == "qasper") return DatasetProfile::kQasper;
  if (name == "quality") return DatasetProfile::kQuality;
  throw ConfigError("unknown dataset profile '" + std::string(name) +
                    "' (expected narrativeqa, qasper or quality)");
}

std::string_view to_string(DatasetProfile profile) {
  switch (profile) {
    case DatasetProfile::kNarrativeQa:
      return "narrativeqa";
    case DatasetProfile::kQasper:
      return "qasper";
    case DatasetProfile::kQuality:
      return "quality";
  }
  return "narrativeqa";
}

std::vector<std::string> metric_set(DatasetProfile profile) {
  switch (profile) {
    case DatasetProfile::kNarrativeQa:
      return {std::string(kMetricBleu4), std::string(kMetricRougeL),
              std::string(kMetricMeteorLite)};
    case DatasetProfile::kQasper:
      return {std::string(kMetricTokenF1)};
    case DatasetProfile::kQuality:
      return {std::string(kMetricMcAccuracy)};
  }
  return {};
}

MetricReport make_report(std::string metric_name, std::vector<TaskScore> scores,
                         std::size_t invalid_predictions) {
  std::sort(scores.begin(), scores.end(),
            [](const TaskScore& a, const TaskScore& b) { return a.task_id < b.task_id; });
  MetricReport report;
  report.metric_name = std::move(metric_name);
  report.invalid_predictions = invalid_predictions;
  double sum = 0.0;
  for (const TaskScore& s : scores) sum += s.score;
  report.aggregate = scores.empty() ? 0.0 : sum / static_cast<double>(scores.size());
  report.per_task = std::move(scores);
  return report;
}

MetricReport evaluate(std::string_view metric_name, std::span<const QaTask> tasks,
                      std::span<const Prediction> predictions, int threads, BleuOptions bleu) {
  std::unordered_map<std::string_view, const Prediction*> by_task;
  for (const Prediction& p : predictions) by_task.emplace(p.task_id, &p);

  std::vector<TaskScore> scores;
  scores.reserve(tasks.size());
  std::size_t invalid = 0;

  if (metric_name == kMetricMcAccuracy) {
    for (const QaTask& t : tasks) {
      if (!t.gold_index) throw ArgumentError("mc_accuracy needs multiple-choice task " + t.task_id);
      const auto it = by_task.find(t.task_id);
      const std::optional<int> predicted = it == by_task.end() ? std::nullopt
                                                               : it->second->option_index;
      if (!predicted) ++invalid;
      scores.push_back({t.task_id, static_cast<double>(mc_accuracy(predicted, *t.gold_index))});
    }
    return make_report(std::string(metric_name), std::move(scores), invalid);
  }

  kernels::PairMetric metric;
  if (metric_name == kMetricBleu4) {
    metric = [bleu](const std::string& c, const std::vector<std::string>& r) {
      return bleu4(c, r, bleu);
    };
  } else if (metric_name == kMetricRougeL) {
    metric = [](const std::string& c, const std::vector<std::string>& r) { return rouge_l(c, r); };
  } else if (metric_name == kMetricMeteorLite) {
    metric = [](const std::string& c, const std::vector<std::string>& r) {
      return meteor_lite(c, r);
    };
  } else if (metric_name == kMetricTokenF1) {
    metric = [](const std::string& c, const std::vector<std::string>& r) { return token_f1(c, r); };
  } else {
    throw ArgumentError("unknown metric '" + std::string(metric_name) + "'");
  }

  std::vector<std::string> candidates;
  std::vector<std::vector<std::string>> references;
  for (const QaTask& t : tasks) {
    const auto it = by_task.find(t.task_id);
    if (it == by_task.end()) ++invalid;
    candidates.push_back(it == by_task.end() ? std::string() : it->second->answer);
    references.push_back(t.gold_answers);
  }
  const auto values = threads == 1
                          ? kernels::score_pairs_serial(metric, candidates, references)
                          : kernels::score_pairs_omp(metric, candidates, references, threads);
  for (std::size_t k = 0; k < tasks.size(); ++k) scores.push_back({tasks[k].task_id, values[k]});
  return make_report(std::string(metric_name), std::move(scores), invalid);
}

Curve build_curve(const std::vector<std::pair<std::size_t, MetricReport>>& runs) {
  Curve curve;
  for (const auto& [budget, report] : runs) curve.push_back({budget, report.aggregate});
  std::sort(curve.begin(), curve.end(),
            [](const CurvePoint& a, const CurvePoint& b) { return a.budget < b.budget; });
  for (std::size_t k = 1; k < curve.size(); ++k) {
    if (curve[k].budget == curve[k - 1].budget) {
      throw ArgumentError("duplicate budget " + std::to_string(curve[k].budget) + " in curve");
    }
  }
  return curve;
}

Curve pareto_frontier(std::span<const CurvePoint> points) {
  // Sweep by budget ascending (score descending within a budget) and keep a
  // point only when it beats the best score seen so far.
  Curve sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), [](const CurvePoint& a, const CurvePoint& b) {
    if (a.budget != b.budget) return a.budget < b.budget;
    return a.score > b.score;
  });
  Curve frontier;
  for (const CurvePoint& p : sorted) {
    if (frontier.empty() || p.score > frontier.back().score) frontier.push_back(p);
  }
  return frontier;
}

std::string curve_csv(std::span<const CurveRow> rows) {
  std::string out = "budget_tokens,metric,score\n";
  for (const CurveRow& r : rows) {
    out += fmt::format("{},{},{}\n", r.budget, r.metric, format_score(r.score));
  }
  return out;
}

std::vector<CurveRow> parse_curve_csv(std::string_view csv) {
  std::vector<CurveRow> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < csv.size()) {
    auto nl = csv.find('\n', pos);
    if (nl == std::string_view::npos) nl = csv.size();
    std::string_view line = csv.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != "budget_tokens,metric,score") throw FormatError("bad curve CSV header", 1);
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos) {
      throw FormatError("expected 3 columns", line_no);
    }
    try {
      rows.push_back({std::stoull(std::string(line.substr(0, c1))),
                      std::string(line.substr(c1 + 1, c2 - c1 - 1)),
                      std::stod(std::string(line.substr(c2 + 1)))});
    } catch (const std::exception&) {
      throw FormatError("unparseable curve row", line_no);
    }
  }
  return rows;
}

}  // namespace fader
