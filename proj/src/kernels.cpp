#include "fader/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <map>

namespace fader::kernels {

namespace {

int resolve_threads(int threads) { return threads > 0 ? threads : omp_get_max_threads(); }

TermCounts count_terms(const std::string& text) {
  std::map<std::string, std::uint32_t> counts;
  for (std::string& term : analyze(text)) ++counts[std::move(term)];
  return TermCounts(counts.begin(), counts.end());
}

}  // namespace

std::vector<double> bm25_scores_serial(const Bm25Index& index,
                                       std::span<const std::string> query_terms) {
  std::vector<double> scores(index.num_units(), 0.0);
  const double k1 = index.params().k1;
  for (const std::string& term : query_terms) {
    const auto postings = index.postings(term);
    if (postings.empty()) continue;
    const double idf = index.idf(term);
    for (const auto& p : postings) {
      scores[p.unit] += bm25_term(idf, p.tf, k1, index.length_norm(p.unit));
    }
  }
  return scores;
}

std::vector<double> bm25_scores_omp(const Bm25Index& index,
                                    std::span<const std::string> query_terms, int threads) {
  std::vector<double> scores(index.num_units(), 0.0);
  const double k1 = index.params().k1;
  // Terms stay sequential so every unit sees the same addition order as the
  // serial kernel; a unit occurs at most once per postings list.
#pragma omp parallel num_threads(resolve_threads(threads))
  for (const std::string& term : query_terms) {
    const auto postings = index.postings(term);
    if (postings.empty()) continue;
    const double idf = index.idf(term);
    const auto n = static_cast<std::ptrdiff_t>(postings.size());
#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      const auto& p = postings[static_cast<std::size_t>(k)];
      scores[p.unit] += bm25_term(idf, p.tf, k1, index.length_norm(p.unit));
    }
  }
  return scores;
}

std::vector<TermCounts> analyze_units_serial(std::span<const RetrievalUnit> units) {
  std::vector<TermCounts> out(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) out[u] = count_terms(units[u].text);
  return out;
}

std::vector<TermCounts> analyze_units_omp(std::span<const RetrievalUnit> units, int threads) {
  std::vector<TermCounts> out(units.size());
  const auto n = static_cast<std::ptrdiff_t>(units.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(resolve_threads(threads))
  for (std::ptrdiff_t u = 0; u < n; ++u) {
    out[static_cast<std::size_t>(u)] = count_terms(units[static_cast<std::size_t>(u)].text);
  }
  return out;
}

std::vector<double> score_pairs_serial(const PairMetric& metric,
                                       std::span<const std::string> candidates,
                                       std::span<const std::vector<std::string>> references) {
  std::vector<double> out(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) out[k] = metric(candidates[k], references[k]);
  return out;
}

std::vector<double> score_pairs_omp(const PairMetric& metric,
                                    std::span<const std::string> candidates,
                                    std::span<const std::vector<std::string>> references,
                                    int threads) {
  std::vector<double> out(candidates.size());
  const auto n = static_cast<std::ptrdiff_t>(candidates.size());
#pragma omp parallel for schedule(dynamic, 8) num_threads(resolve_threads(threads))
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    out[i] = metric(candidates[i], references[i]);
  }
  return out;
}

}  // namespace fader::kernels
