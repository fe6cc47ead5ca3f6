#pragma once

// Data-parallel kernels. Each OpenMP kernel has a serial twin that performs
// the same floating-point operations in the same order per output element, so
// the two agree bit-for-bit; tests and the benchmark compare them.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fader/retrieval.hpp"

namespace fader::kernels {

// BM25 score of every unit for analyzed query terms (duplicates count).
std::vector<double> bm25_scores_serial(const Bm25Index& index,
                                       std::span<const std::string> query_terms);
std::vector<double> bm25_scores_omp(const Bm25Index& index,
                                    std::span<const std::string> query_terms, int threads);

// Per-unit analyzed term frequencies, the index-build hot loop.
using TermCounts = std::vector<std::pair<std::string, std::uint32_t>>;
std::vector<TermCounts> analyze_units_serial(std::span<const RetrievalUnit> units);
std::vector<TermCounts> analyze_units_omp(std::span<const RetrievalUnit> units, int threads);

// Applies a pairwise metric to aligned candidate/reference lists.
using PairMetric =
    std::function<double(const std::string&, const std::vector<std::string>&)>;
std::vector<double> score_pairs_serial(const PairMetric& metric,
                                       std::span<const std::string> candidates,
                                       std::span<const std::vector<std::string>> references);
std::vector<double> score_pairs_omp(const PairMetric& metric,
                                    std::span<const std::string> candidates,
                                    std::span<const std::vector<std::string>> references,
                                    int threads);

}  // namespace fader::kernels
