#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fader/kb.hpp"
#include "fader/text.hpp"

namespace fader {

enum class UnitKind { kEdp, kChunk, kExternal };

std::string_view to_string(UnitKind kind);
UnitKind unit_kind_from_string(std::string_view s);

struct Provenance {
  std::string doc_id;
  std::size_t chunk_index = 0;
  std::optional<int> sample_run;

  bool operator==(const Provenance&) const = default;
};

struct RetrievalUnit {
  std::string unit_id;
  UnitKind kind = UnitKind::kChunk;
  std::string text;
  std::size_t token_count = 0;  // under the run's tokenizer
  Provenance provenance;

  bool operator==(const RetrievalUnit&) const = default;
};

RetrievalUnit unit_from_edp(const Edp& edp, const Tokenizer& tokenizer);
RetrievalUnit unit_from_chunk(const Chunk& chunk, const Tokenizer& tokenizer);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Query and document analysis: default tokenizer, ASCII-lowercased.
std::vector<std::string> analyze(std::string_view text);

// Okapi BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
 public:
  struct Posting {
    std::uint32_t unit;  // index into unit_ids()
    std::uint32_t tf;
  };

  // Throws ArgumentError on an empty unit list or duplicate unit ids.
  // threads <= 0 uses the OpenMP default for the analysis pass.
  static Bm25Index build(std::span<const RetrievalUnit> units, Bm25Params params = {},
                         int threads = 1);

  const Bm25Params& params() const noexcept { return params_; }
  std::size_t num_units() const noexcept { return unit_ids_.size(); }
  double avgdl() const noexcept { return avgdl_; }
  const std::vector<std::string>& unit_ids() const noexcept { return unit_ids_; }
  const std::vector<std::uint32_t>& lengths() const noexcept { return lengths_; }
  std::size_t num_terms() const noexcept { return postings_.size(); }

  std::optional<std::size_t> unit_index(std::string_view unit_id) const;
  std::size_t df(std::string_view term) const;
  double idf(std::string_view term) const;
  // Postings sorted by unit index; empty for unknown terms.
  std::span<const Posting> postings(std::string_view term) const;

  // k1 * (1 - b + b * dl / avgdl) for each unit.
  double length_norm(std::size_t unit) const { return norms_[unit]; }

  // Score of one unit; throws LookupError for an unknown unit id.
  double score(std::string_view query, std::string_view unit_id) const;

  // {"format","params":{k1,b},"N","avgdl","unit_ids","lengths","postings":{term:[[unit,tf],...]}}
  nlohmann::json to_json() const;
  static Bm25Index from_json(const nlohmann::json& j);

 private:
  void finalize();

  Bm25Params params_;
  double avgdl_ = 0.0;
  std::vector<std::string> unit_ids_;
  std::vector<std::uint32_t> lengths_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::uint32_t> unit_lookup_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

inline double bm25_idf(double n_docs, double df) {
  return std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
}

inline double bm25_term(double idf, double tf, double k1, double norm) {
  return idf * tf * (k1 + 1.0) / (tf + norm);
}

struct Hit {
  std::string unit_id;
  double score = 0.0;

  bool operator==(const Hit&) const = default;
};

struct RankedContext {
  std::string query;
  std::size_t budget = 0;
  std::vector<Hit> hits;               // every unit, best first
  std::vector<std::string> selected;   // prefix of hits that fits the budget
  std::size_t used_tokens = 0;

  bool operator==(const RankedContext&) const = default;
};

// Length of the longest prefix of ranked token counts whose sum <= budget.
std::size_t budget_prefix(std::span<const std::size_t> ranked_token_counts, std::size_t budget);

// units must be the list the index was built from, in the same order.
// threads > 1 scores with the OpenMP kernel; results are identical either way.
RankedContext retrieve_under_budget(const Bm25Index& index, std::span<const RetrievalUnit> units,
                                    std::string_view query, std::size_t budget, int threads = 1);

// "- <text>" per selected unit, newline-joined, in rank order.
std::string render_context(const RankedContext& ctx, std::span<const RetrievalUnit> units);

}  // namespace fader
