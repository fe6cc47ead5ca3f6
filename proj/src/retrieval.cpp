#include "fader/retrieval.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "fader/errors.hpp"
#include "fader/kernels.hpp"

namespace fader {

namespace {

constexpr std::string_view kIndexFormat = "fader-bm25/1";

}  // namespace

std::string_view to_string(UnitKind kind) {
  switch (kind) {
    case UnitKind::kEdp:
      return "edp";
    case UnitKind::kChunk:
      return "chunk";
    case UnitKind::kExternal:
      return "external";
  }
  return "chunk";
}

UnitKind unit_kind_from_string(std::string_view s) {
  if (s == "edp") return UnitKind::kEdp;
  if (s == "chunk") return UnitKind::kChunk;
  if (s == "external" || s == "external_proposition") return UnitKind::kExternal;
  throw ArgumentError("unknown unit kind '" + std::string(s) + "'");
}

RetrievalUnit unit_from_edp(const Edp& edp, const Tokenizer& tokenizer) {
  RetrievalUnit u;
  u.unit_id = edp.edp_id;
  u.kind = UnitKind::kEdp;
  u.text = edp.render_text();
  u.token_count = tokenizer.count(u.text);
  u.provenance = {edp.doc_id, edp.chunk_index, edp.sample_run};
  return u;
}

RetrievalUnit unit_from_chunk(const Chunk& chunk, const Tokenizer& tokenizer) {
  RetrievalUnit u;
  u.unit_id = chunk.doc_id + "#" + std::to_string(chunk.chunk_index);
  u.kind = UnitKind::kChunk;
  u.text = chunk.text;
  u.token_count = tokenizer.count(u.text);
  u.provenance = {chunk.doc_id, chunk.chunk_index, std::nullopt};
  return u;
}

std::vector<std::string> analyze(std::string_view text) {
  std::vector<std::string> terms;
  for (Token& t : tokenize(text)) terms.push_back(lowercase_ascii(t.surface));
  return terms;
}

Bm25Index Bm25Index::build(std::span<const RetrievalUnit> units, Bm25Params params, int threads) {
  if (units.empty()) throw ArgumentError("cannot build a BM25 index over zero units");
  if (units.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ArgumentError("too many units for one index");
  }
  Bm25Index index;
  index.params_ = params;
  index.unit_ids_.reserve(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (!index.unit_lookup_.emplace(units[u].unit_id, static_cast<std::uint32_t>(u)).second) {
      throw ArgumentError("duplicate unit_id '" + units[u].unit_id + "'");
    }
    index.unit_ids_.push_back(units[u].unit_id);
  }

  const auto counts = threads == 1 ? kernels::analyze_units_serial(units)
                                   : kernels::analyze_units_omp(units, threads);
  index.lengths_.assign(units.size(), 0);
  for (std::size_t u = 0; u < counts.size(); ++u) {
    for (const auto& [term, tf] : counts[u]) {
      index.postings_[term].push_back({static_cast<std::uint32_t>(u), tf});
      index.lengths_[u] += tf;
    }
  }
  index.finalize();
  return index;
}

void Bm25Index::finalize() {
  const double total = std::accumulate(lengths_.begin(), lengths_.end(), 0.0);
  avgdl_ = total / static_cast<double>(lengths_.size());
  norms_.resize(lengths_.size());
  for (std::size_t u = 0; u < lengths_.size(); ++u) {
    const double ratio = avgdl_ > 0.0 ? static_cast<double>(lengths_[u]) / avgdl_ : 1.0;
    norms_[u] = params_.k1 * (1.0 - params_.b + params_.b * ratio);
  }
  if (unit_lookup_.empty()) {
    for (std::size_t u = 0; u < unit_ids_.size(); ++u) {
      unit_lookup_.emplace(unit_ids_[u], static_cast<std::uint32_t>(u));
    }
  }
}

std::optional<std::size_t> Bm25Index::unit_index(std::string_view unit_id) const {
  const auto it = unit_lookup_.find(std::string(unit_id));
  if (it == unit_lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t Bm25Index::df(std::string_view term) const { return postings(term).size(); }

double Bm25Index::idf(std::string_view term) const {
  return bm25_idf(static_cast<double>(num_units()), static_cast<double>(df(term)));
}

std::span<const Bm25Index::Posting> Bm25Index::postings(std::string_view term) const {
  const auto it = postings_.find(std::string(term));
  if (it == postings_.end()) return {};
  return it->second;
}

double Bm25Index::score(std::string_view query, std::string_view unit_id) const {
  const auto unit = unit_index(unit_id);
  if (!unit) throw LookupError("unknown unit_id '" + std::string(unit_id) + "'");
  double total = 0.0;
  for (const std::string& term : analyze(query)) {
    const auto list = postings(term);
    const auto it = std::lower_bound(list.begin(), list.end(), *unit,
                                     [](const Posting& p, std::size_t u) { return p.unit < u; });
    if (it == list.end() || it->unit != *unit) continue;
    total += bm25_term(idf(term), it->tf, params_.k1, norms_[*unit]);
  }
  return total;
}

nlohmann::json Bm25Index::to_json() const {
  nlohmann::json j;
  j["format"] = kIndexFormat;
  j["params"] = {{"k1", params_.k1}, {"b", params_.b}};
  j["N"] = num_units();
  j["avgdl"] = avgdl_;
  j["unit_ids"] = unit_ids_;
  j["lengths"] = lengths_;
  nlohmann::json postings = nlohmann::json::object();
  for (const auto& [term, list] : postings_) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Posting& p : list) arr.push_back({p.unit, p.tf});
    postings[term] = std::move(arr);
  }
  j["postings"] = std::move(postings);
  return j;
}

Bm25Index Bm25Index::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kIndexFormat) {
      throw FormatError("unsupported index format " + j.at("format").dump());
    }
    Bm25Index index;
    index.params_.k1 = j.at("params").at("k1").get<double>();
    index.params_.b = j.at("params").at("b").get<double>();
    index.unit_ids_ = j.at("unit_ids").get<std::vector<std::string>>();
    index.lengths_ = j.at("lengths").get<std::vector<std::uint32_t>>();
    const auto n = j.at("N").get<std::size_t>();
    if (n == 0 || index.unit_ids_.size() != n || index.lengths_.size() != n) {
      throw FormatError("index unit tables disagree with N");
    }
    for (std::size_t u = 0; u < n; ++u) {
      if (!index.unit_lookup_.emplace(index.unit_ids_[u], static_cast<std::uint32_t>(u)).second) {
        throw FormatError("duplicate unit_id in index: " + index.unit_ids_[u]);
      }
    }
    std::vector<std::uint64_t> sums(n, 0);
    for (const auto& [term, arr] : j.at("postings").items()) {
      auto& list = index.postings_[term];
      for (const auto& entry : arr) {
        const auto unit = entry.at(0).get<std::uint32_t>();
        const auto tf = entry.at(1).get<std::uint32_t>();
        if (unit >= n || tf == 0 || (!list.empty() && list.back().unit >= unit)) {
          throw FormatError("bad posting for term '" + term + "'");
        }
        list.push_back({unit, tf});
        sums[unit] += tf;
      }
    }
    for (std::size_t u = 0; u < n; ++u) {
      if (sums[u] != index.lengths_[u]) throw FormatError("postings disagree with unit lengths");
    }
    index.finalize();
    return index;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("malformed index: ") + ex.what());
  }
}

std::size_t budget_prefix(std::span<const std::size_t> ranked_token_counts, std::size_t budget) {
  std::size_t used = 0;
  std::size_t k = 0;
  for (; k < ranked_token_counts.size(); ++k) {
    if (ranked_token_counts[k] > budget - used) break;
    used += ranked_token_counts[k];
  }
  return k;
}

RankedContext retrieve_under_budget(const Bm25Index& index, std::span<const RetrievalUnit> units,
                                    std::string_view query, std::size_t budget, int threads) {
  if (units.size() != index.num_units()) {
    throw ArgumentError("unit list does not match the index");
  }
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (units[u].unit_id != index.unit_ids()[u]) {
      throw ArgumentError("unit list order does not match the index at " + units[u].unit_id);
    }
  }
  const auto terms = analyze(query);
  const auto scores = threads == 1 ? kernels::bm25_scores_serial(index, terms)
                                   : kernels::bm25_scores_omp(index, terms, threads);

  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return units[a].unit_id < units[b].unit_id;
  });

  RankedContext ctx;
  ctx.query = std::string(query);
  ctx.budget = budget;
  ctx.hits.reserve(order.size());
  std::vector<std::size_t> ranked_counts;
  ranked_counts.reserve(order.size());
  for (std::size_t u : order) {
    ctx.hits.push_back({units[u].unit_id, scores[u]});
    ranked_counts.push_back(units[u].token_count);
  }
  const std::size_t take = budget_prefix(ranked_counts, budget);
  for (std::size_t k = 0; k < take; ++k) {
    ctx.selected.push_back(ctx.hits[k].unit_id);
    ctx.used_tokens += ranked_counts[k];
  }
  return ctx;
}

std::string render_context(const RankedContext& ctx, std::span<const RetrievalUnit> units) {
  std::unordered_map<std::string_view, const RetrievalUnit*> by_id;
  for (const RetrievalUnit& u : units) by_id.emplace(u.unit_id, &u);
  std::string out;
  for (const std::string& id : ctx.selected) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw LookupError("selected unit '" + id + "' not in unit list");
    if (!out.empty()) out += '\n';
    out += "- ";
    out += it->second->text;
  }
  return out;
}

}  // namespace fader
