#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace fader {

// Lowercase (ASCII) and collapse whitespace runs to one space, trimmed.
std::string normalize_for_key(std::string_view s);

// Content hash over (doc_id, normalized entity, normalized description).
std::string compute_edp_id(std::string_view doc_id, std::string_view entity,
                           std::string_view description);

// One entity-description pair extracted from chunk `chunk_index` of
// `doc_id` during sample run `sample_run`.
struct Edp {
  std::string edp_id;
  std::string entity;
  std::string description;
  std::string doc_id;
  std::size_t chunk_index = 0;
  int sample_run = 1;

  static Edp make(std::string doc_id, std::string entity, std::string description,
                  std::size_t chunk_index, int sample_run);

  // The text that gets indexed: "entity: description".
  std::string render_text() const { return entity + ": " + description; }

  bool operator==(const Edp&) const = default;
};

// Either a single document or the whole corpus.
struct KbScope {
  std::string doc_id;  // empty means corpus

  static KbScope corpus() { return {}; }
  static KbScope document(std::string id) { return {std::move(id)}; }

  bool is_corpus() const noexcept { return doc_id.empty(); }
  std::string label() const { return is_corpus() ? "corpus" : "doc:" + doc_id; }
  static KbScope from_label(std::string_view label);

  bool operator==(const KbScope&) const = default;
};

// A deduplicated EDP set. Immutable after construction; entries are keyed and
// ordered by edp_id. When two EDPs share an id the one with the smallest
// (sample_run, chunk_index, entity, description) is kept, so the outcome does
// not depend on insertion order.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  KnowledgeBase(KbScope scope, std::set<int> runs, const std::vector<Edp>& edps);

  const std::string& kb_id() const noexcept { return kb_id_; }
  const KbScope& scope() const noexcept { return scope_; }
  const std::set<int>& runs_included() const noexcept { return runs_; }
  const std::map<std::string, Edp>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool contains(const std::string& edp_id) const { return entries_.count(edp_id) > 0; }

  std::vector<Edp> to_vector() const;

  bool operator==(const KnowledgeBase&) const = default;

 private:
  friend KnowledgeBase merge_kbs(const std::vector<KnowledgeBase>& kbs);

  void insert(const Edp& edp);

  std::string kb_id_;
  KbScope scope_;
  std::set<int> runs_;
  std::map<std::string, Edp> entries_;
};

// All edps must carry sample_run == run (and doc_id == scope.doc_id for a
// document scope); otherwise ArgumentError.
KnowledgeBase build_run_kb(const std::vector<Edp>& edps, int run,
                           KbScope scope = KbScope::corpus());

// Set union under edp_id. All inputs must share a scope; an empty input list
// yields an empty corpus KB.
KnowledgeBase merge_kbs(const std::vector<KnowledgeBase>& kbs);

// JSONL: a header line {"kb_header":{...}} followed by one EDP per line in
// edp_id order. Paths ending in ".gz" are gzip-compressed.
void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path);
KnowledgeBase load_kb(const std::filesystem::path& path);

}  // namespace fader
