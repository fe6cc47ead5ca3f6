#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fader/eval.hpp"
#include "fader/http_backend.hpp"
#include "fader/llmgen.hpp"
#include "fader/mock_backend.hpp"
#include "fader/retrieval.hpp"
#include "fader/text.hpp"

namespace fader {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// Which documents a task's query is ranked against.
enum class RetrievalScope { kDocument, kCorpus };

std::string_view to_string(RetrievalScope scope);
RetrievalScope retrieval_scope_from_string(std::string_view s);

struct BackendConfig {
  std::string kind = "mock";  // mock | http
  std::optional<std::uint64_t> seed;
  MockOptions mock;
  HttpBackendConfig http;
  RetryPolicy retry;
};

struct PathsConfig {
  std::filesystem::path corpus;
  std::filesystem::path tasks;
  std::filesystem::path workdir;
  std::filesystem::path units;       // --unit external
  std::filesystem::path embeddings;  // simq vector sidecar
};

struct RunConfig {
  TokenizerSpec tokenizer;
  std::size_t chunk_target = kDefaultChunkTokens;
  std::vector<std::size_t> budgets;
  int num_kbs = 1;
  BackendConfig backend;
  Bm25Params bm25;
  DatasetProfile profile = DatasetProfile::kNarrativeQa;
  UnitKind unit = UnitKind::kEdp;
  bool speculation = true;
  RetrievalScope scope = RetrievalScope::kDocument;
  int jobs = 1;
  bool bleu_smoothing = false;
  bool transcripts = false;
  std::size_t simq_top_k = 10;
  PathsConfig paths;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Relative paths are resolved against base_dir.
  static RunConfig from_json(const nlohmann::json& j,
                             const std::filesystem::path& base_dir = {});
  nlohmann::ordered_json to_json() const;

  std::vector<std::string> metrics() const { return metric_set(profile); }
  std::string speculation_template() const;
  std::string extraction_template() const;
  std::string answer_template() const;
};

// Parses and validates a JSON config file.
RunConfig load_config(const std::filesystem::path& path);

std::shared_ptr<const LlmBackend> make_backend(const BackendConfig& config);

// ---------------------------------------------------------------------------
// Dataset adapters. Schema violations raise FormatError with the line number.
// ---------------------------------------------------------------------------

// {"doc_id","text","meta"?} per line; doc ids must be unique.
std::vector<Document> load_corpus(const std::filesystem::path& path);

// {"task_id","doc_id","question","answers":[...],"options"?,"gold_index"?}
std::vector<QaTask> load_tasks(const std::filesystem::path& path);

// {"unit_id","text","doc_id","chunk_index"?} per line; token counts are
// computed with tokenizer.
std::vector<RetrievalUnit> load_external_units(const std::filesystem::path& path,
                                               const Tokenizer& tokenizer);

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct StageRecord {
  std::string params_sha256;
  std::map<std::string, std::string> inputs;   // workdir-relative or absolute path -> sha256
  std::map<std::string, std::string> outputs;  // workdir-relative path -> sha256

  bool operator==(const StageRecord&) const = default;
};

// Stage bookkeeping persisted as workdir/manifest.json. Only the pipeline's
// driving thread touches it.
class RunManifest {
 public:
  static RunManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const StageRecord* find(const std::string& stage) const;
  void put(const std::string& stage, StageRecord record);
  // The stage whose recorded outputs include key, if any.
  std::optional<std::string> producer_of(const std::string& key) const;
  const std::map<std::string, StageRecord>& stages() const noexcept { return stages_; }

 private:
  std::map<std::string, StageRecord> stages_;
};

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

struct StageOptions {
  bool force = false;
  std::ostream* log = nullptr;
};

// Runs the pipeline stages against config.paths.workdir. Every output is a
// pure function of the config and inputs (mock backend), independent of jobs.
//
// Layout:
//   ingest/chunks.jsonl
//   speculate/run-<s>.jsonl, speculate/stats.json
//   extract/run-<s>.kb.jsonl
//   <stage>/journal.jsonl while a speculate or extract stage is in progress
//   merge/kb_final.jsonl
//   index/index.json, index/units.jsonl
//   retrieve/budget-<b>.jsonl, answer/budget-<b>.jsonl
//   eval/budget-<b>.<metric>.json
//   curve/curve.csv, curve/frontier.csv
//   simq/report.json, simq/report.txt
class Pipeline {
 public:
  Pipeline(RunConfig config, StageOptions options = {});

  const RunConfig& config() const noexcept { return config_; }
  std::filesystem::path workdir() const { return config_.paths.workdir; }

  void ingest();
  void speculate();
  void extract();
  void merge();
  void index();
  void retrieve(std::optional<std::size_t> budget = std::nullopt);
  void answer(std::optional<std::size_t> budget = std::nullopt);
  void eval(std::optional<std::size_t> budget = std::nullopt);
  void curve();
  void simq();

  // ingest through curve, skipping stages the unit kind does not need.
  void run_all();

  std::filesystem::path chunks_path() const;
  std::filesystem::path questions_path(int run) const;
  // Histogram of speculated questions per (chunk, run).
  std::filesystem::path speculation_stats_path() const;
  std::filesystem::path run_kb_path(int run) const;
  std::filesystem::path final_kb_path() const;
  std::filesystem::path index_path() const;
  std::filesystem::path units_path() const;
  std::filesystem::path contexts_path(std::size_t budget) const;
  std::filesystem::path predictions_path(std::size_t budget) const;
  std::filesystem::path report_path(std::size_t budget, std::string_view metric) const;
  std::filesystem::path curve_path() const;
  std::filesystem::path frontier_path() const;
  std::filesystem::path simq_report_path() const;

 private:
  struct Input {
    std::filesystem::path path;
    std::string producer_command;  // named in the error when path is missing
  };

  template <class Body>
  void run_stage(const std::string& stage, const std::vector<Input>& inputs,
                 const nlohmann::json& params, const std::vector<std::filesystem::path>& outputs,
                 Body&& body);
  void check_fresh(const std::string& key, std::vector<std::string>& visiting) const;
  std::string manifest_key(const std::filesystem::path& path) const;
  void log(const std::string& line) const;
  LlmSession session(const std::string& stage);
  std::vector<std::size_t> budgets_for(std::optional<std::size_t> budget) const;
  std::vector<Chunk> read_chunks() const;

  RunConfig config_;
  StageOptions options_;
  RunManifest manifest_;
  std::shared_ptr<const LlmBackend> backend_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  std::map<std::string, std::unique_ptr<TranscriptLog>> transcripts_;
};

// Runs the full pipeline once per value of param ("num_kbs" or
// "chunk_target") in workdir/sweep/<param>-<value>/ and writes the combined
// table workdir/sweep/<param>.csv with header
// "value,budget_tokens,metric,score,kb_size" (kb_size empty unless unit=edp).
std::filesystem::path run_sweep(const RunConfig& base, const std::string& param,
                                const std::vector<std::size_t>& values,
                                StageOptions options = {});

}  // namespace fader
