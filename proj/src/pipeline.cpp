#include "fader/pipeline.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <algorithm>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <tuple>

#include "fader/analysis.hpp"
#include "fader/errors.hpp"
#include "fader/hashing.hpp"
#include "fader/io.hpp"
#include "fader/kb.hpp"

namespace fader {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kManifestFormat = "fader-manifest/1";
constexpr std::string_view kIndexSetFormat = "fader-index-set/1";
constexpr std::string_view kCorpusKey = "*";

// Runs f(i) for i in [0, n) on up to `jobs` threads. The exception from the
// lowest failing index is rethrown after the loop.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  std::exception_ptr error;
  std::size_t error_index = std::numeric_limits<std::size_t>::max();
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for num_threads(std::max(1, jobs)) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(fader_parallel_for_error)
      {
        if (static_cast<std::size_t>(i) < error_index) {
          error_index = static_cast<std::size_t>(i);
          error = std::current_exception();
        }
      }
    }
  }
  if (error) std::rethrow_exception(error);
}

void read_jsonl(const fs::path& path, const std::function<void(const json&, std::size_t)>& fn) {
  io::for_each_line(io::read_file(path), [&](std::string_view line, std::size_t line_no) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      throw FormatError(path.string() + ": invalid JSON: " + ex.what(), line_no);
    }
    try {
      fn(j, line_no);
    } catch (const json::exception& ex) {
      throw FormatError(path.string() + ": " + ex.what(), line_no);
    }
  });
}

void append_line(std::string& out, const ordered_json& j) {
  out += j.dump();
  out += '\n';
}

// Append-only per-item log so an interrupted stage can resume. Lines carry
// the stage parameter hash; entries written under other parameters are
// ignored on reload.
class Journal {
 public:
  Journal(fs::path path, std::string params_sha)
      : path_(std::move(path)), params_sha_(std::move(params_sha)) {
    if (fs::exists(path_)) {
      // A torn final line from a killed run is skipped.
      io::for_each_line(io::read_file(path_), [&](std::string_view line, std::size_t) {
        try {
          json j = json::parse(line);
          if (j.value("params_sha256", "") == params_sha_) entries_[j.at("key")] = j.at("value");
        } catch (const json::exception&) {
        }
      });
    }
    fs::create_directories(path_.parent_path());
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) throw std::runtime_error("cannot open journal " + path_.string());
  }

  const json* find(const std::string& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  void record(const std::string& key, const json& value) {
    ordered_json line;
    line["params_sha256"] = params_sha_;
    line["key"] = key;
    line["value"] = value;
    const std::string text = line.dump() + "\n";
    std::lock_guard<std::mutex> lock(mu_);
    out_ << text;
    out_.flush();
  }

  void finish() {
    out_.close();
    fs::remove(path_);
  }

 private:
  fs::path path_;
  std::string params_sha_;
  std::map<std::string, json> entries_;
  std::ofstream out_;
  std::mutex mu_;
};

std::string item_key(const Chunk& chunk, int run) {
  return fmt::format("{}\x1f{}\x1f{}\x1f{}", chunk.doc_id, chunk.chunk_index, run,
                     sha256_hex(chunk.text));
}

ordered_json unit_to_json(const RetrievalUnit& u) {
  ordered_json j;
  j["unit_id"] = u.unit_id;
  j["kind"] = to_string(u.kind);
  j["doc_id"] = u.provenance.doc_id;
  j["chunk_index"] = u.provenance.chunk_index;
  j["sample_run"] = u.provenance.sample_run ? json(*u.provenance.sample_run) : json(nullptr);
  j["token_count"] = u.token_count;
  j["text"] = u.text;
  return j;
}

RetrievalUnit unit_from_json(const json& j) {
  RetrievalUnit u;
  u.unit_id = j.at("unit_id").get<std::string>();
  u.kind = unit_kind_from_string(j.at("kind").get<std::string>());
  u.provenance.doc_id = j.at("doc_id").get<std::string>();
  u.provenance.chunk_index = j.at("chunk_index").get<std::size_t>();
  if (!j.at("sample_run").is_null()) u.provenance.sample_run = j["sample_run"].get<int>();
  u.token_count = j.at("token_count").get<std::size_t>();
  u.text = j.at("text").get<std::string>();
  return u;
}

json tokenizer_params(const TokenizerSpec& spec) {
  if (spec.kind == TokenizerSpec::Kind::kBpe) return {{"kind", "bpe"}};
  return {{"kind", "default"}};
}

json backend_params(const RunConfig& c) {
  json j = {{"kind", c.backend.kind}};
  if (c.backend.kind == "mock") {
    j["seed"] = *c.backend.seed;
    j["random_multiple_choice"] = c.backend.mock.random_multiple_choice;
  } else {
    j["base_url"] = c.backend.http.base_url;
    j["model"] = c.backend.http.model;
    j["temperature"] = c.backend.http.temperature;
    if (c.backend.seed) j["seed"] = *c.backend.seed;
  }
  j["prompt_version"] = prompt_asset_version();
  return j;
}

struct LoadedIndexSet {
  std::map<std::string, Bm25Index> indexes;
  std::map<std::string, std::vector<RetrievalUnit>> units;
  RetrievalScope scope = RetrievalScope::kDocument;
};

}  // namespace

// ---------------------------------------------------------------------------
// RunManifest
// ---------------------------------------------------------------------------

RunManifest RunManifest::load(const fs::path& path) {
  RunManifest m;
  if (!fs::exists(path)) return m;
  try {
    const json j = json::parse(io::read_file(path));
    if (j.at("format").get<std::string>() != kManifestFormat) {
      throw FormatError(path.string() + ": unsupported manifest format");
    }
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.params_sha256 = s.at("params_sha256").get<std::string>();
      r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      m.stages_[name] = std::move(r);
    }
  } catch (const json::exception& ex) {
    throw FormatError(path.string() + ": malformed manifest: " + ex.what());
  }
  return m;
}

void RunManifest::save(const fs::path& path) const {
  ordered_json j;
  j["format"] = kManifestFormat;
  ordered_json stages = ordered_json::object();
  for (const auto& [name, r] : stages_) {
    ordered_json s;
    s["params_sha256"] = r.params_sha256;
    s["inputs"] = r.inputs;
    s["outputs"] = r.outputs;
    stages[name] = std::move(s);
  }
  j["stages"] = std::move(stages);
  io::write_file(path, j.dump(2) + "\n");
}

const StageRecord* RunManifest::find(const std::string& stage) const {
  const auto it = stages_.find(stage);
  return it == stages_.end() ? nullptr : &it->second;
}

void RunManifest::put(const std::string& stage, StageRecord record) {
  stages_[stage] = std::move(record);
}

std::optional<std::string> RunManifest::producer_of(const std::string& key) const {
  for (const auto& [name, r] : stages_) {
    if (r.outputs.count(key)) return name;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pipeline plumbing
// ---------------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, StageOptions options)
    : config_(std::move(config)), options_(options) {
  config_.validate();
  manifest_ = RunManifest::load(config_.paths.workdir / "manifest.json");
  tokenizer_ = Tokenizer::create(config_.tokenizer);
}

fs::path Pipeline::chunks_path() const { return workdir() / "ingest" / "chunks.jsonl"; }
fs::path Pipeline::questions_path(int run) const {
  return workdir() / "speculate" / fmt::format("run-{}.jsonl", run);
}
fs::path Pipeline::speculation_stats_path() const { return workdir() / "speculate" / "stats.json"; }
fs::path Pipeline::run_kb_path(int run) const {
  return workdir() / "extract" / fmt::format("run-{}.kb.jsonl", run);
}
fs::path Pipeline::final_kb_path() const { return workdir() / "merge" / "kb_final.jsonl"; }
fs::path Pipeline::index_path() const { return workdir() / "index" / "index.json"; }
fs::path Pipeline::units_path() const { return workdir() / "index" / "units.jsonl"; }
fs::path Pipeline::contexts_path(std::size_t budget) const {
  return workdir() / "retrieve" / fmt::format("budget-{}.jsonl", budget);
}
fs::path Pipeline::predictions_path(std::size_t budget) const {
  return workdir() / "answer" / fmt::format("budget-{}.jsonl", budget);
}
fs::path Pipeline::report_path(std::size_t budget, std::string_view metric) const {
  return workdir() / "eval" / fmt::format("budget-{}.{}.json", budget, metric);
}
fs::path Pipeline::curve_path() const { return workdir() / "curve" / "curve.csv"; }
fs::path Pipeline::frontier_path() const { return workdir() / "curve" / "frontier.csv"; }
fs::path Pipeline::simq_report_path() const { return workdir() / "simq" / "report.json"; }

std::string Pipeline::manifest_key(const fs::path& path) const {
  const fs::path abs = fs::absolute(path).lexically_normal();
  const fs::path root = fs::absolute(workdir()).lexically_normal();
  const fs::path rel = abs.lexically_relative(root);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return abs.generic_string();
}

void Pipeline::log(const std::string& line) const {
  if (options_.log) *options_.log << line << '\n';
}

void Pipeline::check_fresh(const std::string& key, std::vector<std::string>& visiting) const {
  if (std::find(visiting.begin(), visiting.end(), key) != visiting.end()) return;
  visiting.push_back(key);
  const auto producer = manifest_.producer_of(key);
  if (!producer) return;
  const StageRecord& rec = *manifest_.find(*producer);
  const fs::path path = fs::path(key).is_absolute() ? fs::path(key) : workdir() / key;
  if (!fs::exists(path)) return;
  if (io::file_sha256(path) != rec.outputs.at(key)) {
    throw StaleArtifactError(fmt::format(
        "{} changed after stage '{}' wrote it; rerun '{}' or pass --force", key, *producer,
        *producer));
  }
  for (const auto& [in_key, in_hash] : rec.inputs) {
    const fs::path in_path = fs::path(in_key).is_absolute() ? fs::path(in_key) : workdir() / in_key;
    if (fs::exists(in_path) && io::file_sha256(in_path) != in_hash) {
      throw StaleArtifactError(fmt::format(
          "stage '{}' is out of date: its input {} changed; rerun it or pass --force", *producer,
          in_key));
    }
    check_fresh(in_key, visiting);
  }
}

template <class Body>
void Pipeline::run_stage(const std::string& stage, const std::vector<Input>& inputs,
                         const json& params, const std::vector<fs::path>& outputs, Body&& body) {
  for (const Input& in : inputs) {
    if (!fs::exists(in.path)) {
      if (in.producer_command.empty()) {
        throw PrerequisiteError(
            fmt::format("{}: input file {} does not exist", stage, in.path.string()), "");
      }
      throw PrerequisiteError(fmt::format("{}: missing {}; run 'fader {}' first", stage,
                                          in.path.string(), in.producer_command),
                              in.producer_command);
    }
  }
  if (!options_.force) {
    for (const Input& in : inputs) {
      std::vector<std::string> visiting;
      check_fresh(manifest_key(in.path), visiting);
    }
  }
  StageRecord rec;
  rec.params_sha256 = sha256_hex(params.dump());
  for (const Input& in : inputs) rec.inputs[manifest_key(in.path)] = io::file_sha256(in.path);

  if (const StageRecord* prev = manifest_.find(stage);
      prev && prev->params_sha256 == rec.params_sha256 && prev->inputs == rec.inputs) {
    bool intact = prev->outputs.size() == outputs.size();
    for (const fs::path& out : outputs) {
      const auto it = prev->outputs.find(manifest_key(out));
      intact = intact && it != prev->outputs.end() && fs::exists(out) &&
               io::file_sha256(out) == it->second;
    }
    if (intact) {
      log(fmt::format("[{}] up to date", stage));
      return;
    }
  }

  body(rec.params_sha256);
  for (const fs::path& out : outputs) rec.outputs[manifest_key(out)] = io::file_sha256(out);
  manifest_.put(stage, std::move(rec));
  manifest_.save(workdir() / "manifest.json");
  log(fmt::format("[{}] done", stage));
}

LlmSession Pipeline::session(const std::string& stage) {
  if (!backend_) backend_ = make_backend(config_.backend);
  LlmSession s;
  s.backend = backend_;
  s.retry = config_.backend.retry;
  s.seed = config_.backend.seed.value_or(0);
  if (config_.transcripts) {
    auto& t = transcripts_[stage];
    if (!t) {
      t = std::make_unique<TranscriptLog>(workdir() / "transcripts" /
                                          fmt::format("{}.jsonl", stage));
    }
    s.transcript = t.get();
  }
  return s;
}

std::vector<std::size_t> Pipeline::budgets_for(std::optional<std::size_t> budget) const {
  if (!budget) return config_.budgets;
  if (std::find(config_.budgets.begin(), config_.budgets.end(), *budget) ==
      config_.budgets.end()) {
    throw ConfigError(fmt::format("budget {} is not in the configured grid", *budget));
  }
  return {*budget};
}

std::vector<Chunk> Pipeline::read_chunks() const {
  std::vector<Chunk> chunks;
  read_jsonl(chunks_path(), [&](const json& j, std::size_t) {
    Chunk c;
    c.doc_id = j.at("doc_id").get<std::string>();
    c.chunk_index = j.at("chunk_index").get<std::size_t>();
    c.text = j.at("text").get<std::string>();
    c.token_count = j.at("token_count").get<std::size_t>();
    c.first_sentence = j.at("first_sentence").get<std::size_t>();
    c.last_sentence = j.at("last_sentence").get<std::size_t>();
    chunks.push_back(std::move(c));
  });
  return chunks;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void Pipeline::ingest() {
  std::vector<Input> inputs{{config_.paths.corpus, ""}};
  if (config_.tokenizer.kind == TokenizerSpec::Kind::kBpe) {
    inputs.push_back({config_.tokenizer.vocab_path, ""});
  }
  const json params = {{"tokenizer", tokenizer_params(config_.tokenizer)},
                       {"chunk_target", config_.chunk_target}};
  run_stage("ingest", inputs, params, {chunks_path()}, [&](const std::string&) {
    const auto docs = load_corpus(config_.paths.corpus);
    std::vector<std::vector<Chunk>> per_doc(docs.size());
    parallel_for(docs.size(), config_.jobs, [&](std::size_t d) {
      per_doc[d] = chunk_document(docs[d], config_.chunk_target, *tokenizer_);
    });
    std::string out;
    std::size_t total = 0;
    for (const auto& chunks : per_doc) {
      for (const Chunk& c : chunks) {
        ordered_json j;
        j["doc_id"] = c.doc_id;
        j["chunk_index"] = c.chunk_index;
        j["text"] = c.text;
        j["token_count"] = c.token_count;
        j["first_sentence"] = c.first_sentence;
        j["last_sentence"] = c.last_sentence;
        append_line(out, j);
        ++total;
      }
    }
    io::write_file(chunks_path(), out);
    log(fmt::format("[ingest] {} documents, {} chunks", docs.size(), total));
  });
}

void Pipeline::speculate() {
  if (!config_.speculation) {
    log("[speculate] skipped: speculation is disabled");
    return;
  }
  std::vector<fs::path> outputs;
  for (int run = 1; run <= config_.num_kbs; ++run) outputs.push_back(questions_path(run));
  outputs.push_back(speculation_stats_path());
  const json params = {{"backend", backend_params(config_)},
                       {"template", config_.speculation_template()},
                       {"num_kbs", config_.num_kbs}};
  run_stage("speculate", {{chunks_path(), "ingest"}}, params, outputs,
            [&](const std::string& params_sha) {
              const auto chunks = read_chunks();
              const LlmSession sess = session("speculate");
              const std::string tid = config_.speculation_template();
              const auto runs = static_cast<std::size_t>(config_.num_kbs);
              std::vector<json> results(chunks.size() * runs);
              Journal journal(workdir() / "speculate" / "journal.jsonl", params_sha);
              parallel_for(results.size(), config_.jobs, [&](std::size_t item) {
                const Chunk& chunk = chunks[item / runs];
                const int run = static_cast<int>(item % runs) + 1;
                const std::string key = item_key(chunk, run);
                if (const json* cached = journal.find(key)) {
                  results[item] = *cached;
                  return;
                }
                SpeculationResult r = speculate_questions(chunk, sess, tid, run);
                json value = {{"questions", json::array()}, {"warnings", r.warnings}};
                for (const auto& q : r.questions) value["questions"].push_back(q.question_text);
                journal.record(key, value);
                results[item] = std::move(value);
              });
              std::map<std::size_t, std::size_t> per_chunk;
              std::size_t total = 0;
              for (const json& value : results) {
                ++per_chunk[value.at("questions").size()];
                total += value.at("questions").size();
              }
              ordered_json stats;
              stats["chunks"] = chunks.size();
              stats["runs"] = runs;
              stats["questions"] = total;
              stats["mean_per_chunk_run"] =
                  results.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(results.size());
              stats["histogram"] = ordered_json::object();
              for (const auto& [count, n] : per_chunk) stats["histogram"][std::to_string(count)] = n;
              io::write_file(speculation_stats_path(), stats.dump(2) + "\n");
              for (std::size_t r = 0; r < runs; ++r) {
                std::string out;
                for (std::size_t c = 0; c < chunks.size(); ++c) {
                  const json& value = results[c * runs + r];
                  for (const auto& w : value.at("warnings")) {
                    log(fmt::format("[speculate] {}#{} run {}: {}", chunks[c].doc_id,
                                    chunks[c].chunk_index, r + 1, w.get<std::string>()));
                  }
                  for (const auto& q : value.at("questions")) {
                    ordered_json j;
                    j["doc_id"] = chunks[c].doc_id;
                    j["chunk_index"] = chunks[c].chunk_index;
                    j["sample_run"] = r + 1;
                    j["question"] = q;
                    append_line(out, j);
                  }
                }
                io::write_file(questions_path(static_cast<int>(r) + 1), out);
              }
              journal.finish();
            });
}

void Pipeline::extract() {
  std::vector<Input> inputs{{chunks_path(), "ingest"}};
  if (config_.speculation) {
    for (int run = 1; run <= config_.num_kbs; ++run) {
      inputs.push_back({questions_path(run), "speculate"});
    }
  }
  std::vector<fs::path> outputs;
  for (int run = 1; run <= config_.num_kbs; ++run) outputs.push_back(run_kb_path(run));
  const json params = {{"backend", backend_params(config_)},
                       {"template", config_.extraction_template()},
                       {"speculation", config_.speculation},
                       {"num_kbs", config_.num_kbs}};
  run_stage("extract", inputs, params, outputs, [&](const std::string& params_sha) {
    const auto chunks = read_chunks();
    const auto runs = static_cast<std::size_t>(config_.num_kbs);
    // (doc_id, chunk_index, run) -> questions
    std::map<std::tuple<std::string, std::size_t, int>, std::vector<SpeculatedQuestion>> questions;
    if (config_.speculation) {
      for (int run = 1; run <= config_.num_kbs; ++run) {
        read_jsonl(questions_path(run), [&](const json& j, std::size_t) {
          SpeculatedQuestion q{j.at("question").get<std::string>(),
                               j.at("doc_id").get<std::string>(),
                               j.at("chunk_index").get<std::size_t>(), run};
          questions[{q.doc_id, q.chunk_index, run}].push_back(std::move(q));
        });
      }
    }
    const LlmSession sess = session("extract");
    const std::string tid = config_.extraction_template();
    std::vector<json> results(chunks.size() * runs);
    Journal journal(workdir() / "extract" / "journal.jsonl", params_sha);
    parallel_for(results.size(), config_.jobs, [&](std::size_t item) {
      const Chunk& chunk = chunks[item / runs];
      const int run = static_cast<int>(item % runs) + 1;
      const std::string key = item_key(chunk, run);
      if (const json* cached = journal.find(key)) {
        results[item] = *cached;
        return;
      }
      static const std::vector<SpeculatedQuestion> kNone;
      const auto it = questions.find({chunk.doc_id, chunk.chunk_index, run});
      const auto& qs = it == questions.end() ? kNone : it->second;
      ExtractionResult r = extract_edps(chunk, qs, sess, tid, run);
      json value = {{"edps", json::array()},
                    {"malformed", r.malformed_count},
                    {"warnings", r.warnings}};
      for (const Edp& e : r.edps) value["edps"].push_back({e.entity, e.description});
      journal.record(key, value);
      results[item] = std::move(value);
    });
    for (std::size_t r = 0; r < runs; ++r) {
      const int run = static_cast<int>(r) + 1;
      std::vector<Edp> edps;
      std::size_t malformed = 0;
      for (std::size_t c = 0; c < chunks.size(); ++c) {
        const json& value = results[c * runs + r];
        for (const auto& w : value.at("warnings")) {
          log(fmt::format("[extract] {}#{} run {}: {}", chunks[c].doc_id, chunks[c].chunk_index,
                          run, w.get<std::string>()));
        }
        malformed += value.at("malformed").get<std::size_t>();
        for (const auto& pair : value.at("edps")) {
          edps.push_back(Edp::make(chunks[c].doc_id, pair.at(0).get<std::string>(),
                                   pair.at(1).get<std::string>(), chunks[c].chunk_index, run));
        }
      }
      const KnowledgeBase kb = build_run_kb(edps, run);
      save_kb(kb, run_kb_path(run));
      log(fmt::format("[extract] run {}: {} EDPs ({} unique), {} malformed tuples", run,
                      edps.size(), kb.size(), malformed));
    }
    journal.finish();
  });
}

void Pipeline::merge() {
  std::vector<Input> inputs;
  for (int run = 1; run <= config_.num_kbs; ++run) inputs.push_back({run_kb_path(run), "extract"});
  run_stage("merge", inputs, json{{"num_kbs", config_.num_kbs}}, {final_kb_path()},
            [&](const std::string&) {
              std::vector<KnowledgeBase> kbs;
              for (int run = 1; run <= config_.num_kbs; ++run) kbs.push_back(load_kb(run_kb_path(run)));
              const KnowledgeBase merged = merge_kbs(kbs);
              save_kb(merged, final_kb_path());
              log(fmt::format("[merge] {} runs -> {} EDPs", kbs.size(), merged.size()));
            });
}

void Pipeline::index() {
  std::vector<Input> inputs;
  switch (config_.unit) {
    case UnitKind::kEdp:
      inputs.push_back({final_kb_path(), "merge"});
      break;
    case UnitKind::kChunk:
      inputs.push_back({chunks_path(), "ingest"});
      break;
    case UnitKind::kExternal:
      inputs.push_back({config_.paths.units, ""});
      break;
  }
  if (config_.tokenizer.kind == TokenizerSpec::Kind::kBpe) {
    inputs.push_back({config_.tokenizer.vocab_path, ""});
  }
  const json params = {{"unit", to_string(config_.unit)},
                       {"scope", to_string(config_.scope)},
                       {"tokenizer", tokenizer_params(config_.tokenizer)},
                       {"k1", config_.bm25.k1},
                       {"b", config_.bm25.b}};
  run_stage("index", inputs, params, {index_path(), units_path()}, [&](const std::string&) {
    std::vector<RetrievalUnit> units;
    switch (config_.unit) {
      case UnitKind::kEdp: {
        const KnowledgeBase kb = load_kb(final_kb_path());
        for (const auto& [id, edp] : kb.entries()) units.push_back(unit_from_edp(edp, *tokenizer_));
        break;
      }
      case UnitKind::kChunk:
        for (const Chunk& c : read_chunks()) units.push_back(unit_from_chunk(c, *tokenizer_));
        break;
      case UnitKind::kExternal:
        units = load_external_units(config_.paths.units, *tokenizer_);
        break;
    }
    std::map<std::string, std::vector<RetrievalUnit>> groups;
    for (RetrievalUnit& u : units) {
      const std::string key = config_.scope == RetrievalScope::kCorpus ? std::string(kCorpusKey)
                                                                       : u.provenance.doc_id;
      groups[key].push_back(std::move(u));
    }
    ordered_json set;
    set["format"] = kIndexSetFormat;
    set["unit_kind"] = to_string(config_.unit);
    set["scope"] = to_string(config_.scope);
    ordered_json indexes = ordered_json::object();
    std::string units_out;
    for (const auto& [key, group] : groups) {
      const Bm25Index idx = Bm25Index::build(group, config_.bm25, config_.jobs);
      indexes[key] = ordered_json::parse(idx.to_json().dump());
      for (const RetrievalUnit& u : group) append_line(units_out, unit_to_json(u));
    }
    set["indexes"] = std::move(indexes);
    io::write_file(index_path(), set.dump() + "\n");
    io::write_file(units_path(), units_out);
    log(fmt::format("[index] {} {} units in {} index(es)", units.size(), to_string(config_.unit),
                    groups.size()));
  });
}

namespace {

LoadedIndexSet load_index_set(const fs::path& index_path, const fs::path& units_path) {
  LoadedIndexSet set;
  const json j = [&] {
    try {
      return json::parse(io::read_file(index_path));
    } catch (const json::exception& ex) {
      throw FormatError(index_path.string() + ": " + ex.what());
    }
  }();
  if (j.value("format", "") != kIndexSetFormat) {
    throw FormatError(index_path.string() + ": unsupported index set format");
  }
  set.scope = retrieval_scope_from_string(j.at("scope").get<std::string>());
  for (const auto& [key, idx] : j.at("indexes").items()) {
    set.indexes.emplace(key, Bm25Index::from_json(idx));
  }
  read_jsonl(units_path, [&](const json& u, std::size_t) {
    RetrievalUnit unit = unit_from_json(u);
    const std::string key =
        set.scope == RetrievalScope::kCorpus ? std::string(kCorpusKey) : unit.provenance.doc_id;
    set.units[key].push_back(std::move(unit));
  });
  return set;
}

}  // namespace

void Pipeline::retrieve(std::optional<std::size_t> budget) {
  for (std::size_t b : budgets_for(budget)) {
    const json params = {{"budget", b}};
    run_stage(fmt::format("retrieve@{}", b),
              {{index_path(), "index"}, {units_path(), "index"}, {config_.paths.tasks, ""}},
              params, {contexts_path(b)}, [&](const std::string&) {
                const auto set = load_index_set(index_path(), units_path());
                const auto tasks = load_tasks(config_.paths.tasks);
                std::vector<std::string> lines(tasks.size());
                parallel_for(tasks.size(), config_.jobs, [&](std::size_t t) {
                  const QaTask& task = tasks[t];
                  const std::string key = set.scope == RetrievalScope::kCorpus
                                              ? std::string(kCorpusKey)
                                              : task.doc_id;
                  ordered_json j;
                  j["task_id"] = task.task_id;
                  j["doc_id"] = task.doc_id;
                  j["budget"] = b;
                  const auto idx = set.indexes.find(key);
                  if (idx == set.indexes.end()) {
                    j["used_tokens"] = 0;
                    j["unit_ids"] = json::array();
                    j["context"] = "";
                  } else {
                    const auto& units = set.units.at(key);
                    const RankedContext ctx =
                        retrieve_under_budget(idx->second, units, task.question, b);
                    j["used_tokens"] = ctx.used_tokens;
                    j["unit_ids"] = ctx.selected;
                    j["context"] = render_context(ctx, units);
                  }
                  lines[t] = j.dump();
                });
                std::string out;
                for (const auto& line : lines) out += line + "\n";
                io::write_file(contexts_path(b), out);
              });
  }
}

void Pipeline::answer(std::optional<std::size_t> budget) {
  for (std::size_t b : budgets_for(budget)) {
    const json params = {{"backend", backend_params(config_)},
                         {"template", config_.answer_template()},
                         {"profile", to_string(config_.profile)}};
    run_stage(fmt::format("answer@{}", b),
              {{contexts_path(b), "retrieve"}, {config_.paths.tasks, ""}}, params,
              {predictions_path(b)}, [&](const std::string&) {
                const auto tasks = load_tasks(config_.paths.tasks);
                std::map<std::string, std::string> contexts;
                read_jsonl(contexts_path(b), [&](const json& j, std::size_t) {
                  contexts[j.at("task_id").get<std::string>()] = j.at("context").get<std::string>();
                });
                const LlmSession sess = session(fmt::format("answer@{}", b));
                const std::string tid = config_.answer_template();
                std::vector<std::string> lines(tasks.size());
                parallel_for(tasks.size(), config_.jobs, [&](std::size_t t) {
                  const QaTask& task = tasks[t];
                  const auto ctx = contexts.find(task.task_id);
                  if (ctx == contexts.end()) {
                    throw PrerequisiteError("no retrieved context for task " + task.task_id +
                                                "; rerun 'fader retrieve'",
                                            "retrieve");
                  }
                  AnswerRequest req{task.task_id, task.doc_id, task.question, ctx->second,
                                    task.options};
                  ordered_json j;
                  j["task_id"] = task.task_id;
                  const std::string first = answer_question(req, sess, tid);
                  if (config_.profile == DatasetProfile::kNarrativeQa) {
                    j["answer"] = compress_answer(req, first, sess);
                    j["round1"] = first;
                    j["option_index"] = nullptr;
                  } else if (config_.profile == DatasetProfile::kQuality) {
                    j["answer"] = first;
                    const auto idx = parse_option_index(first);
                    j["option_index"] = idx ? json(*idx) : json(nullptr);
                  } else {
                    j["answer"] = first;
                    j["option_index"] = nullptr;
                  }
                  lines[t] = j.dump();
                });
                std::string out;
                for (const auto& line : lines) out += line + "\n";
                io::write_file(predictions_path(b), out);
              });
  }
}

void Pipeline::eval(std::optional<std::size_t> budget) {
  const auto metrics = config_.metrics();
  for (std::size_t b : budgets_for(budget)) {
    std::vector<fs::path> outputs;
    for (const auto& m : metrics) outputs.push_back(report_path(b, m));
    const json params = {{"metrics", metrics}, {"bleu_smoothing", config_.bleu_smoothing}};
    run_stage(fmt::format("eval@{}", b), {{predictions_path(b), "answer"}, {config_.paths.tasks, ""}},
              params, outputs, [&](const std::string&) {
                const auto tasks = load_tasks(config_.paths.tasks);
                std::vector<Prediction> preds;
                read_jsonl(predictions_path(b), [&](const json& j, std::size_t) {
                  Prediction p;
                  p.task_id = j.at("task_id").get<std::string>();
                  p.answer = j.at("answer").get<std::string>();
                  if (j.contains("option_index") && !j["option_index"].is_null()) {
                    p.option_index = j["option_index"].get<int>();
                  }
                  preds.push_back(std::move(p));
                });
                for (const auto& m : metrics) {
                  const MetricReport report =
                      evaluate(m, tasks, preds, config_.jobs, {config_.bleu_smoothing});
                  ordered_json j;
                  j["metric"] = report.metric_name;
                  j["budget_tokens"] = b;
                  j["aggregate"] = report.aggregate;
                  j["task_count"] = report.per_task.size();
                  j["invalid_predictions"] = report.invalid_predictions;
                  j["tokenization"] =
                      m == kMetricTokenF1
                          ? "lowercased, punctuation and articles removed, whitespace split"
                          : (m == kMetricMcAccuracy ? "option index"
                                                    : "default tokenizer, lowercased, "
                                                      "punctuation tokens kept");
                  ordered_json per = ordered_json::array();
                  for (const TaskScore& s : report.per_task) {
                    per.push_back({{"task_id", s.task_id}, {"score", s.score}});
                  }
                  j["per_task"] = std::move(per);
                  io::write_file(report_path(b, m), j.dump(2) + "\n");
                  log(fmt::format("[eval@{}] {} = {:.6f}", b, m, report.aggregate));
                }
              });
  }
}

void Pipeline::curve() {
  const auto metrics = config_.metrics();
  std::vector<Input> inputs;
  for (const auto& m : metrics) {
    for (std::size_t b : config_.budgets) inputs.push_back({report_path(b, m), "eval"});
  }
  const json params = {{"budgets", config_.budgets}, {"metrics", metrics}};
  run_stage("curve", inputs, params, {curve_path(), frontier_path()}, [&](const std::string&) {
    std::vector<CurveRow> rows;
    std::vector<CurveRow> frontier_rows;
    for (const auto& m : metrics) {
      std::vector<std::pair<std::size_t, MetricReport>> runs;
      for (std::size_t b : config_.budgets) {
        const json j = json::parse(io::read_file(report_path(b, m)));
        MetricReport r;
        r.metric_name = m;
        r.aggregate = j.at("aggregate").get<double>();
        runs.emplace_back(b, std::move(r));
      }
      const Curve c = build_curve(runs);
      for (const CurvePoint& p : c) rows.push_back({p.budget, m, p.score});
      for (const CurvePoint& p : pareto_frontier(c)) frontier_rows.push_back({p.budget, m, p.score});
    }
    io::write_file(curve_path(), curve_csv(rows));
    io::write_file(frontier_path(), curve_csv(frontier_rows));
  });
}

void Pipeline::simq() {
  if (!config_.speculation) {
    throw ConfigError("simq needs speculated questions, but speculation is disabled");
  }
  if (config_.paths.embeddings.empty()) {
    throw ConfigError("simq needs paths.embeddings (a vector sidecar JSONL)");
  }
  std::vector<Input> inputs{{config_.paths.tasks, ""}, {config_.paths.embeddings, ""}};
  for (int run = 1; run <= config_.num_kbs; ++run) inputs.push_back({questions_path(run), "speculate"});
  const fs::path table_path = workdir() / "simq" / "report.txt";
  run_stage("simq", inputs, json{{"top_k", config_.simq_top_k}},
            {simq_report_path(), table_path}, [&](const std::string&) {
              const FileEmbeddingProvider provider(config_.paths.embeddings);
              std::map<std::string, std::set<std::string>> real;
              for (const QaTask& t : load_tasks(config_.paths.tasks)) {
                real[t.doc_id].insert(t.question);
              }
              std::map<std::string, std::set<std::string>> spec;
              for (int run = 1; run <= config_.num_kbs; ++run) {
                read_jsonl(questions_path(run), [&](const json& j, std::size_t) {
                  spec[j.at("doc_id").get<std::string>()].insert(
                      j.at("question").get<std::string>());
                });
              }
              std::vector<ScoredPair> pairs;
              for (const auto& [doc, spec_qs] : spec) {
                const auto it = real.find(doc);
                if (it == real.end()) continue;
                const std::vector<std::string> r(it->second.begin(), it->second.end());
                const std::vector<std::string> s(spec_qs.begin(), spec_qs.end());
                auto report = bucket_similarities(r, s, provider, s.size());
                for (auto& p : report.top_pairs) pairs.push_back(std::move(p));
              }
              if (pairs.empty()) {
                throw ArgumentError("no document has both real and speculated questions");
              }
              const SimilarityBucketReport report = bucket_report(std::move(pairs),
                                                                  config_.simq_top_k);
              io::write_file(simq_report_path(), report.to_json().dump(2) + "\n");
              io::write_file(table_path, report.to_table());
              log(fmt::format("[simq] {} pairs: close {:.4f}, topic {:.4f}", report.pair_count,
                              report.close_fraction, report.topic_fraction));
            });
}

void Pipeline::run_all() {
  if (config_.unit != UnitKind::kExternal) ingest();
  if (config_.unit == UnitKind::kEdp) {
    speculate();
    extract();
    merge();
  }
  index();
  for (std::size_t b : config_.budgets) {
    retrieve(b);
    answer(b);
    eval(b);
  }
  curve();
}

fs::path run_sweep(const RunConfig& base, const std::string& param,
                   const std::vector<std::size_t>& values, StageOptions options) {
  if (param != "num_kbs" && param != "chunk_target") {
    throw ConfigError("sweep parameter must be num_kbs or chunk_target, got '" + param + "'");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const fs::path root = base.paths.workdir / "sweep";
  std::string out = "value,budget_tokens,metric,score,kb_size\n";
  for (std::size_t v : values) {
    RunConfig c = base;
    if (param == "num_kbs") {
      c.num_kbs = static_cast<int>(v);
    } else {
      c.chunk_target = v;
    }
    c.paths.workdir = root / fmt::format("{}-{}", param, v);
    Pipeline p(c, options);
    p.run_all();
    std::string kb_size;
    if (c.unit == UnitKind::kEdp) kb_size = std::to_string(load_kb(p.final_kb_path()).size());
    for (const CurveRow& row : parse_curve_csv(io::read_file(p.curve_path()))) {
      out += fmt::format("{},{},{},{:.6f},{}\n", v, row.budget, row.metric, row.score, kb_size);
    }
  }
  const fs::path summary = root / (param + ".csv");
  io::write_file(summary, out);
  return summary;
}

}  // namespace fader
