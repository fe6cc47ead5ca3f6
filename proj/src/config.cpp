#include <fmt/format.h>

#include <set>

#include "fader/errors.hpp"
#include "fader/io.hpp"
#include "fader/pipeline.hpp"

namespace fader {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, std::string_view where,
                         std::initializer_list<std::string_view> known) {
  if (!j.is_object()) throw ConfigError(fmt::format("'{}' must be an object", where));
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (std::string_view k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(fmt::format("unknown config key '{}{}'", where, key));
  }
}

fs::path resolve(const fs::path& base, const json& value) {
  fs::path p = value.get<std::string>();
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

std::string text_field(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key)) throw FormatError(fmt::format("missing field '{}'", key), line_no);
  if (!j[key].is_string()) throw FormatError(fmt::format("'{}' must be a string", key), line_no);
  std::string s = j[key].get<std::string>();
  if (s.empty()) throw FormatError(fmt::format("'{}' is empty", key), line_no);
  return s;
}

json parse_line(std::string_view line, std::size_t line_no) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw FormatError("expected a JSON object", line_no);
    return j;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("invalid JSON: ") + ex.what(), line_no);
  }
}

bool blank(std::string_view line) {
  return line.find_first_not_of(" \t") == std::string_view::npos;
}

}  // namespace

std::string_view to_string(RetrievalScope scope) {
  return scope == RetrievalScope::kCorpus ? "corpus" : "document";
}

RetrievalScope retrieval_scope_from_string(std::string_view s) {
  if (s == "document") return RetrievalScope::kDocument;
  if (s == "corpus") return RetrievalScope::kCorpus;
  throw ConfigError("unknown retrieval scope '" + std::string(s) +
                    "' (expected document or corpus)");
}

void RunConfig::validate() const {
  if (budgets.empty()) throw ConfigError("budgets: at least one budget is required");
  for (std::size_t k = 1; k < budgets.size(); ++k) {
    if (budgets[k] <= budgets[k - 1]) {
      throw ConfigError(fmt::format("budgets must be strictly increasing ({} after {})",
                                    budgets[k], budgets[k - 1]));
    }
  }
  if (num_kbs < 1) throw ConfigError("num_kbs must be at least 1");
  if (chunk_target < 1) throw ConfigError("chunk_target must be at least 1");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (!(bm25.k1 >= 0.0)) throw ConfigError("bm25.k1 must be non-negative");
  if (!(bm25.b >= 0.0 && bm25.b <= 1.0)) throw ConfigError("bm25.b must lie in [0, 1]");
  if (backend.kind == "mock") {
    if (!backend.seed) throw ConfigError("backend.seed is required for the mock backend");
  } else if (backend.kind == "http") {
    if (backend.http.base_url.empty()) throw ConfigError("backend.http.base_url is required");
    if (backend.http.model.empty()) throw ConfigError("backend.http.model is required");
  } else {
    throw ConfigError("backend.kind must be mock or http, got '" + backend.kind + "'");
  }
  if (backend.retry.max_attempts < 1) throw ConfigError("backend.retry.max_attempts must be >= 1");
  if (tokenizer.kind == TokenizerSpec::Kind::kBpe && tokenizer.vocab_path.empty()) {
    throw ConfigError("tokenizer.vocab_path is required for the bpe tokenizer");
  }
  if (paths.workdir.empty()) throw ConfigError("paths.workdir is required");
  if (paths.tasks.empty()) throw ConfigError("paths.tasks is required");
  if (unit == UnitKind::kExternal) {
    if (paths.units.empty()) throw ConfigError("paths.units is required for unit=external");
  } else if (paths.corpus.empty()) {
    throw ConfigError("paths.corpus is required");
  }
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    reject_unknown_keys(j, "",
                        {"profile", "tokenizer", "chunk_target", "budgets", "num_kbs", "unit",
                         "speculation", "retrieval_scope", "jobs", "bleu_smoothing",
                         "transcripts", "simq_top_k", "backend", "bm25", "paths"});
    if (j.contains("profile")) c.profile = profile_from_string(j["profile"].get<std::string>());
    if (j.contains("tokenizer")) {
      const json& t = j["tokenizer"];
      if (t.is_string()) {
        if (t.get<std::string>() != "default") {
          throw ConfigError("tokenizer must be \"default\" or {\"kind\":\"bpe\",\"vocab_path\"}");
        }
      } else {
        reject_unknown_keys(t, "tokenizer.", {"kind", "vocab_path"});
        const std::string kind = t.at("kind").get<std::string>();
        if (kind == "bpe") {
          c.tokenizer = TokenizerSpec::bpe(
              t.contains("vocab_path") ? resolve(base_dir, t["vocab_path"]) : fs::path());
        } else if (kind != "default") {
          throw ConfigError("tokenizer.kind must be default or bpe");
        }
      }
    }
    if (j.contains("chunk_target")) c.chunk_target = j["chunk_target"].get<std::size_t>();
    if (j.contains("budgets")) c.budgets = j["budgets"].get<std::vector<std::size_t>>();
    if (j.contains("num_kbs")) c.num_kbs = j["num_kbs"].get<int>();
    if (j.contains("unit")) {
      try {
        c.unit = unit_kind_from_string(j["unit"].get<std::string>());
      } catch (const ArgumentError& ex) {
        throw ConfigError(ex.what());
      }
    }
    if (j.contains("speculation")) c.speculation = j["speculation"].get<bool>();
    if (j.contains("retrieval_scope")) {
      c.scope = retrieval_scope_from_string(j["retrieval_scope"].get<std::string>());
    }
    if (j.contains("jobs")) c.jobs = j["jobs"].get<int>();
    if (j.contains("bleu_smoothing")) c.bleu_smoothing = j["bleu_smoothing"].get<bool>();
    if (j.contains("transcripts")) c.transcripts = j["transcripts"].get<bool>();
    if (j.contains("simq_top_k")) c.simq_top_k = j["simq_top_k"].get<std::size_t>();
    if (j.contains("backend")) {
      const json& b = j["backend"];
      reject_unknown_keys(b, "backend.", {"kind", "seed", "random_multiple_choice", "http", "retry"});
      if (b.contains("kind")) c.backend.kind = b["kind"].get<std::string>();
      if (b.contains("seed")) c.backend.seed = b["seed"].get<std::uint64_t>();
      if (b.contains("random_multiple_choice")) {
        c.backend.mock.random_multiple_choice = b["random_multiple_choice"].get<bool>();
      }
      if (b.contains("http")) {
        const json& h = b["http"];
        reject_unknown_keys(h, "backend.http.",
                            {"base_url", "path", "model", "api_key_env", "temperature",
                             "timeout_s"});
        auto& hc = c.backend.http;
        if (h.contains("base_url")) hc.base_url = h["base_url"].get<std::string>();
        if (h.contains("path")) hc.path = h["path"].get<std::string>();
        if (h.contains("model")) hc.model = h["model"].get<std::string>();
        if (h.contains("api_key_env")) hc.api_key_env = h["api_key_env"].get<std::string>();
        if (h.contains("temperature")) hc.temperature = h["temperature"].get<double>();
        if (h.contains("timeout_s")) hc.timeout = std::chrono::seconds(h["timeout_s"].get<int>());
      }
      if (b.contains("retry")) {
        const json& r = b["retry"];
        reject_unknown_keys(r, "backend.retry.", {"max_attempts", "base_delay_ms", "multiplier"});
        auto& rc = c.backend.retry;
        if (r.contains("max_attempts")) rc.max_attempts = r["max_attempts"].get<int>();
        if (r.contains("base_delay_ms")) {
          rc.base_delay = std::chrono::milliseconds(r["base_delay_ms"].get<long>());
        }
        if (r.contains("multiplier")) rc.multiplier = r["multiplier"].get<double>();
      }
    }
    if (j.contains("bm25")) {
      const json& b = j["bm25"];
      reject_unknown_keys(b, "bm25.", {"k1", "b"});
      if (b.contains("k1")) c.bm25.k1 = b["k1"].get<double>();
      if (b.contains("b")) c.bm25.b = b["b"].get<double>();
    }
    if (j.contains("paths")) {
      const json& p = j["paths"];
      reject_unknown_keys(p, "paths.", {"corpus", "tasks", "workdir", "units", "embeddings"});
      if (p.contains("corpus")) c.paths.corpus = resolve(base_dir, p["corpus"]);
      if (p.contains("tasks")) c.paths.tasks = resolve(base_dir, p["tasks"]);
      if (p.contains("workdir")) c.paths.workdir = resolve(base_dir, p["workdir"]);
      if (p.contains("units")) c.paths.units = resolve(base_dir, p["units"]);
      if (p.contains("embeddings")) c.paths.embeddings = resolve(base_dir, p["embeddings"]);
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  return c;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["profile"] = to_string(profile);
  if (tokenizer.kind == TokenizerSpec::Kind::kBpe) {
    j["tokenizer"] = {{"kind", "bpe"}, {"vocab_path", tokenizer.vocab_path.string()}};
  } else {
    j["tokenizer"] = "default";
  }
  j["chunk_target"] = chunk_target;
  j["budgets"] = budgets;
  j["num_kbs"] = num_kbs;
  j["unit"] = to_string(unit);
  j["speculation"] = speculation;
  j["retrieval_scope"] = to_string(scope);
  j["jobs"] = jobs;
  j["bleu_smoothing"] = bleu_smoothing;
  j["transcripts"] = transcripts;
  j["simq_top_k"] = simq_top_k;
  nlohmann::ordered_json b;
  b["kind"] = backend.kind;
  if (backend.seed) b["seed"] = *backend.seed;
  b["random_multiple_choice"] = backend.mock.random_multiple_choice;
  b["http"] = {{"base_url", backend.http.base_url},
               {"path", backend.http.path},
               {"model", backend.http.model},
               {"api_key_env", backend.http.api_key_env},
               {"temperature", backend.http.temperature},
               {"timeout_s", backend.http.timeout.count()}};
  b["retry"] = {{"max_attempts", backend.retry.max_attempts},
                {"base_delay_ms", backend.retry.base_delay.count()},
                {"multiplier", backend.retry.multiplier}};
  j["backend"] = std::move(b);
  j["bm25"] = {{"k1", bm25.k1}, {"b", bm25.b}};
  j["paths"] = {{"corpus", paths.corpus.string()},
                {"tasks", paths.tasks.string()},
                {"workdir", paths.workdir.string()},
                {"units", paths.units.string()},
                {"embeddings", paths.embeddings.string()}};
  return j;
}

std::string RunConfig::speculation_template() const {
  return profile == DatasetProfile::kQasper ? "spec_qasper" : "spec_narrative";
}

std::string RunConfig::extraction_template() const {
  return profile == DatasetProfile::kQasper ? "kb_qasper" : "kb_narrative";
}

std::string RunConfig::answer_template() const {
  switch (profile) {
    case DatasetProfile::kNarrativeQa:
      return "qa_narrative_r1";
    case DatasetProfile::kQasper:
      return "qa_qasper";
    case DatasetProfile::kQuality:
      return "qa_quality";
  }
  return "qa_narrative_r1";
}

RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& ex) {
    throw ConfigError("config " + path.string() + ": " + ex.what());
  } catch (const std::runtime_error& ex) {
    throw ConfigError(ex.what());
  }
  RunConfig c = RunConfig::from_json(j, path.parent_path());
  c.validate();
  return c;
}

std::shared_ptr<const LlmBackend> make_backend(const BackendConfig& config) {
  if (config.kind == "mock") {
    if (!config.seed) throw ConfigError("backend.seed is required for the mock backend");
    return mock_backend(*config.seed, config.mock);
  }
  if (config.kind == "http") return std::make_shared<HttpBackend>(config.http);
  throw ConfigError("unknown backend '" + config.kind + "'");
}

std::vector<Document> load_corpus(const fs::path& path) {
  std::vector<Document> docs;
  std::set<std::string> seen;
  io::for_each_line(io::read_file(path), [&](std::string_view line, std::size_t line_no) {
    if (blank(line)) return;
    const json j = parse_line(line, line_no);
    Document d;
    d.doc_id = text_field(j, "doc_id", line_no);
    if (!j.contains("text") || !j["text"].is_string()) {
      throw FormatError("missing string field 'text'", line_no);
    }
    d.text = j["text"].get<std::string>();
    if (j.contains("meta")) {
      if (!j["meta"].is_object()) throw FormatError("'meta' must be an object", line_no);
      for (const auto& [k, v] : j["meta"].items()) {
        d.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    if (!seen.insert(d.doc_id).second) {
      throw FormatError("duplicate doc_id '" + d.doc_id + "'", line_no);
    }
    docs.push_back(std::move(d));
  });
  return docs;
}

std::vector<QaTask> load_tasks(const fs::path& path) {
  std::vector<QaTask> tasks;
  std::set<std::string> seen;
  io::for_each_line(io::read_file(path), [&](std::string_view line, std::size_t line_no) {
    if (blank(line)) return;
    const json j = parse_line(line, line_no);
    QaTask t;
    t.task_id = text_field(j, "task_id", line_no);
    t.doc_id = text_field(j, "doc_id", line_no);
    t.question = text_field(j, "question", line_no);
    try {
      if (j.contains("answers")) t.gold_answers = j["answers"].get<std::vector<std::string>>();
      if (j.contains("options")) t.options = j["options"].get<std::vector<std::string>>();
      if (j.contains("gold_index") && !j["gold_index"].is_null()) {
        t.gold_index = j["gold_index"].get<int>();
      }
    } catch (const json::exception& ex) {
      throw FormatError(std::string("bad field type: ") + ex.what(), line_no);
    }
    if (!t.gold_index && t.gold_answers.empty()) {
      throw FormatError("'answers' must hold at least one gold answer", line_no);
    }
    try {
      validate_task(t);
    } catch (const ArgumentError& ex) {
      throw FormatError(ex.what(), line_no);
    }
    if (!seen.insert(t.task_id).second) {
      throw FormatError("duplicate task_id '" + t.task_id + "'", line_no);
    }
    tasks.push_back(std::move(t));
  });
  return tasks;
}

std::vector<RetrievalUnit> load_external_units(const fs::path& path, const Tokenizer& tokenizer) {
  std::vector<RetrievalUnit> units;
  std::set<std::string> seen;
  io::for_each_line(io::read_file(path), [&](std::string_view line, std::size_t line_no) {
    if (blank(line)) return;
    const json j = parse_line(line, line_no);
    RetrievalUnit u;
    u.unit_id = text_field(j, "unit_id", line_no);
    u.text = text_field(j, "text", line_no);
    u.kind = UnitKind::kExternal;
    u.provenance.doc_id = text_field(j, "doc_id", line_no);
    if (j.contains("chunk_index")) {
      if (!j["chunk_index"].is_number_unsigned()) {
        throw FormatError("'chunk_index' must be a non-negative integer", line_no);
      }
      u.provenance.chunk_index = j["chunk_index"].get<std::size_t>();
    }
    u.token_count = tokenizer.count(u.text);
    if (!seen.insert(u.unit_id).second) {
      throw FormatError("duplicate unit_id '" + u.unit_id + "'", line_no);
    }
    units.push_back(std::move(u));
  });
  return units;
}

}  // namespace fader
