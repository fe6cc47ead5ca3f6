#include "fader/kb.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <sstream>
#include <tuple>

#include "fader/errors.hpp"
#include "fader/hashing.hpp"
#include "fader/io.hpp"

namespace fader {

namespace {

constexpr std::string_view kKbFormat = "fader-kb/1";

bool precedes(const Edp& a, const Edp& b) {
  return std::tie(a.sample_run, a.chunk_index, a.entity, a.description) <
         std::tie(b.sample_run, b.chunk_index, b.entity, b.description);
}

std::string make_kb_id(const KbScope& scope, const std::set<int>& runs) {
  std::string id = scope.label() + "@runs=";
  bool first = true;
  for (int r : runs) {
    if (!first) id += ',';
    id += std::to_string(r);
    first = false;
  }
  return id;
}

}  // namespace

std::string normalize_for_key(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
  }
  return out;
}

std::string compute_edp_id(std::string_view doc_id, std::string_view entity,
                           std::string_view description) {
  std::string key;
  key.reserve(doc_id.size() + entity.size() + description.size() + 2);
  key += doc_id;
  key += '\x1f';
  key += normalize_for_key(entity);
  key += '\x1f';
  key += normalize_for_key(description);
  return sha256_hex(key).substr(0, 32);
}

Edp Edp::make(std::string doc_id, std::string entity, std::string description,
              std::size_t chunk_index, int sample_run) {
  Edp e;
  e.edp_id = compute_edp_id(doc_id, entity, description);
  e.entity = std::move(entity);
  e.description = std::move(description);
  e.doc_id = std::move(doc_id);
  e.chunk_index = chunk_index;
  e.sample_run = sample_run;
  return e;
}

KbScope KbScope::from_label(std::string_view label) {
  if (label == "corpus") return corpus();
  if (label.substr(0, 4) == "doc:" && label.size() > 4) return document(std::string(label.substr(4)));
  throw ArgumentError("bad KB scope label: " + std::string(label));
}

KnowledgeBase::KnowledgeBase(KbScope scope, std::set<int> runs, const std::vector<Edp>& edps)
    : scope_(std::move(scope)), runs_(std::move(runs)) {
  for (const Edp& e : edps) insert(e);
  kb_id_ = make_kb_id(scope_, runs_);
}

void KnowledgeBase::insert(const Edp& edp) {
  auto [it, inserted] = entries_.try_emplace(edp.edp_id, edp);
  if (!inserted && precedes(edp, it->second)) it->second = edp;
}

std::vector<Edp> KnowledgeBase::to_vector() const {
  std::vector<Edp> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

KnowledgeBase build_run_kb(const std::vector<Edp>& edps, int run, KbScope scope) {
  if (run < 1) throw ArgumentError("sample run indices start at 1");
  for (const Edp& e : edps) {
    if (e.sample_run != run) {
      throw ArgumentError("EDP " + e.edp_id + " belongs to run " + std::to_string(e.sample_run) +
                          ", expected run " + std::to_string(run));
    }
    if (!scope.is_corpus() && e.doc_id != scope.doc_id) {
      throw ArgumentError("EDP " + e.edp_id + " from document '" + e.doc_id +
                          "' is outside scope " + scope.label());
    }
  }
  return KnowledgeBase(std::move(scope), {run}, edps);
}

KnowledgeBase merge_kbs(const std::vector<KnowledgeBase>& kbs) {
  if (kbs.empty()) return KnowledgeBase(KbScope::corpus(), {}, {});
  KnowledgeBase merged;
  merged.scope_ = kbs.front().scope();
  for (const KnowledgeBase& kb : kbs) {
    if (!(kb.scope() == merged.scope_)) {
      throw ArgumentError("cannot merge KBs with scopes " + merged.scope_.label() + " and " +
                          kb.scope().label());
    }
    merged.runs_.insert(kb.runs_.begin(), kb.runs_.end());
    for (const auto& [id, e] : kb.entries()) merged.insert(e);
  }
  merged.kb_id_ = make_kb_id(merged.scope_, merged.runs_);
  return merged;
}

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path) {
  using ordered = nlohmann::ordered_json;
  std::string out;
  ordered header;
  header["kb_header"]["format"] = kKbFormat;
  header["kb_header"]["kb_id"] = kb.kb_id();
  header["kb_header"]["scope"] = kb.scope().label();
  header["kb_header"]["runs_included"] = kb.runs_included();
  out += header.dump();
  out += '\n';
  for (const auto& [id, e] : kb.entries()) {
    ordered line;
    line["edp_id"] = e.edp_id;
    line["doc_id"] = e.doc_id;
    line["chunk_index"] = e.chunk_index;
    line["sample_run"] = e.sample_run;
    line["entity"] = e.entity;
    line["description"] = e.description;
    line["render_text"] = e.render_text();
    out += line.dump();
    out += '\n';
  }
  io::write_file(path, out);
}

KnowledgeBase load_kb(const std::filesystem::path& path) {
  std::string content;
  try {
    content = io::read_file(path);
  } catch (const std::exception& ex) {
    throw FormatError(ex.what());
  }

  bool have_header = false;
  KbScope scope;
  std::set<int> runs;
  std::vector<Edp> edps;
  std::set<std::string> seen;

  io::for_each_line(content, [&](std::string_view line, std::size_t line_no) {
    if (line.empty()) return;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      throw FormatError(std::string("invalid JSON: ") + ex.what(), line_no);
    }
    if (!j.is_object()) throw FormatError("expected a JSON object", line_no);
    try {
      if (!have_header) {
        if (!j.contains("kb_header")) throw FormatError("missing kb_header line", line_no);
        const auto& h = j.at("kb_header");
        if (h.at("format").get<std::string>() != kKbFormat) {
          throw FormatError("unsupported KB format " + h.at("format").dump(), line_no);
        }
        scope = KbScope::from_label(h.at("scope").get<std::string>());
        runs = h.at("runs_included").get<std::set<int>>();
        have_header = true;
        return;
      }
      for (const char* field :
           {"edp_id", "doc_id", "chunk_index", "sample_run", "entity", "description"}) {
        if (!j.contains(field)) throw FormatError(std::string("missing \"") + field + "\"", line_no);
      }
      Edp e = Edp::make(j.at("doc_id").get<std::string>(), j.at("entity").get<std::string>(),
                        j.at("description").get<std::string>(),
                        j.at("chunk_index").get<std::size_t>(), j.at("sample_run").get<int>());
      if (e.entity.empty() || e.description.empty()) {
        throw FormatError("empty entity or description", line_no);
      }
      if (j.at("edp_id").get<std::string>() != e.edp_id) {
        throw FormatError("edp_id does not match content hash", line_no);
      }
      if (j.contains("render_text") && j.at("render_text").get<std::string>() != e.render_text()) {
        throw FormatError("render_text does not match entity and description", line_no);
      }
      if (!runs.count(e.sample_run)) throw FormatError("sample_run not in runs_included", line_no);
      if (!scope.is_corpus() && e.doc_id != scope.doc_id) {
        throw FormatError("doc_id outside KB scope", line_no);
      }
      if (!seen.insert(e.edp_id).second) throw FormatError("duplicate edp_id", line_no);
      edps.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("schema violation: ") + ex.what(), line_no);
    } catch (const ArgumentError& ex) {
      throw FormatError(ex.what(), line_no);
    }
  });
  if (!have_header) throw FormatError("empty KB file: " + path.string());
  return KnowledgeBase(std::move(scope), std::move(runs), edps);
}

}  // namespace fader
