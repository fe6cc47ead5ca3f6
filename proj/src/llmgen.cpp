#include "fader/llmgen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <thread>

#include "fader/errors.hpp"
#include "fader/hashing.hpp"
#include "fader/prompt_assets.hpp"

namespace fader {

namespace {

constexpr std::string_view kAllSlots[] = {
    kSlotExcerpt,     kSlotQuestions,   kSlotDocuments,   kSlotQuestion,   kSlotRound1Answer,
    kSlotOptions[0],  kSlotOptions[1],  kSlotOptions[2],  kSlotOptions[3],
};

struct SlotHit {
  std::size_t pos;
  std::string_view slot;
};

// Non-overlapping slot occurrences in text, left to right.
std::vector<SlotHit> find_slots(std::string_view text) {
  std::vector<SlotHit> hits;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best = std::string_view::npos;
    std::string_view best_slot;
    for (std::string_view slot : kAllSlots) {
      const auto at = text.find(slot, pos);
      if (at < best) {
        best = at;
        best_slot = slot;
      }
    }
    if (best == std::string_view::npos) break;
    hits.push_back({best, best_slot});
    pos = best + best_slot.size();
  }
  return hits;
}

std::string substitute(std::string_view text, const SlotBindings& bindings) {
  std::string out;
  std::size_t pos = 0;
  for (const SlotHit& hit : find_slots(text)) {
    out.append(text.substr(pos, hit.pos - pos));
    out += bindings.find(hit.slot)->second;
    pos = hit.pos + hit.slot.size();
  }
  out.append(text.substr(pos));
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (k > 0) out += sep;
    out += items[k];
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string_view strip_quotes(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = trim(s.substr(1, s.size() - 2));
  return s;
}

const std::vector<PromptTemplate>& registry() {
  static const std::vector<PromptTemplate> templates = [] {
    std::vector<PromptTemplate> out;
    for (const auto& asset : assets::kPrompts) {
      out.emplace_back(std::string(asset.id), std::string(asset.system), std::string(asset.user));
    }
    return out;
  }();
  return templates;
}

}  // namespace

// ---------------------------------------------------------------------------

PromptTemplate::PromptTemplate(std::string template_id, std::string system_text,
                               std::string user_text)
    : id_(std::move(template_id)), system_(std::move(system_text)), user_(std::move(user_text)) {
  for (std::string_view text : {std::string_view(system_), std::string_view(user_)}) {
    for (const SlotHit& hit : find_slots(text)) {
      if (std::find(slots_.begin(), slots_.end(), hit.slot) == slots_.end()) {
        slots_.emplace_back(hit.slot);
      }
    }
  }
}

const PromptTemplate& builtin_template(std::string_view template_id) {
  for (const PromptTemplate& t : registry()) {
    if (t.template_id() == template_id) return t;
  }
  throw TemplateError("unknown template_id '" + std::string(template_id) + "'");
}

std::vector<std::string> builtin_template_ids() {
  std::vector<std::string> ids;
  for (const PromptTemplate& t : registry()) ids.push_back(t.template_id());
  return ids;
}

std::string_view prompt_asset_version() { return assets::kPromptVersion; }

RenderedPrompt render_prompt(const PromptTemplate& tpl, const SlotBindings& bindings) {
  std::vector<std::string> missing;
  std::vector<std::string> extra;
  for (const std::string& slot : tpl.slots()) {
    if (!bindings.count(slot)) missing.push_back(slot);
  }
  for (const auto& [slot, value] : bindings) {
    if (std::find(tpl.slots().begin(), tpl.slots().end(), slot) == tpl.slots().end()) {
      extra.push_back(slot);
    }
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "template '" + tpl.template_id() + "':";
    if (!missing.empty()) msg += " unbound slots " + join(missing, ", ") + ";";
    if (!extra.empty()) msg += " unknown slots " + join(extra, ", ") + ";";
    throw TemplateError(msg);
  }
  return {substitute(tpl.system_text(), bindings), substitute(tpl.user_text(), bindings)};
}

std::optional<SlotBindings> match_template(const PromptTemplate& tpl, std::string_view system,
                                           std::string_view user) {
  auto match_text = [](std::string_view pattern, std::string_view text,
                       SlotBindings& out) -> bool {
    const auto hits = find_slots(pattern);
    std::size_t tpos = 0;
    std::size_t ppos = 0;
    auto bind = [&](std::string_view slot, std::string_view value) {
      auto [it, inserted] = out.try_emplace(std::string(slot), std::string(value));
      return inserted || it->second == value;
    };
    for (std::size_t k = 0; k < hits.size(); ++k) {
      const std::string_view lead = pattern.substr(ppos, hits[k].pos - ppos);
      if (text.substr(tpos, lead.size()) != lead) return false;
      tpos += lead.size();
      ppos = hits[k].pos + hits[k].slot.size();
      const std::size_t next = k + 1 < hits.size() ? hits[k + 1].pos : pattern.size();
      const std::string_view follow = pattern.substr(ppos, next - ppos);
      std::size_t end = 0;
      if (k + 1 == hits.size()) {
        // Last slot: the rest of the text minus the trailing literal.
        if (text.size() < tpos + follow.size() ||
            text.substr(text.size() - follow.size()) != follow) {
          return false;
        }
        end = text.size() - follow.size();
      } else {
        if (follow.empty()) return false;  // adjacent slots are ambiguous
        end = text.find(follow, tpos);
        if (end == std::string_view::npos) return false;
      }
      if (!bind(hits[k].slot, text.substr(tpos, end - tpos))) return false;
      tpos = end;
    }
    return text.substr(tpos) == pattern.substr(ppos);
  };

  SlotBindings out;
  if (!match_text(tpl.system_text(), system, out)) return std::nullopt;
  if (!match_text(tpl.user_text(), user, out)) return std::nullopt;
  return out;
}

// ---------------------------------------------------------------------------

std::string complete_with_retry(const LlmBackend& backend, const std::string& system,
                                const std::string& user, std::uint64_t seed,
                                const RetryPolicy& policy,
                                const std::function<void(std::chrono::milliseconds)>& sleep) {
  const int attempts = std::max(1, policy.max_attempts);
  auto delay = policy.base_delay;
  for (int attempt = 1;; ++attempt) {
    try {
      return backend.complete(system, user, seed);
    } catch (const BackendError& err) {
      if (!err.retryable()) throw BackendError(err.what(), false, attempt);
      if (attempt >= attempts) {
        throw BackendError(backend.name() + " failed after " + std::to_string(attempt) +
                               " attempts: " + err.what(),
                           true, attempt);
      }
    }
    if (sleep) {
      sleep(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
    delay = std::chrono::milliseconds(
        static_cast<std::int64_t>(static_cast<double>(delay.count()) * policy.multiplier));
  }
}

TranscriptLog::TranscriptLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void TranscriptLog::record(const CallInfo& info, const RenderedPrompt& prompt,
                           const std::string& completion) {
  nlohmann::ordered_json j;
  j["template_id"] = info.template_id;
  j["doc_id"] = info.doc_id;
  j["chunk_index"] = info.chunk_index;
  j["sample_run"] = info.sample_run;
  j["system"] = prompt.system;
  j["user"] = prompt.user;
  j["completion"] = completion;
  const std::string line = j.dump() + "\n";
  std::lock_guard<std::mutex> lock(mu_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << line;
}

std::uint64_t LlmSession::call_seed(int sample_run) const {
  return combine_seed(seed, static_cast<std::uint64_t>(sample_run));
}

std::string LlmSession::call(const CallInfo& info, const RenderedPrompt& prompt) const {
  if (!backend) throw BackendError("no LLM backend configured", false);
  std::string completion = complete_with_retry(*backend, prompt.system, prompt.user,
                                                call_seed(info.sample_run), retry, sleep);
  if (transcript) transcript->record(info, prompt, completion);
  return completion;
}

// ---------------------------------------------------------------------------

EdpParseResult parse_edp_tuples(std::string_view s) {
  EdpParseResult result;
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    if (s[i] != '(') {
      ++i;
      continue;
    }
    std::size_t depth = 1;
    std::size_t j = i + 1;
    while (j < n && depth > 0) {
      if (s[j] == '(') ++depth;
      if (s[j] == ')') --depth;
      ++j;
    }
    if (depth > 0) {
      ++result.malformed_count;
      ++i;
      continue;
    }
    const std::string_view body = s.substr(i + 1, j - i - 2);
    bool in_quotes = false;
    std::size_t split = std::string_view::npos;
    for (std::size_t k = 0; k < body.size(); ++k) {
      if (body[k] == '"') in_quotes = !in_quotes;
      if (body[k] == ',' && !in_quotes) {
        split = k;
        break;
      }
    }
    if (split == std::string_view::npos) {
      ++result.malformed_count;
    } else {
      const auto entity = strip_quotes(body.substr(0, split));
      const auto description = strip_quotes(body.substr(split + 1));
      if (entity.empty() || description.empty()) {
        ++result.malformed_count;
      } else {
        result.tuples.push_back({std::string(entity), std::string(description), {i, j}});
      }
    }
    i = j;
  }
  return result;
}

std::string serialize_edp_tuples(std::span<const RawEdpTuple> tuples) {
  std::string out;
  for (std::size_t k = 0; k < tuples.size(); ++k) {
    if (k > 0) out += ", ";
    out += '(';
    const std::string& e = tuples[k].entity_text;
    if (e.find(',') != std::string::npos) {
      out += '"';
      out += e;
      out += '"';
    } else {
      out += e;
    }
    out += ", ";
    out += tuples[k].description_text;
    out += ')';
  }
  return out;
}

bool is_no_questions_sentinel(std::string_view completion) {
  std::string_view s = trim(completion);
  while (!s.empty() && (s.front() == '\'' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == '\'' || s.back() == '"' || s.back() == '.')) {
    s.remove_suffix(1);
  }
  return lowercase_ascii(trim(s)) == "no questions extracted";
}

namespace {

// List markers: "-", "*", "•", "12.", "12)".
std::string_view strip_list_marker(std::string_view line) {
  line = trim(line);
  if (line.starts_with("- ") || line.starts_with("* ")) {
    line.remove_prefix(2);
  } else if (line.starts_with("\xE2\x80\xA2")) {
    line.remove_prefix(3);
  } else {
    std::size_t d = 0;
    while (d < line.size() && line[d] >= '0' && line[d] <= '9') ++d;
    if (d > 0 && d < line.size() && (line[d] == '.' || line[d] == ')')) line.remove_prefix(d + 1);
  }
  return trim(line);
}

}  // namespace

QuestionParseResult parse_questions(std::string_view completion) {
  QuestionParseResult result;
  if (is_no_questions_sentinel(completion)) return result;
  std::size_t pos = 0;
  while (pos <= completion.size()) {
    auto nl = completion.find('\n', pos);
    if (nl == std::string_view::npos) nl = completion.size();
    const std::string_view line = strip_list_marker(completion.substr(pos, nl - pos));
    pos = nl + 1;

    std::size_t start = 0;
    while (start < line.size()) {
      const auto q = line.find('?', start);
      if (q == std::string_view::npos) break;
      std::string_view piece = strip_list_marker(line.substr(start, q + 1 - start));
      start = q + 1;
      const bool has_word = std::any_of(piece.begin(), piece.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80;
      });
      if (has_word) result.questions.emplace_back(piece);
    }
  }
  if (result.questions.empty() && !trim(completion).empty()) {
    result.warnings.push_back("no questions found in speculation output");
  }
  return result;
}

std::optional<int> parse_option_index(std::string_view completion) {
  std::string_view s = trim(completion);
  if (s.size() >= 2 && s.front() == '(' && s.back() == ')') s = trim(s.substr(1, s.size() - 2));
  if (!s.empty() && (s.back() == '.' || s.back() == ')')) s.remove_suffix(1);
  if (s.size() != 1 || s[0] < '1' || s[0] > '4') return std::nullopt;
  return s[0] - '0';
}

// ---------------------------------------------------------------------------

SpeculationResult speculate_questions(const Chunk& chunk, const LlmSession& session,
                                      std::string_view template_id, int sample_run) {
  const PromptTemplate& tpl = builtin_template(template_id);
  const RenderedPrompt prompt = render_prompt(tpl, {{std::string(kSlotExcerpt), chunk.text}});
  const std::string completion =
      session.call({tpl.template_id(), chunk.doc_id, chunk.chunk_index, sample_run}, prompt);
  QuestionParseResult parsed = parse_questions(completion);
  SpeculationResult result;
  result.warnings = std::move(parsed.warnings);
  for (std::string& q : parsed.questions) {
    result.questions.push_back({std::move(q), chunk.doc_id, chunk.chunk_index, sample_run});
  }
  return result;
}

std::string format_questions(std::span<const SpeculatedQuestion> questions) {
  std::string out;
  for (std::size_t k = 0; k < questions.size(); ++k) {
    if (k > 0) out += '\n';
    out += "- ";
    out += questions[k].question_text;
  }
  return out;
}

ExtractionResult extract_edps(const Chunk& chunk, std::span<const SpeculatedQuestion> questions,
                              const LlmSession& session, std::string_view template_id,
                              int sample_run) {
  const PromptTemplate& tpl = builtin_template(template_id);
  const RenderedPrompt prompt =
      render_prompt(tpl, {{std::string(kSlotExcerpt), chunk.text},
                          {std::string(kSlotQuestions), format_questions(questions)}});
  const std::string completion =
      session.call({tpl.template_id(), chunk.doc_id, chunk.chunk_index, sample_run}, prompt);
  EdpParseResult parsed = parse_edp_tuples(completion);
  ExtractionResult result;
  result.malformed_count = parsed.malformed_count;
  if (parsed.malformed_count > 0) {
    result.warnings.push_back(std::to_string(parsed.malformed_count) + " malformed tuple(s) skipped");
  }
  for (RawEdpTuple& t : parsed.tuples) {
    result.edps.push_back(Edp::make(chunk.doc_id, std::move(t.entity_text),
                                    std::move(t.description_text), chunk.chunk_index,
                                    sample_run));
  }
  return result;
}

namespace {

SlotBindings bind_answer_slots(const PromptTemplate& tpl, const AnswerRequest& req,
                               std::string_view round1) {
  SlotBindings b;
  for (const std::string& slot : tpl.slots()) {
    if (slot == kSlotDocuments || slot == kSlotExcerpt) {
      b[slot] = req.context;
    } else if (slot == kSlotQuestion) {
      b[slot] = req.question;
    } else if (slot == kSlotRound1Answer) {
      b[slot] = std::string(round1);
    } else {
      bool bound = false;
      for (std::size_t k = 0; k < 4; ++k) {
        if (slot == kSlotOptions[k]) {
          if (req.options.size() != 4) {
            throw ArgumentError("template '" + tpl.template_id() + "' needs exactly 4 options");
          }
          b[slot] = req.options[k];
          bound = true;
        }
      }
      if (!bound) throw TemplateError("template '" + tpl.template_id() + "' is not a QA template");
    }
  }
  return b;
}

}  // namespace

std::string answer_question(const AnswerRequest& request, const LlmSession& session,
                            std::string_view template_id) {
  const PromptTemplate& tpl = builtin_template(template_id);
  const RenderedPrompt prompt = render_prompt(tpl, bind_answer_slots(tpl, request, {}));
  return std::string(trim(session.call({tpl.template_id(), request.doc_id, 0, 0}, prompt)));
}

std::string compress_answer(const AnswerRequest& request, std::string_view round1_answer,
                            const LlmSession& session) {
  const PromptTemplate& tpl = builtin_template("qa_narrative_r2");
  const RenderedPrompt prompt = render_prompt(tpl, bind_answer_slots(tpl, request, round1_answer));
  return std::string(trim(session.call({tpl.template_id(), request.doc_id, 0, 0}, prompt)));
}

}  // namespace fader
