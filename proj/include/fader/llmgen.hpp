#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fader/kb.hpp"
#include "fader/text.hpp"

namespace fader {

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

inline constexpr std::string_view kSlotExcerpt = "[INSERT EXCERPT HERE]";
inline constexpr std::string_view kSlotQuestions = "[INSERT SPECULATED QUESTIONS HERE]";
inline constexpr std::string_view kSlotDocuments = "[INSERT RETRIEVED DOCUMENTS HERE]";
inline constexpr std::string_view kSlotQuestion = "[INSERT QUESTION HERE]";
inline constexpr std::string_view kSlotRound1Answer = "[INSERT ANSWER FROM ROUND 1]";
inline constexpr std::string_view kSlotOptions[4] = {"{options[0]}", "{options[1]}",
                                                     "{options[2]}", "{options[3]}"};

using SlotBindings = std::map<std::string, std::string, std::less<>>;

struct RenderedPrompt {
  std::string system;
  std::string user;
};

class PromptTemplate {
 public:
  PromptTemplate(std::string template_id, std::string system_text, std::string user_text);

  const std::string& template_id() const noexcept { return id_; }
  const std::string& system_text() const noexcept { return system_; }
  const std::string& user_text() const noexcept { return user_; }
  // Distinct slot markers in order of first appearance (system, then user).
  const std::vector<std::string>& slots() const noexcept { return slots_; }

 private:
  std::string id_;
  std::string system_;
  std::string user_;
  std::vector<std::string> slots_;
};

// Built-in templates: spec_narrative, spec_qasper, kb_narrative, kb_qasper,
// qa_narrative_r1, qa_narrative_r2, qa_qasper, qa_quality.
const PromptTemplate& builtin_template(std::string_view template_id);
std::vector<std::string> builtin_template_ids();
std::string_view prompt_asset_version();

// Every slot must be bound; bindings for unknown slots are rejected. Markers
// are substituted in a single pass so bound values are never re-scanned.
RenderedPrompt render_prompt(const PromptTemplate& tpl, const SlotBindings& bindings);

// Inverse of render_prompt: recovers the bindings if (system, user) is a
// rendering of tpl.
std::optional<SlotBindings> match_template(const PromptTemplate& tpl, std::string_view system,
                                           std::string_view user);

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

// Implementations must be callable concurrently from several threads.
class LlmBackend {
 public:
  virtual ~LlmBackend() = default;

  virtual std::string name() const = 0;
  // When true, identical (system, user, seed) yields identical output.
  virtual bool deterministic() const = 0;
  // Throws BackendError on transport failure.
  virtual std::string complete(const std::string& system, const std::string& user,
                               std::uint64_t seed) const = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
};

// Retries retryable BackendErrors with exponential backoff; the final error
// carries the number of attempts made.
std::string complete_with_retry(
    const LlmBackend& backend, const std::string& system, const std::string& user,
    std::uint64_t seed, const RetryPolicy& policy,
    const std::function<void(std::chrono::milliseconds)>& sleep = {});

struct CallInfo {
  std::string template_id;
  std::string doc_id;
  std::size_t chunk_index = 0;
  int sample_run = 0;
};

// Thread-safe JSONL transcript writer: {"template_id","doc_id","chunk_index",
// "sample_run","system","user","completion"} per call.
class TranscriptLog {
 public:
  explicit TranscriptLog(std::filesystem::path path);

  void record(const CallInfo& info, const RenderedPrompt& prompt, const std::string& completion);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

struct LlmSession {
  std::shared_ptr<const LlmBackend> backend;
  RetryPolicy retry;
  std::uint64_t seed = 0;
  TranscriptLog* transcript = nullptr;
  std::function<void(std::chrono::milliseconds)> sleep;

  // Per-call seed: base seed mixed with the sample run.
  std::uint64_t call_seed(int sample_run) const;
  std::string call(const CallInfo& info, const RenderedPrompt& prompt) const;
};

// ---------------------------------------------------------------------------
// Output parsers
// ---------------------------------------------------------------------------

struct RawEdpTuple {
  std::string entity_text;
  std::string description_text;
  ByteSpan source_offset;
};

struct EdpParseResult {
  std::vector<RawEdpTuple> tuples;
  std::size_t malformed_count = 0;
};

// Top-level "(entity, description)" groups separated by anything. Parentheses
// nest; an unclosed group is counted malformed and scanning resumes after its
// opening parenthesis. The split is at the first comma outside double quotes;
// one pair of surrounding double quotes is stripped from each field.
EdpParseResult parse_edp_tuples(std::string_view completion);

// Inverse of parse_edp_tuples for well-formed tuples. Entities containing a
// comma are double-quoted.
std::string serialize_edp_tuples(std::span<const RawEdpTuple> tuples);

bool is_no_questions_sentinel(std::string_view completion);

struct QuestionParseResult {
  std::vector<std::string> questions;
  std::vector<std::string> warnings;
};

// One question per line with list markers removed; a line holding several
// '?'-terminated questions is split into separate questions.
QuestionParseResult parse_questions(std::string_view completion);

// "3", "3.", "(3)" -> 3. Anything else, or a number outside 1..4, is invalid.
std::optional<int> parse_option_index(std::string_view completion);

// ---------------------------------------------------------------------------
// Generation steps
// ---------------------------------------------------------------------------

struct SpeculatedQuestion {
  std::string question_text;
  std::string doc_id;
  std::size_t chunk_index = 0;
  int sample_run = 1;

  bool operator==(const SpeculatedQuestion&) const = default;
};

struct SpeculationResult {
  std::vector<SpeculatedQuestion> questions;
  std::vector<std::string> warnings;
};

SpeculationResult speculate_questions(const Chunk& chunk, const LlmSession& session,
                                      std::string_view template_id, int sample_run);

struct ExtractionResult {
  std::vector<Edp> edps;
  std::size_t malformed_count = 0;
  std::vector<std::string> warnings;
};

// Questions may be empty (fact-only extraction).
ExtractionResult extract_edps(const Chunk& chunk, std::span<const SpeculatedQuestion> questions,
                              const LlmSession& session, std::string_view template_id,
                              int sample_run);

// Bullet list used to fill the speculated-questions slot.
std::string format_questions(std::span<const SpeculatedQuestion> questions);

struct AnswerRequest {
  std::string task_id;
  std::string doc_id;
  std::string question;
  std::string context;  // rendered retrieval context
  std::vector<std::string> options;  // four entries for multiple choice
};

std::string answer_question(const AnswerRequest& request, const LlmSession& session,
                            std::string_view template_id);

// Second round for short-answer datasets.
std::string compress_answer(const AnswerRequest& request, std::string_view round1_answer,
                            const LlmSession& session);

}  // namespace fader
