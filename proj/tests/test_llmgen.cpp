#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <fstream>
#include <random>
#include <thread>

#include "fader/errors.hpp"
#include "fader/io.hpp"
#include "fader/llmgen.hpp"
#include "fader/mock_backend.hpp"
#include "test_support.hpp"

namespace fader {
namespace {

bool contains(const std::string& haystack, std::string_view needle) {
  return haystack.find(needle) != std::string::npos;
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

TEST(Templates, BuiltinIdsAndSlots) {
  const auto ids = builtin_template_ids();
  for (const char* id : {"spec_narrative", "spec_qasper", "kb_narrative", "kb_qasper",
                         "qa_narrative_r1", "qa_narrative_r2", "qa_qasper", "qa_quality"}) {
    EXPECT_NE(std::find(ids.begin(), ids.end(), id), ids.end()) << id;
  }
  EXPECT_EQ(builtin_template("kb_narrative").slots(),
            (std::vector<std::string>{std::string(kSlotExcerpt), std::string(kSlotQuestions)}));
  EXPECT_EQ(builtin_template("qa_quality").slots().size(), 6u);
  EXPECT_FALSE(prompt_asset_version().empty());
  EXPECT_THROW(builtin_template("qa_unknown"), TemplateError);
}

TEST(Templates, KbNarrativeLayout) {
  const auto r = render_prompt(builtin_template("kb_narrative"),
                               {{std::string(kSlotExcerpt), "X"}, {std::string(kSlotQuestions), "Q"}});
  EXPECT_TRUE(contains(r.user, "Passage:\nX"));
  EXPECT_TRUE(contains(r.user, "Questions:\nQ"));
}

TEST(Templates, QualityEnumeratesFourOptions) {
  SlotBindings b{{std::string(kSlotExcerpt), "ctx"}, {std::string(kSlotQuestion), "q?"}};
  const char* opts[] = {"red", "green", "blue", "grey"};
  for (int k = 0; k < 4; ++k) b[std::string(kSlotOptions[k])] = opts[k];
  const auto r = render_prompt(builtin_template("qa_quality"), b);
  EXPECT_TRUE(contains(r.user, "1. red\n2. green\n3. blue\n4. grey"));
  EXPECT_TRUE(contains(r.user, "Respond with only the number"));
}

TEST(Templates, ZeroSlotIdentity) {
  const PromptTemplate tpl("plain", "sys text", "user text");
  EXPECT_TRUE(tpl.slots().empty());
  const auto r = render_prompt(tpl, {});
  EXPECT_EQ(r.system, "sys text");
  EXPECT_EQ(r.user, "user text");
}

TEST(Templates, MissingAndExtraBindingsNameSlots) {
  const auto& tpl = builtin_template("kb_narrative");
  try {
    render_prompt(tpl, {{std::string(kSlotExcerpt), "X"}, {"[BOGUS]", "y"}});
    FAIL() << "expected TemplateError";
  } catch (const TemplateError& e) {
    EXPECT_TRUE(contains(e.what(), kSlotQuestions));
    EXPECT_TRUE(contains(e.what(), "[BOGUS]"));
  }
}

TEST(Templates, BoundValuesAreNotRescanned) {
  const auto r = render_prompt(builtin_template("kb_narrative"),
                               {{std::string(kSlotExcerpt), std::string(kSlotQuestions)},
                                {std::string(kSlotQuestions), "Q"}});
  EXPECT_TRUE(contains(r.user, std::string("Passage:\n") + std::string(kSlotQuestions)));
}

TEST(Templates, RenderingLeavesNoMarkersAndMatchesBack) {
  std::mt19937_64 rng(5);
  for (const std::string& id : builtin_template_ids()) {
    const PromptTemplate& tpl = builtin_template(id);
    for (int trial = 0; trial < 20; ++trial) {
      SlotBindings b;
      for (const std::string& slot : tpl.slots()) b[slot] = testing::random_text(rng, 1, 30, 40);
      const auto r = render_prompt(tpl, b);
      EXPECT_FALSE(contains(r.system, "[INSERT")) << id;
      EXPECT_FALSE(contains(r.user, "[INSERT")) << id;
      const auto back = match_template(tpl, r.system, r.user);
      ASSERT_TRUE(back.has_value()) << id;
      EXPECT_EQ(*back, b) << id;
    }
  }
}

TEST(Templates, MatchRejectsOtherTemplates) {
  const auto r = render_prompt(builtin_template("spec_narrative"),
                               {{std::string(kSlotExcerpt), "Some text."}});
  EXPECT_FALSE(match_template(builtin_template("kb_narrative"), r.system, r.user));
  EXPECT_FALSE(match_template(builtin_template("qa_qasper"), r.system, r.user));
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

TEST(ParseEdpTuples, PromptExample) {
  const auto r = parse_edp_tuples(
      "(Visitor, A friend visits the philosopher), (Philosopher's stance on law, Breaking the "
      "law is equivalent to betraying a contract with the state)");
  ASSERT_EQ(r.tuples.size(), 2u);
  EXPECT_EQ(r.malformed_count, 0u);
  EXPECT_EQ(r.tuples[0].entity_text, "Visitor");
  EXPECT_EQ(r.tuples[0].description_text, "A friend visits the philosopher");
  EXPECT_EQ(r.tuples[1].entity_text, "Philosopher's stance on law");
  EXPECT_EQ(r.tuples[1].source_offset.start, 44u);
}

TEST(ParseEdpTuples, QuestionEntity) {
  const auto r = parse_edp_tuples(
      "(What is the seed lexicon?, A vocabulary of positive and negative predicates that helps "
      "determine the polarity score of an event.)");
  ASSERT_EQ(r.tuples.size(), 1u);
  EXPECT_EQ(r.tuples[0].entity_text, "What is the seed lexicon?");
}

TEST(ParseEdpTuples, UnclosedIsMalformed) {
  const auto r = parse_edp_tuples("(broken");
  EXPECT_TRUE(r.tuples.empty());
  EXPECT_EQ(r.malformed_count, 1u);
}

TEST(ParseEdpTuples, QuotedEntityKeepsComma) {
  const auto r = parse_edp_tuples("(\"Paris, France\", Capital city)");
  ASSERT_EQ(r.tuples.size(), 1u);
  EXPECT_EQ(r.tuples[0].entity_text, "Paris, France");
  EXPECT_EQ(r.tuples[0].description_text, "Capital city");
}

TEST(ParseEdpTuples, NestedParenthesesStayInDescription) {
  const auto r = parse_edp_tuples("(Lamp room, At the top (north side) of the tower)");
  ASSERT_EQ(r.tuples.size(), 1u);
  EXPECT_EQ(r.tuples[0].description_text, "At the top (north side) of the tower");
}

TEST(ParseEdpTuples, MalformedCorpus) {
  std::size_t cases = 0;
  io::for_each_line(io::read_file(testing::data_dir() / "malformed_tuples.jsonl"),
                    [&](std::string_view line, std::size_t) {
                      if (line.empty()) return;
                      const auto j = nlohmann::json::parse(line);
                      const auto r = parse_edp_tuples(j.at("input").get<std::string>());
                      std::vector<std::pair<std::string, std::string>> got;
                      for (const RawEdpTuple& t : r.tuples) got.emplace_back(t.entity_text, t.description_text);
                      EXPECT_EQ(got, (j.at("tuples").get<std::vector<std::pair<std::string, std::string>>>()))
                          << "case " << j.at("case");
                      EXPECT_EQ(r.malformed_count, j.at("malformed").get<std::size_t>())
                          << "case " << j.at("case");
                      ++cases;
                    });
  EXPECT_EQ(cases, 50u);
}

std::string random_field(std::mt19937_64& rng, bool allow_comma) {
  const std::string alphabet = allow_comma ? "abcde XYZ'?.-;:," : "abcde XYZ'?.-;:";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(1, 25);
  std::string s;
  while (true) {
    s.clear();
    for (int k = 0, n = len(rng); k < n; ++k) s += alphabet[pick(rng)];
    const auto b = s.find_first_not_of(' ');
    const auto e = s.find_last_not_of(' ');
    if (b == std::string::npos) continue;
    s = s.substr(b, e - b + 1);
    if (s.front() == '"' || s.back() == '"') continue;
    return s;
  }
}

TEST(ParseEdpTuples, SerializeRoundTrip) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> count(0, 6);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<RawEdpTuple> tuples;
    for (int k = 0, n = count(rng); k < n; ++k) {
      tuples.push_back({random_field(rng, true), random_field(rng, true), {}});
    }
    const auto parsed = parse_edp_tuples(serialize_edp_tuples(tuples));
    ASSERT_EQ(parsed.tuples.size(), tuples.size());
    EXPECT_EQ(parsed.malformed_count, 0u);
    for (std::size_t k = 0; k < tuples.size(); ++k) {
      EXPECT_EQ(parsed.tuples[k].entity_text, tuples[k].entity_text);
      EXPECT_EQ(parsed.tuples[k].description_text, tuples[k].description_text);
    }
  }
}

TEST(ParseQuestions, BulletList) {
  const auto r = parse_questions(
      "- Where is the Great Peace expected?\n- Who has expressed the vision of the Great Peace?");
  EXPECT_EQ(r.questions, (std::vector<std::string>{"Where is the Great Peace expected?",
                                                   "Who has expressed the vision of the Great Peace?"}));
}

TEST(ParseQuestions, SentinelAndNumbering) {
  EXPECT_TRUE(parse_questions("no questions extracted").questions.empty());
  EXPECT_TRUE(parse_questions("'No questions extracted.'").questions.empty());
  EXPECT_TRUE(parse_questions("no questions extracted").warnings.empty());
  const auto r = parse_questions("1. Why? 2) How so? What then?\n\n* Last one?");
  EXPECT_EQ(r.questions, (std::vector<std::string>{"Why?", "How so?", "What then?", "Last one?"}));
}

TEST(ParseQuestions, UnparseableRecordsWarning) {
  const auto r = parse_questions("I cannot help with that.");
  EXPECT_TRUE(r.questions.empty());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(ParseOptionIndex, Forms) {
  EXPECT_EQ(parse_option_index("3"), 3);
  EXPECT_EQ(parse_option_index(" 3.\n"), 3);
  EXPECT_EQ(parse_option_index("(4)"), 4);
  EXPECT_EQ(parse_option_index("The answer is B"), std::nullopt);
  EXPECT_EQ(parse_option_index("5"), std::nullopt);
  EXPECT_EQ(parse_option_index("0"), std::nullopt);
  EXPECT_EQ(parse_option_index(""), std::nullopt);
}

// ---------------------------------------------------------------------------
// Retry and sessions
// ---------------------------------------------------------------------------

class FlakyBackend : public LlmBackend {
 public:
  FlakyBackend(int failures, bool retryable) : failures_(failures), retryable_(retryable) {}
  std::string name() const override { return "flaky"; }
  bool deterministic() const override { return true; }
  std::string complete(const std::string&, const std::string& user, std::uint64_t) const override {
    if (calls_++ < failures_) throw BackendError("boom", retryable_);
    return "ok:" + user;
  }
  int calls() const { return calls_; }

 private:
  int failures_;
  bool retryable_;
  mutable std::atomic<int> calls_{0};
};

TEST(Retry, BacksOffExponentially) {
  FlakyBackend backend(2, true);
  std::vector<std::chrono::milliseconds> sleeps;
  RetryPolicy policy{3, std::chrono::milliseconds(100), 2.0};
  EXPECT_EQ(complete_with_retry(backend, "s", "u", 1, policy,
                                [&](std::chrono::milliseconds d) { sleeps.push_back(d); }),
            "ok:u");
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100),
                                                            std::chrono::milliseconds(200)}));
}

TEST(Retry, ExhaustedErrorCarriesAttempts) {
  FlakyBackend backend(10, true);
  try {
    complete_with_retry(backend, "s", "u", 1, RetryPolicy{3, std::chrono::milliseconds(1), 2.0},
                        [](std::chrono::milliseconds) {});
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(backend.calls(), 3);
}

TEST(Retry, NonRetryableFailsFast) {
  FlakyBackend backend(10, false);
  EXPECT_THROW(complete_with_retry(backend, "s", "u", 1, RetryPolicy{},
                                   [](std::chrono::milliseconds) {}),
               BackendError);
  EXPECT_EQ(backend.calls(), 1);
}

TEST(Session, TranscriptRecordsEveryCall) {
  testing::TempDir dir;
  TranscriptLog log(dir / "t" / "transcript.jsonl");
  LlmSession session{mock_backend(1), {}, 7, &log, {}};
  const Chunk chunk{"doc", 2, "The tide rose. Marta waited.", 5, 0, 1};
  std::vector<std::thread> workers;
  for (int run = 1; run <= 4; ++run) {
    workers.emplace_back([&, run] { speculate_questions(chunk, session, "spec_narrative", run); });
  }
  for (auto& w : workers) w.join();
  std::size_t lines = 0;
  io::for_each_line(io::read_file(log.path()), [&](std::string_view line, std::size_t) {
    if (line.empty()) return;
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("template_id"), "spec_narrative");
    EXPECT_EQ(j.at("doc_id"), "doc");
    EXPECT_EQ(j.at("chunk_index"), 2);
    for (const char* key : {"sample_run", "system", "user", "completion"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    ++lines;
  });
  EXPECT_EQ(lines, 4u);
}

TEST(Session, CallSeedDependsOnRun) {
  LlmSession session{mock_backend(1), {}, 7, nullptr, {}};
  EXPECT_NE(session.call_seed(1), session.call_seed(2));
  EXPECT_EQ(session.call_seed(3), session.call_seed(3));
}

// ---------------------------------------------------------------------------
// Generation steps
// ---------------------------------------------------------------------------

class ScriptedBackend : public LlmBackend {
 public:
  explicit ScriptedBackend(std::string reply) : reply_(std::move(reply)) {}
  std::string name() const override { return "scripted"; }
  bool deterministic() const override { return true; }
  std::string complete(const std::string&, const std::string&, std::uint64_t) const override {
    return reply_;
  }

 private:
  std::string reply_;
};

LlmSession scripted(std::string reply) {
  return LlmSession{std::make_shared<ScriptedBackend>(std::move(reply)), {}, 0, nullptr, {}};
}

const Chunk kChunk{"doc", 0, "Text.", 2, 0, 0};

TEST(Speculate, ParsesCompletionAndTagsProvenance) {
  const auto r = speculate_questions(
      kChunk,
      scripted("- Where is the Great Peace expected?\n- Who has expressed the vision of the Great "
               "Peace?"),
      "spec_narrative", 2);
  ASSERT_EQ(r.questions.size(), 2u);
  EXPECT_EQ(r.questions[1].sample_run, 2);
  EXPECT_EQ(r.questions[1].doc_id, "doc");
  EXPECT_TRUE(speculate_questions(kChunk, scripted("no questions extracted"), "spec_narrative", 1)
                  .questions.empty());
}

TEST(Speculate, TransportFailureIsRetryable) {
  LlmSession session{std::make_shared<FlakyBackend>(10, true),
                     RetryPolicy{2, std::chrono::milliseconds(1), 2.0}, 0, nullptr,
                     [](std::chrono::milliseconds) {}};
  try {
    speculate_questions(kChunk, session, "spec_narrative", 1);
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_EQ(e.attempts(), 2);
  }
}

TEST(Extract, EmptyCompletionAndMalformedTuples) {
  EXPECT_TRUE(extract_edps(kChunk, {}, scripted(""), "kb_narrative", 1).edps.empty());
  const auto r = extract_edps(kChunk, {}, scripted("(a, b), (c), (, d), (e, f"), "kb_narrative", 1);
  ASSERT_EQ(r.edps.size(), 1u);
  EXPECT_EQ(r.malformed_count, 3u);
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Extract, NeverEmitsEmptyFields) {
  std::mt19937_64 rng(3);
  const std::string alphabet = "(),\" ab";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  for (int trial = 0; trial < 500; ++trial) {
    std::string reply;
    for (int k = 0; k < 30; ++k) reply += alphabet[pick(rng)];
    for (const Edp& e : extract_edps(kChunk, {}, scripted(reply), "kb_qasper", 1).edps) {
      EXPECT_FALSE(e.entity.empty()) << reply;
      EXPECT_FALSE(e.description.empty()) << reply;
    }
  }
}

TEST(Answer, QuestionsFormattedAsBullets) {
  const std::vector<SpeculatedQuestion> qs = {{"Q1?", "d", 0, 1}, {"Q2?", "d", 0, 1}};
  EXPECT_EQ(format_questions(qs), "- Q1?\n- Q2?");
}

TEST(Answer, QualityNeedsFourOptions) {
  AnswerRequest req{"t", "d", "Which?", "ctx", {"a", "b"}};
  EXPECT_THROW(answer_question(req, scripted("1"), "qa_quality"), ArgumentError);
  req.options = {"a", "b", "c", "d"};
  EXPECT_EQ(parse_option_index(answer_question(req, scripted(" 3 "), "qa_quality")), 3);
}

}  // namespace
}  // namespace fader
