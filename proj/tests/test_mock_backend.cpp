#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fader/errors.hpp"
#include "fader/hashing.hpp"
#include "fader/kb.hpp"
#include "fader/llmgen.hpp"
#include "fader/mock_backend.hpp"
#include "test_support.hpp"

namespace fader {
namespace {

const Chunk kChunk{"harbor", 0,
                   "Marta hid the brass key under the third stair. The lamp room faced the "
                   "northern reef. Gulls circled the breakwater at dawn.",
                   26, 0, 2};

LlmSession session_for(std::uint64_t seed) {
  return LlmSession{mock_backend(seed), {}, seed, nullptr, {}};
}

std::set<std::string> edp_ids(const ExtractionResult& r) {
  std::set<std::string> out;
  for (const Edp& e : r.edps) out.insert(e.edp_id);
  return out;
}

TEST(MockBackend, OneQuestionPerSentence) {
  const auto r = speculate_questions(kChunk, session_for(1), "spec_narrative", 1);
  ASSERT_EQ(r.questions.size(), 3u);
  EXPECT_EQ(r.questions[0].question_text, "What does the passage say about Marta?");
  EXPECT_EQ(r.questions[2].question_text, "What does the passage say about Gulls?");
}

TEST(MockBackend, EmptyChunkYieldsSentinel) {
  const Chunk empty{"d", 0, "", 0, 0, 0};
  EXPECT_TRUE(speculate_questions(empty, session_for(1), "spec_qasper", 1).questions.empty());
}

TEST(MockBackend, DeterministicForSameSeedAndRun) {
  const auto session = session_for(42);
  const auto q1 = speculate_questions(kChunk, session, "spec_narrative", 2);
  const auto q2 = speculate_questions(kChunk, session, "spec_narrative", 2);
  EXPECT_EQ(q1.questions, q2.questions);
  const auto e1 = extract_edps(kChunk, q1.questions, session, "kb_narrative", 2);
  const auto e2 = extract_edps(kChunk, q1.questions, session, "kb_narrative", 2);
  EXPECT_EQ(e1.edps, e2.edps);
}

TEST(MockBackend, SelectionRuleMatchesKeepsSentence) {
  const auto session = session_for(5);
  const auto sentences = split_sentences(kChunk.text);
  for (int run = 1; run <= 6; ++run) {
    const std::uint64_t effective = combine_seed(5, session.call_seed(run));
    std::size_t kept = 0;
    for (const Sentence& s : sentences) kept += MockBackend::keeps_sentence(effective, s.text);
    const auto r = extract_edps(kChunk, {}, session, "kb_narrative", run);
    EXPECT_EQ(r.edps.size(), std::max<std::size_t>(kept, 1)) << "run " << run;
  }
}

TEST(MockBackend, RunsOverlapButDiffer) {
  std::string text;
  for (int k = 0; k < 24; ++k) text += "Sentence number " + std::to_string(k) + " tells a fact. ";
  const Chunk chunk{"d", 0, text, 0, 0, 23};
  const auto session = session_for(20240611);
  const auto s1 = edp_ids(extract_edps(chunk, {}, session, "kb_narrative", 1));
  const auto s2 = edp_ids(extract_edps(chunk, {}, session, "kb_narrative", 2));
  EXPECT_NE(s1, s2);
  std::vector<std::string> both;
  std::set_intersection(s1.begin(), s1.end(), s2.begin(), s2.end(), std::back_inserter(both));
  EXPECT_FALSE(both.empty());
}

TEST(MockBackend, EdpFieldsComeFromSentence) {
  const auto r = extract_edps(kChunk, {}, session_for(3), "kb_qasper", 1);
  const auto sentences = split_sentences(kChunk.text);
  for (const Edp& e : r.edps) {
    const bool matches = std::any_of(sentences.begin(), sentences.end(),
                                     [&](const Sentence& s) { return s.text == e.description; });
    EXPECT_TRUE(matches) << e.description;
    EXPECT_LE(tokenize(e.entity).size(), 4u);
  }
}

TEST(MockBackend, OpenAnswerPicksOverlappingSentence) {
  const AnswerRequest req{"t", "harbor", "Where did Marta hide the brass key?",
                          "- Marta: Marta hid the brass key under the third stair.\n- Gulls: Gulls "
                          "circled.",
                          {}};
  EXPECT_EQ(answer_question(req, session_for(1), "qa_narrative_r1"),
            "Marta hid the brass key under the third stair.");
}

TEST(MockBackend, RefusalCompressesToIDontKnow) {
  const AnswerRequest req{"t", "d", "Who visits the philosopher?", "", {}};
  const auto r1 = answer_question(req, session_for(1), "qa_narrative_r1");
  EXPECT_TRUE(r1.starts_with("I don't know. The context provided does not mention"));
  EXPECT_EQ(compress_answer(req, r1, session_for(1)), "I don't know.");
  EXPECT_EQ(answer_question(req, session_for(1), "qa_qasper"), "Unanswerable.");
}

TEST(MockBackend, CompressionNeverLengthens) {
  std::mt19937_64 rng(17);
  const auto session = session_for(9);
  for (int trial = 0; trial < 200; ++trial) {
    const AnswerRequest req{"t", "d", testing::random_text(rng, 2, 10, 30) + "?", "", {}};
    const std::string r1 = trial % 5 == 0 ? "I don't know. Nothing here."
                                          : testing::random_text(rng, 1, 20, 30);
    const std::string r2 = compress_answer(req, r1, session);
    EXPECT_LE(tokenize(r2).size(), tokenize(r1).size()) << r1;
  }
}

TEST(MockBackend, MultipleChoiceByOverlap) {
  AnswerRequest req{"t", "d", "What color was the door?", "The door was painted crimson.",
                    {"blue", "crimson paint", "green", "white"}};
  EXPECT_EQ(parse_option_index(answer_question(req, session_for(1), "qa_quality")), 2);
}

TEST(MockBackend, RandomMultipleChoiceIsUniform) {
  const LlmSession session{mock_backend(77, MockOptions{true}), {}, 77, nullptr, {}};
  std::mt19937_64 rng(4);
  int correct = 0;
  std::uniform_int_distribution<int> gold(1, 4);
  for (int k = 0; k < 400; ++k) {
    AnswerRequest req{"t" + std::to_string(k), "d", "Question " + std::to_string(k) + "?",
                      "context", {"a", "b", "c", "d"}};
    const auto idx = parse_option_index(answer_question(req, session, "qa_quality"));
    ASSERT_TRUE(idx.has_value());
    correct += *idx == gold(rng);
  }
  EXPECT_NEAR(correct / 400.0, 0.25, 0.07);
}

TEST(MockBackend, UnknownPromptIsNonRetryable) {
  try {
    MockBackend(1).complete("system", "user", 0);
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_FALSE(e.retryable());
  }
}

}  // namespace
}  // namespace fader
