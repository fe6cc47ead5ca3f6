#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "fader/llmgen.hpp"

namespace fader {

struct MockOptions {
  // Multiple-choice answers become a seeded uniform draw over 1..4 instead of
  // the option with the largest context overlap.
  bool random_multiple_choice = false;
};

// Deterministic offline backend. It recognizes the built-in templates by
// matching the rendered prompt and answers each one by rule:
//   speculation: one "What does the passage say about <word>?" per sentence.
//   extraction:  one "(first 4 tokens, sentence)" tuple per selected sentence;
//                a sentence is dropped when mix(seed, sentence) % 3 == 0, so
//                sample runs overlap but differ.
//   QA:          the context sentence sharing most content words with the
//                question, or a refusal when nothing overlaps.
// Unrecognized prompts raise a non-retryable BackendError.
class MockBackend final : public LlmBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0, MockOptions options = {});

  std::string name() const override { return "mock"; }
  bool deterministic() const override { return true; }
  std::string complete(const std::string& system, const std::string& user,
                       std::uint64_t seed) const override;

  // Selection rule for extraction, exposed for tests.
  static bool keeps_sentence(std::uint64_t call_seed, std::string_view sentence);
  static std::string first_content_word(std::string_view sentence);

 private:
  std::string speculate(const std::string& excerpt) const;
  std::string extract(const std::string& excerpt, std::uint64_t seed) const;
  std::string answer_open(const std::string& question, const std::string& context,
                          std::string_view refusal) const;
  std::string compress(const std::string& question, const std::string& answer) const;
  std::string answer_choice(const SlotBindings& b, const std::string& user,
                            std::uint64_t seed) const;

  std::uint64_t seed_;
  MockOptions options_;
};

std::shared_ptr<const LlmBackend> mock_backend(std::uint64_t seed, MockOptions options = {});

}  // namespace fader
