#include "fader/mock_backend.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "fader/errors.hpp"
#include "fader/hashing.hpp"

namespace fader {

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",     "an",    "the",   "and",   "or",    "but",   "of",    "to",    "in",    "on",
      "at",    "by",    "for",   "with",  "from",  "as",    "into",  "about", "is",    "are",
      "was",   "were",  "be",    "been",  "being", "do",    "does",  "did",   "has",   "have",
      "had",   "it",    "its",   "this",  "that",  "these", "those", "he",    "she",   "they",
      "his",   "her",   "their", "him",   "them",  "we",    "our",   "you",   "your",  "i",
      "what",  "who",   "whom",  "whose", "which", "where", "when",  "why",   "how",   "s",
      "t",     "not",   "no",    "so",    "then",  "there", "here",  "after", "before", "up",
      "out",   "over",  "under", "again", "also",  "very",  "can",   "could", "would", "should",
      "will",  "shall", "may",   "might", "must",  "if",    "than",  "all",   "any",   "some",
      "one",   "said",  "say",   "says",  "passage", "text",
  };
  return words;
}

bool is_word_token(const Token& t) {
  const auto c = static_cast<unsigned char>(t.surface.front());
  return std::isalnum(c) || c >= 0x80 || c == '_';
}

std::set<std::string> content_words(std::string_view text) {
  std::set<std::string> out;
  for (const Token& t : tokenize(text)) {
    if (!is_word_token(t)) continue;
    std::string w = lowercase_ascii(t.surface);
    if (!stopwords().count(w)) out.insert(std::move(w));
  }
  return out;
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == '(') c = '[';
    if (c == ')') c = ']';
    if (c == '"') c = '\'';
  }
  return s;
}

bool starts_with_refusal(std::string_view s) {
  return lowercase_ascii(s.substr(0, 12)) == "i don't know";
}

// Context lines are "- <unit text>"; EDP units read "entity: description".
std::vector<std::string> candidate_sentences(const std::string& context) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < context.size()) {
    auto nl = context.find('\n', pos);
    if (nl == std::string::npos) nl = context.size();
    std::string_view line(context.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.starts_with("- ")) line.remove_prefix(2);
    const auto colon = line.find(": ");
    if (colon != std::string_view::npos && tokenize(line.substr(0, colon)).size() <= 6) {
      line.remove_prefix(colon + 2);
    }
    for (Sentence& s : split_sentences(line)) out.push_back(std::move(s.text));
  }
  return out;
}

}  // namespace

MockBackend::MockBackend(std::uint64_t seed, MockOptions options)
    : seed_(seed), options_(options) {}

bool MockBackend::keeps_sentence(std::uint64_t call_seed, std::string_view sentence) {
  return mix64(call_seed ^ fnv1a64(sentence)) % 3 != 0;
}

std::string MockBackend::first_content_word(std::string_view sentence) {
  const auto tokens = tokenize(sentence);
  const Token* first_word = nullptr;
  for (const Token& t : tokens) {
    if (!is_word_token(t)) continue;
    if (!first_word) first_word = &t;
    if (!stopwords().count(lowercase_ascii(t.surface))) return t.surface;
  }
  return first_word ? first_word->surface : "it";
}

std::string MockBackend::complete(const std::string& system, const std::string& user,
                                  std::uint64_t seed) const {
  const std::uint64_t effective = combine_seed(seed_, seed);
  for (const std::string& id : builtin_template_ids()) {
    const auto bindings = match_template(builtin_template(id), system, user);
    if (!bindings) continue;
    const auto& b = *bindings;
    if (id == "spec_narrative" || id == "spec_qasper") {
      return speculate(b.at(std::string(kSlotExcerpt)));
    }
    if (id == "kb_narrative" || id == "kb_qasper") {
      return extract(b.at(std::string(kSlotExcerpt)), effective);
    }
    if (id == "qa_narrative_r1") {
      const std::string& q = b.at(std::string(kSlotQuestion));
      return answer_open(q, b.at(std::string(kSlotDocuments)),
                         "I don't know. The context provided does not mention " +
                             std::string(q.empty() ? "it" : q));
    }
    if (id == "qa_narrative_r2") {
      return compress(b.at(std::string(kSlotQuestion)), b.at(std::string(kSlotRound1Answer)));
    }
    if (id == "qa_qasper") {
      return answer_open(b.at(std::string(kSlotQuestion)), b.at(std::string(kSlotDocuments)),
                         "Unanswerable.");
    }
    if (id == "qa_quality") return answer_choice(b, user, effective);
  }
  throw BackendError("mock backend: prompt does not match any built-in template", false);
}

std::string MockBackend::speculate(const std::string& excerpt) const {
  const auto sentences = split_sentences(excerpt);
  if (sentences.empty()) return "no questions extracted.";
  std::string out;
  for (const Sentence& s : sentences) {
    if (!out.empty()) out += '\n';
    out += "- What does the passage say about " + first_content_word(s.text) + "?";
  }
  return out;
}

std::string MockBackend::extract(const std::string& excerpt, std::uint64_t seed) const {
  const auto sentences = split_sentences(excerpt);
  std::vector<RawEdpTuple> tuples;
  for (const Sentence& s : sentences) {
    if (!keeps_sentence(seed, s.text)) continue;
    const auto tokens = tokenize(s.text);
    std::vector<Token> head(tokens.begin(),
                            tokens.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, tokens.size())));
    tuples.push_back({sanitize(detokenize(head)), sanitize(s.text), {}});
  }
  if (tuples.empty() && !sentences.empty()) {
    const auto tokens = tokenize(sentences.front().text);
    std::vector<Token> head(tokens.begin(),
                            tokens.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, tokens.size())));
    tuples.push_back({sanitize(detokenize(head)), sanitize(sentences.front().text), {}});
  }
  return serialize_edp_tuples(tuples);
}

std::string MockBackend::answer_open(const std::string& question, const std::string& context,
                                     std::string_view refusal) const {
  const auto wanted = content_words(question);
  std::size_t best_score = 0;
  std::string best;
  for (std::string& sentence : candidate_sentences(context)) {
    const auto have = content_words(sentence);
    std::size_t score = 0;
    for (const std::string& w : wanted) score += have.count(w);
    if (score > best_score) {
      best_score = score;
      best = std::move(sentence);
    }
  }
  return best_score > 0 ? best : std::string(refusal);
}

std::string MockBackend::compress(const std::string& question, const std::string& answer) const {
  const std::size_t original = tokenize(answer).size();
  if (starts_with_refusal(answer)) {
    const std::string shortened = "I don't know.";
    return tokenize(shortened).size() <= original ? shortened : answer;
  }
  std::set<std::string> asked;
  for (const Token& t : tokenize(question)) asked.insert(lowercase_ascii(t.surface));
  std::vector<Token> kept;
  for (const Token& t : tokenize(answer)) {
    if (is_word_token(t) && !asked.count(lowercase_ascii(t.surface))) kept.push_back(t);
  }
  if (kept.empty()) return answer;
  return detokenize(kept);
}

std::string MockBackend::answer_choice(const SlotBindings& b, const std::string& user,
                                       std::uint64_t seed) const {
  if (options_.random_multiple_choice) {
    return std::to_string(mix64(seed ^ fnv1a64(user)) % 4 + 1);
  }
  const auto have = content_words(b.at(std::string(kSlotExcerpt)));
  std::size_t best_score = 0;
  int best = 1;
  for (int k = 0; k < 4; ++k) {
    std::size_t score = 0;
    for (const std::string& w : content_words(b.at(std::string(kSlotOptions[k])))) {
      score += have.count(w);
    }
    if (score > best_score) {
      best_score = score;
      best = k + 1;
    }
  }
  return std::to_string(best);
}

std::shared_ptr<const LlmBackend> mock_backend(std::uint64_t seed, MockOptions options) {
  return std::make_shared<const MockBackend>(seed, options);
}

}  // namespace fader
