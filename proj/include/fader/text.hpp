#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fader {

struct ByteSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - start; }
  bool operator==(const ByteSpan&) const = default;
};

struct Token {
  std::string surface;
  ByteSpan span;

  bool operator==(const Token&) const = default;
};

struct Sentence {
  std::string text;
  std::size_t token_count = 0;
  ByteSpan span;
};

struct Document {
  std::string doc_id;
  std::string text;
  std::map<std::string, std::string> meta;
};

struct Chunk {
  std::string doc_id;
  std::size_t chunk_index = 0;
  std::string text;
  std::size_t token_count = 0;
  // Inclusive indices into the document's sentence list.
  std::size_t first_sentence = 0;
  std::size_t last_sentence = 0;
};

struct TokenizerSpec {
  enum class Kind { kDefault, kBpe };

  Kind kind = Kind::kDefault;
  // Rank file in tiktoken layout: one "<base64 bytes> <rank>" per line.
  std::filesystem::path vocab_path;

  static TokenizerSpec default_spec() { return {}; }
  static TokenizerSpec bpe(std::filesystem::path path) { return {Kind::kBpe, std::move(path)}; }
};

// Immutable once constructed; share freely across threads.
class Tokenizer {
 public:
  // Throws ConfigError naming the path when a BPE vocabulary cannot be loaded.
  static std::shared_ptr<const Tokenizer> create(const TokenizerSpec& spec);
  static std::shared_ptr<const Tokenizer> default_tokenizer();

  virtual ~Tokenizer() = default;

  virtual std::vector<Token> tokenize(std::string_view text) const = 0;
  virtual std::size_t count(std::string_view text) const;
  virtual std::string_view name() const = 0;
};

// Word runs and single punctuation marks, as produced by the default tokenizer.
class RegexTokenizer final : public Tokenizer {
 public:
  std::vector<Token> tokenize(std::string_view text) const override;
  std::size_t count(std::string_view text) const override;
  std::string_view name() const override { return "default"; }
};

// Rank-based byte pair encoding over a cl100k-style pre-tokenization.
class BpeTokenizer final : public Tokenizer {
 public:
  explicit BpeTokenizer(const std::filesystem::path& ranks_path);
  BpeTokenizer(std::unordered_map<std::string, std::uint32_t> ranks);

  std::vector<Token> tokenize(std::string_view text) const override;
  std::string_view name() const override { return "bpe"; }
  std::size_t vocab_size() const noexcept { return ranks_.size(); }

  // Pre-tokenizer pieces (spans into text) before merging.
  static std::vector<ByteSpan> pretokenize(std::string_view text);

 private:
  void encode_piece(std::string_view text, ByteSpan piece, std::vector<Token>& out) const;

  std::unordered_map<std::string, std::uint32_t> ranks_;
};

std::vector<Token> tokenize(std::string_view text, const Tokenizer& tokenizer);
std::vector<Token> tokenize(std::string_view text);

// Joins token surfaces with single spaces.
std::string detokenize(const std::vector<Token>& tokens);

std::string lowercase_ascii(std::string_view s);

// Boundaries fall after a run of . ! ? that is followed by whitespace and an
// uppercase letter, or by end of text. Leading and trailing whitespace is not
// part of any sentence.
std::vector<Sentence> split_sentences(std::string_view text, const Tokenizer& tokenizer);
std::vector<Sentence> split_sentences(std::string_view text);

inline constexpr std::size_t kDefaultChunkTokens = 250;

// Greedy close-before-overflow packing of whole sentences. Sentences inside a
// chunk are joined by a single space. A sentence longer than target_tokens is
// emitted alone.
std::vector<Chunk> chunk_document(const Document& doc, std::size_t target_tokens,
                                  const Tokenizer& tokenizer);
std::vector<Chunk> chunk_sentences(const std::string& doc_id,
                                   const std::vector<Sentence>& sentences,
                                   std::size_t target_tokens);

}  // namespace fader
