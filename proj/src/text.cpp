#include "fader/text.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <sstream>

#include "fader/errors.hpp"

namespace fader {

namespace {

enum class CharClass { kSpace, kWord, kPunct };

// Decodes one UTF-8 code point starting at text[i]. Malformed sequences are
// consumed one byte at a time and classified as word bytes.
std::pair<char32_t, std::size_t> decode_utf8(std::string_view text, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {0xFFFD, 1};
  }
  if (i + len > text.size()) return {0xFFFD, 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(text[i + k]);
    if ((b & 0xC0) != 0x80) return {0xFFFD, 1};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len};
}

CharClass classify(char32_t cp) {
  if (cp < 0x80) {
    const auto c = static_cast<unsigned char>(cp);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      return CharClass::kSpace;
    }
    if ((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') {
      return CharClass::kWord;
    }
    if (c < 0x20 || c == 0x7F) return CharClass::kSpace;
    return CharClass::kPunct;
  }
  if (cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 ||
      cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000) {
    return CharClass::kSpace;
  }
  // Latin-1 punctuation and symbols, general punctuation, CJK punctuation.
  if ((cp >= 0xA1 && cp <= 0xBF) || cp == 0xD7 || cp == 0xF7 ||
      (cp >= 0x2010 && cp <= 0x205E) || (cp >= 0x3001 && cp <= 0x303F) ||
      (cp >= 0xFF01 && cp <= 0xFF0F)) {
    return CharClass::kPunct;
  }
  return CharClass::kWord;
}

template <typename Emit>
void scan_default(std::string_view text, Emit&& emit) {
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    auto [cp, len] = decode_utf8(text, i);
    const CharClass cls = classify(cp);
    if (cls == CharClass::kSpace) {
      i += len;
      continue;
    }
    if (cls == CharClass::kPunct) {
      emit(i, i + len);
      i += len;
      continue;
    }
    const std::size_t start = i;
    i += len;
    while (i < n) {
      auto [cp2, len2] = decode_utf8(text, i);
      if (classify(cp2) != CharClass::kWord) break;
      i += len2;
    }
    emit(start, i);
  }
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')'; }

std::vector<std::uint8_t> decode_base64(std::string_view in) {
  static constexpr std::array<int, 256> table = [] {
    std::array<int, 256> t{};
    t.fill(-1);
    constexpr std::string_view alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    for (std::size_t k = 0; k < alphabet.size(); ++k) {
      t[static_cast<unsigned char>(alphabet[k])] = static_cast<int>(k);
    }
    return t;
  }();
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t pad = 0;
  for (char c : in) {
    if (c == '=') {
      ++pad;
      continue;
    }
    if (pad > 0) throw std::invalid_argument("data after padding");
    const int v = table[static_cast<unsigned char>(c)];
    if (v < 0) throw std::invalid_argument("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
    }
  }
  if (in.empty() || pad > 2 || (in.size() % 4) != 0) throw std::invalid_argument("bad base64 length");
  return out;
}

}  // namespace

std::size_t Tokenizer::count(std::string_view text) const { return tokenize(text).size(); }

std::shared_ptr<const Tokenizer> Tokenizer::default_tokenizer() {
  static const auto instance = std::make_shared<const RegexTokenizer>();
  return instance;
}

std::shared_ptr<const Tokenizer> Tokenizer::create(const TokenizerSpec& spec) {
  switch (spec.kind) {
    case TokenizerSpec::Kind::kDefault:
      return default_tokenizer();
    case TokenizerSpec::Kind::kBpe:
      return std::make_shared<const BpeTokenizer>(spec.vocab_path);
  }
  throw ConfigError("unknown tokenizer kind");
}

std::vector<Token> RegexTokenizer::tokenize(std::string_view text) const {
  std::vector<Token> tokens;
  scan_default(text, [&](std::size_t s, std::size_t e) {
    tokens.push_back(Token{std::string(text.substr(s, e - s)), {s, e}});
  });
  return tokens;
}

std::size_t RegexTokenizer::count(std::string_view text) const {
  std::size_t n = 0;
  scan_default(text, [&](std::size_t, std::size_t) { ++n; });
  return n;
}

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, std::uint32_t> ranks)
    : ranks_(std::move(ranks)) {}

BpeTokenizer::BpeTokenizer(const std::filesystem::path& ranks_path) {
  std::ifstream in(ranks_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open tokenizer vocabulary: " + ranks_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size()) {
      throw ConfigError("corrupt tokenizer vocabulary " + ranks_path.string() + " at line " +
                        std::to_string(line_no));
    }
    std::vector<std::uint8_t> bytes;
    std::uint64_t rank = 0;
    try {
      bytes = decode_base64(std::string_view(line).substr(0, sp));
      const std::string rank_text = line.substr(sp + 1);
      std::size_t used = 0;
      rank = std::stoull(rank_text, &used);
      if (used != rank_text.size()) throw std::invalid_argument("trailing data");
    } catch (const std::exception&) {
      throw ConfigError("corrupt tokenizer vocabulary " + ranks_path.string() + " at line " +
                        std::to_string(line_no));
    }
    if (rank > std::numeric_limits<std::uint32_t>::max()) {
      throw ConfigError("rank out of range in " + ranks_path.string() + " at line " +
                        std::to_string(line_no));
    }
    ranks_.emplace(std::string(bytes.begin(), bytes.end()), static_cast<std::uint32_t>(rank));
  }
  if (ranks_.empty()) throw ConfigError("empty tokenizer vocabulary: " + ranks_path.string());
}

std::vector<ByteSpan> BpeTokenizer::pretokenize(std::string_view text) {
  // Procedural rendition of the cl100k split pattern:
  //   's|'t|'re|'ve|'m|'ll|'d | [^\r\n\p{L}\p{N}]?\p{L}+ | \p{N}{1,3}
  //   | ?[^\s\p{L}\p{N}]+[\r\n]* | \s*[\r\n] | \s+(?!\S) | \s+
  // Non-ASCII bytes count as letters.
  auto letter = [](unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
  };
  auto digit = [](unsigned char c) { return c >= '0' && c <= '9'; };
  auto newline = [](unsigned char c) { return c == '\n' || c == '\r'; };
  auto space = [](unsigned char c) { return is_space(static_cast<char>(c)); };

  std::vector<ByteSpan> pieces;
  const std::size_t n = text.size();
  auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = at(i);
    if (c == '\'' && i + 1 < n) {
      const char a = static_cast<char>(std::tolower(at(i + 1)));
      const char b = i + 2 < n ? static_cast<char>(std::tolower(at(i + 2))) : '\0';
      std::size_t len = 0;
      if ((a == 'l' && b == 'l') || (a == 'v' && b == 'e') || (a == 'r' && b == 'e')) {
        len = 3;
      } else if (a == 's' || a == 'd' || a == 'm' || a == 't') {
        len = 2;
      }
      if (len > 0) {
        pieces.push_back({i, i + len});
        i += len;
        continue;
      }
    }
    // Optional single non-letter/non-digit/non-newline prefix, then letters.
    {
      std::size_t j = i;
      if (!letter(c) && !digit(c) && !newline(c) && i + 1 < n && letter(at(i + 1))) ++j;
      if (j < n && letter(at(j))) {
        while (j < n && letter(at(j))) ++j;
        pieces.push_back({i, j});
        i = j;
        continue;
      }
    }
    if (digit(c)) {
      std::size_t j = i;
      while (j < n && j < i + 3 && digit(at(j))) ++j;
      pieces.push_back({i, j});
      i = j;
      continue;
    }
    {
      std::size_t j = i;
      if (c == ' ' && i + 1 < n) ++j;
      std::size_t k = j;
      while (k < n && !space(at(k)) && !letter(at(k)) && !digit(at(k))) ++k;
      if (k > j) {
        while (k < n && newline(at(k))) ++k;
        pieces.push_back({i, k});
        i = k;
        continue;
      }
    }
    // Whitespace alternatives.
    std::size_t j = i;
    while (j < n && space(at(j))) ++j;
    std::size_t last_nl = n;
    for (std::size_t k = i; k < j; ++k) {
      if (newline(at(k))) last_nl = k;
    }
    if (last_nl != n) {
      pieces.push_back({i, last_nl + 1});
      i = last_nl + 1;
      continue;
    }
    if (j < n && j - i > 1) {
      // Leave the final space to prefix the following piece.
      pieces.push_back({i, j - 1});
      i = j - 1;
      continue;
    }
    pieces.push_back({i, j});
    i = j;
  }
  return pieces;
}

void BpeTokenizer::encode_piece(std::string_view text, ByteSpan piece,
                                std::vector<Token>& out) const {
  const std::string_view bytes = text.substr(piece.start, piece.size());
  if (ranks_.count(std::string(bytes))) {
    out.push_back(Token{std::string(bytes), piece});
    return;
  }
  // Boundaries of the current parts; merge the adjacent pair whose
  // concatenation has the lowest rank until none is in the vocabulary.
  std::vector<std::size_t> bounds(bytes.size() + 1);
  for (std::size_t k = 0; k <= bytes.size(); ++k) bounds[k] = k;
  constexpr auto kNone = std::numeric_limits<std::uint32_t>::max();
  while (bounds.size() > 2) {
    std::uint32_t best = kNone;
    std::size_t best_at = 0;
    for (std::size_t k = 0; k + 2 < bounds.size(); ++k) {
      const auto it = ranks_.find(std::string(bytes.substr(bounds[k], bounds[k + 2] - bounds[k])));
      if (it != ranks_.end() && it->second < best) {
        best = it->second;
        best_at = k;
      }
    }
    if (best == kNone) break;
    bounds.erase(bounds.begin() + static_cast<std::ptrdiff_t>(best_at) + 1);
  }
  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    const std::size_t s = piece.start + bounds[k];
    const std::size_t e = piece.start + bounds[k + 1];
    out.push_back(Token{std::string(text.substr(s, e - s)), {s, e}});
  }
}

std::vector<Token> BpeTokenizer::tokenize(std::string_view text) const {
  std::vector<Token> tokens;
  for (const ByteSpan& piece : pretokenize(text)) encode_piece(text, piece, tokens);
  return tokens;
}

std::vector<Token> tokenize(std::string_view text, const Tokenizer& tokenizer) {
  return tokenizer.tokenize(text);
}

std::vector<Token> tokenize(std::string_view text) {
  return RegexTokenizer{}.tokenize(text);
}

std::string detokenize(const std::vector<Token>& tokens) {
  std::string out;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    if (k > 0) out.push_back(' ');
    out += tokens[k].surface;
  }
  return out;
}

std::string lowercase_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<Sentence> split_sentences(std::string_view text, const Tokenizer& tokenizer) {
  std::vector<Sentence> sentences;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n && is_space(text[i])) ++i;
  std::size_t start = i;

  auto emit = [&](std::size_t end) {
    std::size_t e = end;
    while (e > start && is_space(text[e - 1])) --e;
    if (e > start) {
      std::string s(text.substr(start, e - start));
      const std::size_t count = tokenizer.count(s);
      sentences.push_back(Sentence{std::move(s), count, {start, e}});
    }
  };

  while (i < n) {
    if (!is_terminator(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && is_terminator(text[j])) ++j;
    while (j < n && is_closer(text[j])) ++j;
    std::size_t k = j;
    while (k < n && is_space(text[k])) ++k;
    const bool at_end = k == n;
    const bool next_upper =
        k > j && k < n &&
        (is_upper(text[k]) || (text[k] == '"' && k + 1 < n && is_upper(text[k + 1])));
    if (at_end || next_upper) {
      emit(j);
      start = k;
      i = k;
    } else {
      i = j;
    }
  }
  if (start < n) emit(n);
  return sentences;
}

std::vector<Sentence> split_sentences(std::string_view text) {
  return split_sentences(text, RegexTokenizer{});
}

std::vector<Chunk> chunk_sentences(const std::string& doc_id,
                                   const std::vector<Sentence>& sentences,
                                   std::size_t target_tokens) {
  if (target_tokens < 1) throw ArgumentError("chunk target_tokens must be >= 1");
  std::vector<Chunk> chunks;
  Chunk current;
  bool open = false;
  auto close = [&] {
    if (open) {
      current.chunk_index = chunks.size();
      chunks.push_back(std::move(current));
      current = Chunk{};
      open = false;
    }
  };
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const Sentence& s = sentences[k];
    if (s.token_count == 0) {
      // Nothing countable; glue to the current chunk so text is not lost.
      if (open) {
        current.text += ' ';
        current.text += s.text;
        current.last_sentence = k;
      }
      continue;
    }
    if (open && current.token_count + s.token_count > target_tokens) close();
    if (!open) {
      current.doc_id = doc_id;
      current.text = s.text;
      current.token_count = s.token_count;
      current.first_sentence = k;
      current.last_sentence = k;
      open = true;
    } else {
      current.text += ' ';
      current.text += s.text;
      current.token_count += s.token_count;
      current.last_sentence = k;
    }
  }
  close();
  return chunks;
}

std::vector<Chunk> chunk_document(const Document& doc, std::size_t target_tokens,
                                  const Tokenizer& tokenizer) {
  if (target_tokens < 1) throw ArgumentError("chunk target_tokens must be >= 1");
  return chunk_sentences(doc.doc_id, split_sentences(doc.text, tokenizer), target_tokens);
}

}  // namespace fader
