#include "fader/analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "fader/errors.hpp"
#include "fader/hashing.hpp"
#include "fader/io.hpp"

namespace fader {

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw UndefinedSimilarityError(
        fmt::format("dimension mismatch: {} vs {}", u.size(), v.size()));
  }
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw UndefinedSimilarityError("cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

FileEmbeddingProvider::FileEmbeddingProvider(const std::filesystem::path& path) {
  const std::string content = io::read_file(path);
  io::for_each_line(content, [&](std::string_view line, std::size_t line_no) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("invalid JSON: ") + ex.what(), line_no);
    }
    if (!j.is_object() || !j.contains("text_sha256") || !j.contains("vector") ||
        !j["text_sha256"].is_string() || !j["vector"].is_array()) {
      throw FormatError("expected {\"text_sha256\",\"vector\"}", line_no);
    }
    Embedding vec;
    for (const auto& x : j["vector"]) {
      if (!x.is_number()) throw FormatError("vector holds a non-number", line_no);
      vec.push_back(x.get<double>());
    }
    if (vec.empty()) throw FormatError("empty vector", line_no);
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_) {
      throw FormatError(fmt::format("vector has dimension {}, expected {}", vec.size(), dim_),
                        line_no);
    }
    by_hash_[j["text_sha256"].get<std::string>()] = std::move(vec);
  });
  if (by_hash_.empty()) throw ConfigError("embedding sidecar " + path.string() + " is empty");
}

FileEmbeddingProvider::FileEmbeddingProvider(std::size_t dim,
                                             std::unordered_map<std::string, Embedding> by_hash)
    : dim_(dim), by_hash_(std::move(by_hash)) {
  for (const auto& [hash, vec] : by_hash_) {
    if (vec.size() != dim_) throw ArgumentError("vector for " + hash + " has the wrong dimension");
  }
}

std::vector<Embedding> FileEmbeddingProvider::embed(std::span<const std::string> texts,
                                                    std::size_t batch_index) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const std::string& text : texts) {
    const auto it = by_hash_.find(sha256_hex(text));
    if (it == by_hash_.end()) {
      throw ProviderError("no precomputed vector for \"" + text + "\"", batch_index);
    }
    out.push_back(it->second);
  }
  return out;
}

nlohmann::ordered_json sidecar_entry(std::string_view text, const Embedding& vector) {
  nlohmann::ordered_json j;
  j["text_sha256"] = sha256_hex(text);
  j["vector"] = vector;
  return j;
}

SimilarityBucket classify_similarity(double sim) {
  if (sim >= kCloseThreshold) return SimilarityBucket::kClose;
  if (sim >= kTopicThreshold) return SimilarityBucket::kTopic;
  return SimilarityBucket::kOther;
}

std::string_view to_string(SimilarityBucket bucket) {
  switch (bucket) {
    case SimilarityBucket::kClose:
      return "close";
    case SimilarityBucket::kTopic:
      return "topic";
    case SimilarityBucket::kOther:
      return "other";
  }
  return "other";
}

SimilarityBucketReport bucket_report(std::vector<ScoredPair> pairs, std::size_t top_k) {
  SimilarityBucketReport report;
  report.pair_count = pairs.size();
  if (pairs.empty()) return report;
  std::size_t close = 0;
  std::size_t topic = 0;
  for (const ScoredPair& p : pairs) {
    switch (classify_similarity(p.similarity)) {
      case SimilarityBucket::kClose:
        ++close;
        break;
      case SimilarityBucket::kTopic:
        ++topic;
        break;
      case SimilarityBucket::kOther:
        break;
    }
  }
  const double n = static_cast<double>(pairs.size());
  report.close_fraction = static_cast<double>(close) / n;
  report.topic_fraction = static_cast<double>(topic) / n;
  report.other_fraction = static_cast<double>(pairs.size() - close - topic) / n;
  std::sort(pairs.begin(), pairs.end(), [](const ScoredPair& a, const ScoredPair& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.speculated_question != b.speculated_question) {
      return a.speculated_question < b.speculated_question;
    }
    return a.real_question < b.real_question;
  });
  if (pairs.size() > top_k) pairs.resize(top_k);
  report.top_pairs = std::move(pairs);
  return report;
}

namespace {

std::vector<Embedding> embed_all(std::span<const std::string> texts,
                                 const EmbeddingProvider& provider, std::size_t batch_size,
                                 std::size_t& batch_counter) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, texts.size() - start);
    auto batch = provider.embed(texts.subspan(start, len), batch_counter);
    if (batch.size() != len) {
      throw ProviderError(fmt::format("returned {} vectors for {} texts", batch.size(), len),
                          batch_counter);
    }
    for (auto& v : batch) {
      if (v.size() != provider.dim()) {
        throw ProviderError(fmt::format("vector of dimension {}, expected {}", v.size(),
                                        provider.dim()),
                            batch_counter);
      }
      out.push_back(std::move(v));
    }
    ++batch_counter;
  }
  return out;
}

}  // namespace

SimilarityBucketReport bucket_similarities(std::span<const std::string> real_questions,
                                           std::span<const std::string> speculated_questions,
                                           const EmbeddingProvider& provider, std::size_t top_k,
                                           std::size_t batch_size) {
  if (real_questions.empty() || speculated_questions.empty()) {
    throw ArgumentError("bucket_similarities needs non-empty question lists");
  }
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  std::size_t batch_counter = 0;
  const auto real_vecs = embed_all(real_questions, provider, batch_size, batch_counter);
  const auto spec_vecs = embed_all(speculated_questions, provider, batch_size, batch_counter);

  std::vector<ScoredPair> pairs;
  pairs.reserve(speculated_questions.size());
  for (std::size_t s = 0; s < speculated_questions.size(); ++s) {
    ScoredPair best{real_questions[0], speculated_questions[s], cosine(spec_vecs[s], real_vecs[0])};
    for (std::size_t r = 1; r < real_questions.size(); ++r) {
      const double sim = cosine(spec_vecs[s], real_vecs[r]);
      if (sim > best.similarity ||
          (sim == best.similarity && real_questions[r] < best.real_question)) {
        best.similarity = sim;
        best.real_question = real_questions[r];
      }
    }
    pairs.push_back(std::move(best));
  }
  return bucket_report(std::move(pairs), top_k);
}

nlohmann::ordered_json SimilarityBucketReport::to_json() const {
  nlohmann::ordered_json j;
  j["pair_count"] = pair_count;
  j["thresholds"] = {{"close", kCloseThreshold}, {"topic", kTopicThreshold}};
  j["close_fraction"] = close_fraction;
  j["topic_fraction"] = topic_fraction;
  j["other_fraction"] = other_fraction;
  nlohmann::ordered_json top = nlohmann::ordered_json::array();
  for (const ScoredPair& p : top_pairs) {
    nlohmann::ordered_json e;
    e["real_question"] = p.real_question;
    e["speculated_question"] = p.speculated_question;
    e["similarity"] = p.similarity;
    e["bucket"] = to_string(classify_similarity(p.similarity));
    top.push_back(std::move(e));
  }
  j["top_pairs"] = std::move(top);
  return j;
}

std::string SimilarityBucketReport::to_table() const {
  std::string out = fmt::format("pairs: {}\n", pair_count);
  out += fmt::format("{:<28} {:>8}\n", "bucket", "fraction");
  out += fmt::format("{:<28} {:>8.4f}\n", "close (sim >= 0.85)", close_fraction);
  out += fmt::format("{:<28} {:>8.4f}\n", "topic (0.70 <= sim < 0.85)", topic_fraction);
  out += fmt::format("{:<28} {:>8.4f}\n", "other (sim < 0.70)", other_fraction);
  if (!top_pairs.empty()) {
    out += "\ntop pairs:\n";
    for (const ScoredPair& p : top_pairs) {
      out += fmt::format("  {:.4f}  {}  <->  {}\n", p.similarity, p.speculated_question,
                         p.real_question);
    }
  }
  return out;
}

}  // namespace fader
