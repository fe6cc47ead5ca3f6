#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fader {

using Embedding = std::vector<double>;

// Throws UndefinedSimilarityError for a zero vector or mismatched dimensions.
double cosine(std::span<const double> u, std::span<const double> v);

// Identical text must map to an identical vector within one provider. embed()
// may be called concurrently.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::size_t dim() const = 0;
  // Throws ProviderError (carrying batch_index) when a text cannot be embedded.
  virtual std::vector<Embedding> embed(std::span<const std::string> texts,
                                       std::size_t batch_index) const = 0;
};

// Precomputed vectors from a JSONL sidecar: {"text_sha256": hex, "vector": [...]}.
class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit FileEmbeddingProvider(const std::filesystem::path& path);
  FileEmbeddingProvider(std::size_t dim, std::unordered_map<std::string, Embedding> by_hash);

  std::size_t dim() const override { return dim_; }
  std::vector<Embedding> embed(std::span<const std::string> texts,
                               std::size_t batch_index) const override;

  std::size_t size() const noexcept { return by_hash_.size(); }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Embedding> by_hash_;
};

// One sidecar line for text.
nlohmann::ordered_json sidecar_entry(std::string_view text, const Embedding& vector);

enum class SimilarityBucket { kClose, kTopic, kOther };

inline constexpr double kCloseThreshold = 0.85;
inline constexpr double kTopicThreshold = 0.7;

SimilarityBucket classify_similarity(double sim);
std::string_view to_string(SimilarityBucket bucket);

struct ScoredPair {
  std::string real_question;
  std::string speculated_question;
  double similarity = 0.0;

  bool operator==(const ScoredPair&) const = default;
};

struct SimilarityBucketReport {
  std::size_t pair_count = 0;
  double close_fraction = 0.0;
  double topic_fraction = 0.0;
  double other_fraction = 0.0;
  // Sorted by similarity descending, then by the two question texts.
  std::vector<ScoredPair> top_pairs;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

// Bucket fractions over raw similarities (pairs only used for top_pairs).
SimilarityBucketReport bucket_report(std::vector<ScoredPair> pairs, std::size_t top_k);

// Each speculated question is paired with its most similar real question.
// Texts are embedded in batches of batch_size; both lists must be non-empty.
SimilarityBucketReport bucket_similarities(std::span<const std::string> real_questions,
                                           std::span<const std::string> speculated_questions,
                                           const EmbeddingProvider& provider,
                                           std::size_t top_k = 10, std::size_t batch_size = 64);

}  // namespace fader
