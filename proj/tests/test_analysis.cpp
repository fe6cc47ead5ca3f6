#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>

#include "fader/analysis.hpp"
#include "fader/errors.hpp"
#include "fader/hashing.hpp"
#include "fader/io.hpp"
#include "test_support.hpp"

namespace fader {
namespace {

// Provider that maps a question onto a unit vector at a fixed angle from e1,
// so cosine against the e1 question equals the stored similarity.
FileEmbeddingProvider angle_provider(const std::string& anchor,
                                     const std::vector<std::pair<std::string, double>>& sims) {
  std::unordered_map<std::string, Embedding> by_hash;
  by_hash[sha256_hex(anchor)] = {1.0, 0.0};
  for (const auto& [text, sim] : sims) {
    by_hash[sha256_hex(text)] = {sim, std::sqrt(std::max(0.0, 1.0 - sim * sim))};
  }
  return FileEmbeddingProvider(2, std::move(by_hash));
}

TEST(Cosine, HandValues) {
  const Embedding u = {1.0, 0.0};
  EXPECT_DOUBLE_EQ(cosine(u, u), 1.0);
  EXPECT_DOUBLE_EQ(cosine(u, Embedding{0.0, 1.0}), 0.0);
  EXPECT_NEAR(cosine(u, Embedding{1.0, 1.0}), 0.70710678, 1e-8);
  EXPECT_DOUBLE_EQ(cosine(u, Embedding{-2.0, 0.0}), -1.0);
  EXPECT_THROW(cosine(u, Embedding{0.0, 0.0}), UndefinedSimilarityError);
  EXPECT_THROW(cosine(u, Embedding{1.0}), UndefinedSimilarityError);
}

TEST(Buckets, Thresholds) {
  EXPECT_EQ(classify_similarity(0.85), SimilarityBucket::kClose);
  EXPECT_EQ(classify_similarity(0.8499999), SimilarityBucket::kTopic);
  EXPECT_EQ(classify_similarity(0.7), SimilarityBucket::kTopic);
  EXPECT_EQ(classify_similarity(0.6999999), SimilarityBucket::kOther);
  EXPECT_EQ(classify_similarity(-1.0), SimilarityBucket::kOther);
  EXPECT_EQ(to_string(SimilarityBucket::kTopic), "topic");
}

TEST(Buckets, PairFixturePartition) {
  std::size_t n = 0;
  io::for_each_line(io::read_file(testing::data_dir() / "similarity_pairs.jsonl"),
                    [&](std::string_view line, std::size_t) {
                      if (line.empty()) return;
                      const auto j = nlohmann::json::parse(line);
                      EXPECT_EQ(to_string(classify_similarity(j.at("similarity").get<double>())),
                                j.at("bucket").get<std::string>())
                          << j.at("speculated");
                      ++n;
                    });
  EXPECT_EQ(n, 30u);
}

TEST(Buckets, ExamplePairThroughProvider) {
  const std::string real = "Why does Helen return to Grassdale?";
  const std::string spec = "Why does Helen eventually return to Grassdale alone?";
  const auto provider = angle_provider(real, {{spec, 0.9637}});
  const std::vector<std::string> reals = {real};
  const std::vector<std::string> specs = {spec};
  const auto report = bucket_similarities(reals, specs, provider);
  EXPECT_EQ(report.pair_count, 1u);
  EXPECT_DOUBLE_EQ(report.close_fraction, 1.0);
  ASSERT_EQ(report.top_pairs.size(), 1u);
  EXPECT_NEAR(report.top_pairs[0].similarity, 0.9637, 1e-12);
}

TEST(Buckets, DirectThresholding) {
  const auto r = bucket_report({{"r", "a", 0.96}, {"r", "b", 0.75}, {"r", "c", 0.50}}, 10);
  EXPECT_DOUBLE_EQ(r.close_fraction, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.topic_fraction, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.other_fraction, 1.0 / 3.0);
  EXPECT_EQ(r.top_pairs.front().speculated_question, "a");
  EXPECT_EQ(bucket_report({{"r", "a", 0.96}, {"r", "b", 0.75}}, 1).top_pairs.size(), 1u);
}

TEST(Buckets, IdenticalListsAreClose) {
  const std::vector<std::string> qs = {"Who keeps the lamp?", "Where is the key?", "When do gulls fly?"};
  std::unordered_map<std::string, Embedding> by_hash;
  for (std::size_t k = 0; k < qs.size(); ++k) {
    Embedding v(3, 0.0);
    v[k] = 1.0;
    by_hash[sha256_hex(qs[k])] = v;
  }
  const FileEmbeddingProvider provider(3, by_hash);
  EXPECT_DOUBLE_EQ(bucket_similarities(qs, qs, provider).close_fraction, 1.0);
}

struct RandomCase {
  std::vector<std::string> reals;
  std::vector<std::string> specs;
  std::unordered_map<std::string, Embedding> vectors;
};

RandomCase random_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(1, 12);
  std::normal_distribution<double> x(0.0, 1.0);
  RandomCase c;
  const int nr = n(rng);
  const int ns = n(rng);
  for (int k = 0; k < nr; ++k) c.reals.push_back("real " + std::to_string(k) + "?");
  for (int k = 0; k < ns; ++k) c.specs.push_back("spec " + std::to_string(k) + "?");
  for (const auto* list : {&c.reals, &c.specs}) {
    for (const std::string& q : *list) {
      Embedding v = {x(rng), x(rng), x(rng), x(rng)};
      c.vectors[sha256_hex(q)] = v;
    }
  }
  return c;
}

TEST(Buckets, Properties) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    auto c = random_case(rng);
    const FileEmbeddingProvider provider(4, c.vectors);
    const auto report = bucket_similarities(c.reals, c.specs, provider, 100, 3);
    EXPECT_NEAR(report.close_fraction + report.topic_fraction + report.other_fraction, 1.0, 1e-9);
    EXPECT_EQ(report.pair_count, c.specs.size());

    // Each pair is the max over real questions.
    for (const ScoredPair& p : report.top_pairs) {
      const auto& sv = c.vectors.at(sha256_hex(p.speculated_question));
      double best = -2.0;
      for (const std::string& r : c.reals) best = std::max(best, cosine(sv, c.vectors.at(sha256_hex(r))));
      EXPECT_EQ(p.similarity, best);
    }

    // Permuting the real questions does not change the assignment.
    auto permuted = c.reals;
    std::shuffle(permuted.begin(), permuted.end(), rng);
    const auto again = bucket_similarities(permuted, c.specs, provider, 100, 5);
    EXPECT_EQ(again.top_pairs, report.top_pairs);

    // Duplicating the speculated list leaves fractions unchanged.
    auto doubled = c.specs;
    doubled.insert(doubled.end(), c.specs.begin(), c.specs.end());
    const auto twice = bucket_similarities(c.reals, doubled, provider, 100, 4);
    EXPECT_EQ(twice.pair_count, 2 * report.pair_count);
    EXPECT_NEAR(twice.close_fraction, report.close_fraction, 1e-12);
    EXPECT_NEAR(twice.topic_fraction, report.topic_fraction, 1e-12);
    EXPECT_NEAR(twice.other_fraction, report.other_fraction, 1e-12);
  }
}

TEST(Buckets, ProviderFailureCarriesBatchIndex) {
  const std::vector<std::string> reals = {"r1?", "r2?", "r3?"};
  const std::vector<std::string> specs = {"s1?", "s2?", "missing?"};
  std::unordered_map<std::string, Embedding> by_hash;
  for (const auto* list : {&reals, &specs}) {
    for (const std::string& q : *list) {
      if (q != "missing?") by_hash[sha256_hex(q)] = {1.0, 0.5};
    }
  }
  const FileEmbeddingProvider provider(2, by_hash);
  try {
    bucket_similarities(reals, specs, provider, 10, 2);
    FAIL() << "expected ProviderError";
  } catch (const ProviderError& e) {
    // Batches: [r1 r2] [r3] [s1 s2] [missing].
    EXPECT_EQ(e.batch_index(), 3u);
  }
  EXPECT_THROW(bucket_similarities({}, specs, provider), ArgumentError);
}

TEST(FileEmbeddingProvider, SidecarRoundTrip) {
  testing::TempDir dir;
  const auto path = dir / "vectors.jsonl";
  {
    std::ofstream out(path);
    out << sidecar_entry("alpha?", {0.1, 0.2, 0.3}).dump() << "\n";
    out << sidecar_entry("beta?", {0.0, 1.0, 0.0}).dump() << "\n";
  }
  const FileEmbeddingProvider provider(path);
  EXPECT_EQ(provider.dim(), 3u);
  EXPECT_EQ(provider.size(), 2u);
  const std::vector<std::string> texts = {"beta?", "alpha?", "beta?"};
  const auto vecs = provider.embed(texts, 0);
  EXPECT_EQ(vecs[0], (Embedding{0.0, 1.0, 0.0}));
  EXPECT_EQ(vecs[0], vecs[2]);

  std::ofstream(dir / "bad.jsonl") << sidecar_entry("a", {1.0}).dump() << "\n"
                                   << sidecar_entry("b", {1.0, 2.0}).dump() << "\n";
  try {
    FileEmbeddingProvider bad(dir / "bad.jsonl");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Report, JsonAndTable) {
  const auto r = bucket_report({{"Why does Helen return to Grassdale?",
                                 "Why does Helen eventually return to Grassdale alone?", 0.9637}},
                               5);
  const auto j = r.to_json();
  EXPECT_EQ(j["pair_count"], 1);
  EXPECT_EQ(j["top_pairs"][0]["bucket"], "close");
  EXPECT_NE(r.to_table().find("0.9637"), std::string::npos);
}

}  // namespace
}  // namespace fader
