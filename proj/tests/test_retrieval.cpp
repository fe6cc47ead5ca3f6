#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fader/errors.hpp"
#include "fader/kernels.hpp"
#include "fader/retrieval.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace fader {
namespace {

std::vector<RetrievalUnit> make_units(const std::vector<std::string>& texts) {
  std::vector<RetrievalUnit> units;
  const RegexTokenizer tok;
  for (std::size_t k = 0; k < texts.size(); ++k) {
    RetrievalUnit u;
    u.unit_id = "u" + std::to_string(k);
    u.text = texts[k];
    u.token_count = tok.count(texts[k]);
    units.push_back(u);
  }
  return units;
}

std::vector<RetrievalUnit> random_units(std::mt19937_64& rng, std::size_t n, int vocab) {
  std::vector<std::string> texts;
  for (std::size_t k = 0; k < n; ++k) texts.push_back(testing::random_text(rng, 1, 20, vocab));
  auto units = make_units(texts);
  // Shuffle ids so index order and id order differ.
  std::shuffle(units.begin(), units.end(), rng);
  return units;
}

TEST(Bm25, HandValue) {
  const auto units = make_units({"a b", "b c", "c d"});
  const auto index = Bm25Index::build(units, {1.2, 0.75});
  EXPECT_EQ(index.num_units(), 3u);
  EXPECT_DOUBLE_EQ(index.avgdl(), 2.0);
  EXPECT_NEAR(index.score("b", "u0"), std::log(1.6), 1e-9);
  EXPECT_NEAR(index.score("b", "u0"), 0.470004, 1e-6);
  EXPECT_EQ(index.score("b", "u2"), 0.0);
}

TEST(Bm25, UnknownTermsContributeNothing) {
  const auto units = make_units({"a b", "b c", "c d"});
  const auto index = Bm25Index::build(units);
  for (const auto& u : units) {
    EXPECT_EQ(index.score("zzz", u.unit_id), 0.0);
    EXPECT_DOUBLE_EQ(index.score("b zzz", u.unit_id), index.score("b", u.unit_id));
  }
}

TEST(Bm25, BookkeepingAndErrors) {
  const auto units = make_units({"one two three", "four", "Five six"});
  const auto index = Bm25Index::build(units);
  EXPECT_DOUBLE_EQ(index.avgdl(), 2.0);
  EXPECT_EQ(index.df("five"), 1u);
  EXPECT_EQ(index.df("Five"), 0u);
  EXPECT_THROW(index.score("one", "missing"), LookupError);
  EXPECT_THROW(Bm25Index::build(std::vector<RetrievalUnit>{}), ArgumentError);
  auto dup = units;
  dup[2].unit_id = dup[0].unit_id;
  EXPECT_THROW(Bm25Index::build(dup), ArgumentError);
}

TEST(Bm25, MatchesNaiveRecompute) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> n_units(1, 50);
  std::uniform_int_distribution<int> q_len(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto units = random_units(rng, n_units(rng), 30);
    const auto index = Bm25Index::build(units);
    const std::string query = testing::random_text(rng, 1, q_len(rng), 35);
    const auto expected = oracle::naive_ranking(units, query, 1.2, 0.75);
    const auto ctx = retrieve_under_budget(index, units, query, 0);
    ASSERT_EQ(ctx.hits.size(), expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
      EXPECT_NEAR(ctx.hits[k].score, expected[k].score, 1e-9);
      EXPECT_NEAR(index.score(query, expected[k].unit_id), expected[k].score, 1e-9);
    }
    // Rankings agree up to floating-point ties.
    for (std::size_t k = 0; k < expected.size(); ++k) {
      if (ctx.hits[k].unit_id != expected[k].unit_id) {
        EXPECT_NEAR(index.score(query, ctx.hits[k].unit_id), expected[k].score, 1e-9);
      }
    }
  }
}

TEST(Bm25, ScoresAreNonNegative) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    // Tiny vocabulary so most terms have df > N/2.
    const auto units = random_units(rng, 20, 4);
    const auto index = Bm25Index::build(units);
    for (const Hit& h : retrieve_under_budget(index, units, testing::random_text(rng, 1, 8, 5), 0).hits) {
      EXPECT_GE(h.score, 0.0);
    }
  }
}

TEST(Bm25, CorpusDuplicationFollowsFormula) {
  const std::vector<std::string> texts = {"harbor key stair", "lamp room reef", "key lamp",
                                          "gull dawn breakwater key"};
  const auto once = make_units(texts);
  std::vector<std::string> doubled_texts = texts;
  doubled_texts.insert(doubled_texts.end(), texts.begin(), texts.end());
  const auto twice = make_units(doubled_texts);
  const auto i1 = Bm25Index::build(once);
  const auto i2 = Bm25Index::build(twice);

  EXPECT_DOUBLE_EQ(i1.avgdl(), i2.avgdl());
  for (std::size_t u = 0; u < once.size(); ++u) {
    EXPECT_DOUBLE_EQ(i1.length_norm(u), i2.length_norm(u));
    EXPECT_DOUBLE_EQ(i2.length_norm(u), i2.length_norm(u + once.size()));
  }
  for (const char* term : {"key", "lamp", "reef", "harbor"}) {
    const double df = static_cast<double>(i1.df(term));
    EXPECT_EQ(i2.df(term), 2 * i1.df(term));
    EXPECT_NEAR(i2.idf(term), std::log(1.0 + (8.0 - 2 * df + 0.5) / (2 * df + 0.5)), 1e-12);
  }
  // The +0.5 terms do not scale, so idf itself is not invariant.
  EXPECT_NE(i1.idf("key"), i2.idf("key"));
  // Rarer terms still weigh more, and copies score identically.
  EXPECT_GT(i2.idf("reef"), i2.idf("lamp"));
  EXPECT_GT(i2.idf("lamp"), i2.idf("key"));
  for (std::size_t u = 0; u < once.size(); ++u) {
    EXPECT_EQ(i2.score("key lamp reef", twice[u].unit_id),
              i2.score("key lamp reef", twice[u + once.size()].unit_id));
  }
}

TEST(Bm25, JsonRoundTrip) {
  std::mt19937_64 rng(3);
  const auto units = random_units(rng, 25, 20);
  const auto index = Bm25Index::build(units, {1.5, 0.6});
  const auto back = Bm25Index::from_json(nlohmann::json::parse(index.to_json().dump()));
  EXPECT_EQ(back.to_json(), index.to_json());
  const std::string q = "w1 w2 w3 w4";
  for (const auto& u : units) EXPECT_EQ(back.score(q, u.unit_id), index.score(q, u.unit_id));
  auto broken = index.to_json();
  broken["lengths"][0] = 999;
  EXPECT_THROW(Bm25Index::from_json(broken), FormatError);
  EXPECT_THROW(Bm25Index::from_json(nlohmann::json::object()), FormatError);
}

TEST(BudgetPrefix, TraceAndEdges) {
  const std::vector<std::size_t> counts = {4, 3, 5};
  EXPECT_EQ(budget_prefix(counts, 8), 2u);
  EXPECT_EQ(budget_prefix(counts, 0), 0u);
  EXPECT_EQ(budget_prefix(counts, 12), 3u);
  EXPECT_EQ(budget_prefix(counts, 1000), 3u);
  EXPECT_EQ(budget_prefix(counts, 3), 0u);
}

TEST(RetrieveUnderBudget, BudgetZeroAndSaturation) {
  const auto units = make_units({"alpha beta", "beta gamma delta", "gamma"});
  const auto index = Bm25Index::build(units);
  const auto none = retrieve_under_budget(index, units, "beta", 0);
  EXPECT_TRUE(none.selected.empty());
  EXPECT_EQ(none.used_tokens, 0u);
  const auto all = retrieve_under_budget(index, units, "beta", 100);
  ASSERT_EQ(all.selected.size(), 3u);
  EXPECT_EQ(all.used_tokens, 6u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(all.selected[k], all.hits[k].unit_id);
}

TEST(RetrieveUnderBudget, TiesBreakByUnitId) {
  auto units = make_units({"x", "x", "x"});
  units[0].unit_id = "c";
  units[1].unit_id = "a";
  units[2].unit_id = "b";
  const auto index = Bm25Index::build(units);
  const auto ctx = retrieve_under_budget(index, units, "x", 10);
  EXPECT_EQ(ctx.selected, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(RetrieveUnderBudget, PrefixMonotonicity) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> n_units(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto units = random_units(rng, n_units(rng), 25);
    const auto index = Bm25Index::build(units);
    std::size_t total = 0;
    for (const auto& u : units) total += u.token_count;
    std::uniform_int_distribution<std::size_t> budget(0, total + 5);
    std::size_t b1 = budget(rng);
    std::size_t b2 = budget(rng);
    if (b1 > b2) std::swap(b1, b2);
    const std::string q = testing::random_text(rng, 1, 6, 25);
    const auto c1 = retrieve_under_budget(index, units, q, b1);
    const auto c2 = retrieve_under_budget(index, units, q, b2);
    ASSERT_LE(c1.selected.size(), c2.selected.size());
    EXPECT_TRUE(std::equal(c1.selected.begin(), c1.selected.end(), c2.selected.begin()));
    EXPECT_LE(c1.used_tokens, b1);
    EXPECT_LE(c2.used_tokens, b2);
  }
}

TEST(RetrieveUnderBudget, DeterministicAndThreadIndependent) {
  std::mt19937_64 rng(5);
  const auto units = random_units(rng, 200, 60);
  const auto serial = Bm25Index::build(units, {}, 1);
  const auto parallel = Bm25Index::build(units, {}, 4);
  EXPECT_EQ(serial.to_json(), parallel.to_json());
  for (int trial = 0; trial < 20; ++trial) {
    const std::string q = testing::random_text(rng, 1, 8, 60);
    const auto a = retrieve_under_budget(serial, units, q, 150, 1);
    EXPECT_EQ(a, retrieve_under_budget(serial, units, q, 150, 1));
    EXPECT_EQ(a, retrieve_under_budget(parallel, units, q, 150, 4));
  }
}

TEST(RetrieveUnderBudget, RejectsMismatchedUnits) {
  const auto units = make_units({"a", "b"});
  const auto index = Bm25Index::build(units);
  auto swapped = units;
  std::swap(swapped[0], swapped[1]);
  EXPECT_THROW(retrieve_under_budget(index, swapped, "a", 5), ArgumentError);
  EXPECT_THROW(retrieve_under_budget(index, std::span(units).first(1), "a", 5), ArgumentError);
}

TEST(RenderContext, BulletsInRankOrder) {
  const auto units = make_units({"Key: under the stair", "Reef: north of the lamp"});
  const auto index = Bm25Index::build(units);
  const auto ctx = retrieve_under_budget(index, units, "reef lamp", 100);
  EXPECT_EQ(render_context(ctx, units), "- Reef: north of the lamp\n- Key: under the stair");
  EXPECT_EQ(render_context(retrieve_under_budget(index, units, "reef", 0), units), "");
}

TEST(Units, FromEdpAndChunk) {
  const RegexTokenizer tok;
  const Edp e = Edp::make("d", "Key", "Under the stair.", 3, 2);
  const auto u = unit_from_edp(e, tok);
  EXPECT_EQ(u.unit_id, e.edp_id);
  EXPECT_EQ(u.text, "Key: Under the stair.");
  EXPECT_EQ(u.token_count, 6u);
  EXPECT_EQ(u.provenance, (Provenance{"d", 3, 2}));
  const auto c = unit_from_chunk(Chunk{"d", 4, "A b. C d.", 6, 0, 1}, tok);
  EXPECT_EQ(c.unit_id, "d#4");
  EXPECT_EQ(c.kind, UnitKind::kChunk);
  EXPECT_EQ(c.provenance.sample_run, std::nullopt);
  EXPECT_EQ(unit_kind_from_string("edp"), UnitKind::kEdp);
  EXPECT_THROW(unit_kind_from_string("sentence"), ArgumentError);
}

// ---------------------------------------------------------------------------
// Kernels: OpenMP and serial twins agree bit-for-bit.
// ---------------------------------------------------------------------------

TEST(Kernels, Bm25SerialAndOmpAgree) {
  std::mt19937_64 rng(6);
  const auto units = random_units(rng, 500, 80);
  const auto index = Bm25Index::build(units);
  for (int trial = 0; trial < 20; ++trial) {
    const auto terms = analyze(testing::random_text(rng, 1, 8, 90));
    const auto serial = kernels::bm25_scores_serial(index, terms);
    for (int threads : {1, 2, 4, 0}) {
      EXPECT_EQ(serial, kernels::bm25_scores_omp(index, terms, threads)) << threads;
    }
  }
}

TEST(Kernels, AnalyzeSerialAndOmpAgree) {
  std::mt19937_64 rng(7);
  const auto units = random_units(rng, 300, 50);
  EXPECT_EQ(kernels::analyze_units_serial(units), kernels::analyze_units_omp(units, 3));
}

TEST(Kernels, PairScoresSerialAndOmpAgree) {
  std::mt19937_64 rng(8);
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  for (int k = 0; k < 200; ++k) {
    cands.push_back(testing::random_text(rng, 0, 12, 15));
    refs.push_back({testing::random_text(rng, 1, 12, 15), testing::random_text(rng, 1, 12, 15)});
  }
  const kernels::PairMetric metric = [](const std::string& c, const std::vector<std::string>& r) {
    return rouge_l(c, r) + meteor_lite(c, r);
  };
  EXPECT_EQ(kernels::score_pairs_serial(metric, cands, refs),
            kernels::score_pairs_omp(metric, cands, refs, 4));
}

}  // namespace
}  // namespace fader
