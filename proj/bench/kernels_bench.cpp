#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "fader/eval.hpp"
#include "fader/kernels.hpp"
#include "fader/retrieval.hpp"

namespace {

using namespace fader;

std::string random_text(std::mt19937_64& rng, int words) {
  std::uniform_int_distribution<int> pick(0, 2000);
  std::string out;
  for (int k = 0; k < words; ++k) out += "w" + std::to_string(pick(rng)) + " ";
  return out;
}

const std::vector<RetrievalUnit>& units() {
  static const std::vector<RetrievalUnit> u = [] {
    std::mt19937_64 rng(42);
    std::vector<RetrievalUnit> out;
    for (int k = 0; k < 20000; ++k) {
      out.push_back({"u" + std::to_string(k), UnitKind::kChunk, random_text(rng, 60), 60, {}});
    }
    return out;
  }();
  return u;
}

const Bm25Index& index() {
  static const Bm25Index idx = Bm25Index::build(units());
  return idx;
}

const std::vector<std::string> kQuery = analyze("w1 w17 w256 w999 w1500 w3 w44 w1024");

void BM_Bm25Serial(benchmark::State& state) {
  index();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::bm25_scores_serial(index(), kQuery));
}
void BM_Bm25Omp(benchmark::State& state) {
  index();
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::bm25_scores_omp(index(), kQuery, static_cast<int>(state.range(0))));
  }
}
void BM_AnalyzeSerial(benchmark::State& state) {
  units();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::analyze_units_serial(units()));
}
void BM_AnalyzeOmp(benchmark::State& state) {
  units();
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::analyze_units_omp(units(), static_cast<int>(state.range(0))));
  }
}

struct Pairs {
  std::vector<std::string> candidates;
  std::vector<std::vector<std::string>> references;
};

const Pairs& pairs() {
  static const Pairs p = [] {
    std::mt19937_64 rng(7);
    Pairs out;
    for (int k = 0; k < 2000; ++k) {
      out.candidates.push_back(random_text(rng, 12));
      out.references.push_back({random_text(rng, 12), random_text(rng, 15)});
    }
    return out;
  }();
  return p;
}

const kernels::PairMetric kMeteor = [](const std::string& c, const std::vector<std::string>& r) {
  return meteor_lite(c, r);
};

void BM_MeteorSerial(benchmark::State& state) {
  pairs();
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::score_pairs_serial(kMeteor, pairs().candidates, pairs().references));
  }
}
void BM_MeteorOmp(benchmark::State& state) {
  pairs();
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::score_pairs_omp(kMeteor, pairs().candidates, pairs().references,
                                                      static_cast<int>(state.range(0))));
  }
}

BENCHMARK(BM_Bm25Serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Bm25Omp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AnalyzeSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AnalyzeOmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MeteorSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MeteorOmp)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
