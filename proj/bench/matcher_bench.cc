// Indexed evaluation against the brute-force scan kernels on a synthetic
// corpus. Run with --benchmark_filter to pick a kernel.

#include <map>
#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "boolgen/corpus.h"
#include "boolgen/matcher.h"
#include "boolgen/query.h"

namespace boolgen {
namespace {

const std::vector<std::string> kWords{
    "rabies",  "vaccine",  "vaccination", "dog",       "bite",     "exposure", "prophylaxis",
    "immune",  "antibody", "titer",       "children",  "trial",    "booster",  "schedule",
    "virus",   "lyssa",    "wound",       "treatment", "clinical", "cohort",   "outcome",
    "safety",  "efficacy", "dose",        "rural",     "animal",   "control",  "surveillance"};
const std::vector<std::string> kHeadings{"Rabies Vaccines", "Viral Vaccines", "Vaccination",
                                         "Antibodies, Viral", "Dogs", "Bites and Stings",
                                         "Rabies/prevention & control", "Child"};

std::string sentence(std::mt19937_64& rng, int words) {
  std::string out;
  for (int i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += kWords[rng() % kWords.size()];
  }
  return out;
}

CorpusIndex synthetic_corpus(std::size_t n) {
  std::mt19937_64 rng(42);
  std::vector<Document> docs(n);
  for (std::size_t i = 0; i < n; ++i) {
    Document& d = docs[i];
    d.pmid = std::to_string(1000000 + i);
    d.title = sentence(rng, 8);
    d.abstract = sentence(rng, 120);
    for (int k = 0; k < 3; ++k) d.mesh_headings.push_back(kHeadings[rng() % kHeadings.size()]);
    d.publication_types = {rng() % 4 == 0 ? "Randomized Controlled Trial" : "Journal Article"};
    d.entry_date = Date(2000 + static_cast<int>(rng() % 20), 1 + rng() % 12, 1 + rng() % 28);
  }
  MeshHierarchy h;
  h.add("Rabies Vaccines", "Viral Vaccines");
  h.add("Viral Vaccines", "Vaccines");
  return CorpusIndex::build(std::move(docs), std::move(h));
}

const CorpusIndex& corpus(std::size_t n) {
  static std::map<std::size_t, CorpusIndex> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, synthetic_corpus(n)).first;
  return it->second;
}

const QueryPtr& bench_query() {
  static const QueryPtr q = parse(
      "((rabies[tiab] OR lyssa*[tiab] OR \"dog bite\"[tiab]) AND (vaccin*[tiab] OR "
      "\"Viral Vaccines\"[mesh] OR prophylaxis)) NOT (animal[ti] OR \"Dogs\"[MeSH:noexp])");
  return q;
}

const Date kCutoff(2015, 6, 30);

void BM_Indexed(benchmark::State& state) {
  const auto& index = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_ids(*bench_query(), index, kCutoff));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScanSerial(benchmark::State& state) {
  const auto& index = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(scan_serial(*bench_query(), index, kCutoff));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScanParallel(benchmark::State& state) {
  const auto& index = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(scan_parallel(*bench_query(), index, kCutoff));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(BM_Indexed)->Arg(1000)->Arg(10000)->Arg(50000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ScanSerial)->Arg(1000)->Arg(10000)->Arg(50000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ScanParallel)->Arg(1000)->Arg(10000)->Arg(50000)->Unit(benchmark::kMicrosecond)
    ->UseRealTime();

}  // namespace
}  // namespace boolgen

BENCHMARK_MAIN();
