#include <benchmark/benchmark.h>

#include <vector>

#include "strata/encoder.hpp"
#include "strata/knowledge_base.hpp"
#include "strata/rng.hpp"

namespace {

strata::kb::KnowledgeBase make_kb(std::size_t entries, std::size_t dim) {
  strata::Rng rng(99);
  std::vector<strata::kb::KBEntry> es(entries);
  for (std::size_t i = 0; i < entries; ++i) {
    es[i].id = i;
    es[i].embedding.resize(dim);
    for (auto& x : es[i].embedding) x = float(rng.normal());
  }
  return strata::kb::KnowledgeBase::build(std::move(es), "bench");
}

void BM_TopK(benchmark::State& state) {
  const std::size_t dim = 128;
  auto kb = make_kb(std::size_t(state.range(0)), dim);
  strata::Rng rng(7);
  std::vector<double> query(dim);
  for (auto& x : query) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(kb.top_k(query, 5));
}
BENCHMARK(BM_TopK)->Arg(256)->Arg(1024)->Arg(4096);

void BM_EncoderEmbed(benchmark::State& state) {
  strata::encoder::EncoderConfig cfg;
  cfg.embed_dim = std::size_t(state.range(0));
  strata::encoder::EncoderModel model(cfg);
  strata::Rng rng(3);
  std::vector<double> segment(cfg.segment_len);
  for (auto& x : segment) x = rng.uniform(0.0, 512.0);
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(segment));
}
BENCHMARK(BM_EncoderEmbed)->Arg(16)->Arg(32);

void BM_MahalanobisDistance(benchmark::State& state) {
  const std::size_t dim = std::size_t(state.range(0));
  auto kb = make_kb(4 * dim, dim);
  strata::Rng rng(11);
  std::vector<double> q(dim), v(dim);
  for (auto& x : q) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  for (auto _ : state)
    benchmark::DoNotOptimize(strata::kb::mahalanobis_distance(q, v, kb.covariance()));
}
BENCHMARK(BM_MahalanobisDistance)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
