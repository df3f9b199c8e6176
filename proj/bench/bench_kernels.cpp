// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Serial vs OpenMP cosine scans and the full exact top-K retrieval.

#include <benchmark/benchmark.h>

#include <vector>

#include "dbchat/index.hpp"
#include "dbchat/kernels.hpp"
#include "dbchat/random.hpp"
#include "dbchat/retrieval.hpp"

namespace {

using namespace dbchat;

struct Corpus {
  std::vector<double> rows;
  std::vector<double> norms;
  std::vector<double> query;
  std::size_t dim = 0;
};

Corpus make_corpus(std::size_t n, std::size_t dim) {
  Rng rng(17);
  Corpus c;
  c.dim = dim;
  c.rows.resize(n * dim);
  for (auto& x : c.rows) x = rng.gaussian();
  c.norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.norms[i] = kernels::norm({c.rows.data() + i * dim, dim});
  }
  c.query.resize(dim);
  for (auto& x : c.query) x = rng.gaussian();
  return c;
}

template <bool Parallel>
void BM_CosineScan(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto dim = static_cast<std::size_t>(state.range(1));
  const auto c = make_corpus(n, dim);
  const kernels::MatrixView m{c.rows, dim};
  const double qn = kernels::norm(c.query);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::cosine_scores_parallel(m, c.norms, c.query, qn, out);
    } else {
      kernels::cosine_scores_serial(m, c.norms, c.query, qn, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
  state.counters["threads"] = Parallel ? kernels::max_threads() : 1;
}

void BM_CosineSerial(benchmark::State& s) { BM_CosineScan<false>(s); }
void BM_CosineParallel(benchmark::State& s) { BM_CosineScan<true>(s); }

void scan_args(benchmark::internal::Benchmark* b) {
  for (const std::int64_t n : {1000, 10000, 100000}) b->Args({n, 64});
  b->Args({10000, 1024});
}

BENCHMARK(BM_CosineSerial)->Apply(scan_args)->UseRealTime();
BENCHMARK(BM_CosineParallel)->Apply(scan_args)->UseRealTime();

template <retrieval::Execution Exec>
void BM_Retrieve(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 64;
  const auto c = make_corpus(n, dim);
  index::KnowledgeBase kb("bench", dim);
  std::vector<ingest::Chunk> chunks(n);
  std::vector<encoder::Vector> vecs(n);
  for (std::size_t i = 0; i < n; ++i) {
    chunks[i] = {"doc", i, "chunk " + std::to_string(i), {0, 1}};
    vecs[i].assign(c.rows.begin() + static_cast<std::ptrdiff_t>(i * dim),
                   c.rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  }
  kb.index_embedded(chunks, vecs);
  for (auto _ : state) {
    auto hits = retrieval::embedding_retrieve_vector(kb, c.query, 8, Exec);
    benchmark::DoNotOptimize(hits.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

BENCHMARK(BM_Retrieve<retrieval::Execution::serial>)->Arg(10000)->Arg(100000)->UseRealTime();
BENCHMARK(BM_Retrieve<retrieval::Execution::parallel>)->Arg(10000)->Arg(100000)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
