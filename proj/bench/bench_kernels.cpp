// Compares the OpenMP kernels against their serial reference implementations.

#include <benchmark/benchmark.h>

#include "dynmask/core.hpp"
#include "dynmask/reference.hpp"
#include "dynmask/spectral.hpp"
#include "dynmask/tokenizer.hpp"

using namespace dynmask;

namespace {

Mat random_embeddings(int t, int d, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(t, d);
    for (double& x : m.v) x = rng.normal();
    return m;
}

Config bench_config() {
    Config cfg;
    cfg.window = 16;
    return cfg;
}

void bm_msd_parallel(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    Mat emb = random_embeddings(t, 32, 7);
    BoolVec valid(t, 1);
    Config cfg = bench_config();
    for (auto _ : state) {
        SpectralProfile p = msd_sequence(emb, valid, cfg);
        benchmark::DoNotOptimize(p.omega.data());
    }
}

void bm_msd_serial(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    Mat emb = random_embeddings(t, 32, 7);
    BoolVec valid(t, 1);
    Config cfg = bench_config();
    for (auto _ : state) {
        SpectralProfile p = reference::msd_serial(emb, valid, cfg);
        benchmark::DoNotOptimize(p.omega.data());
    }
}

void bm_similarity_parallel(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    Mat emb = random_embeddings(t, 16, 11);
    BoolVec valid(t, 1);
    Config cfg = bench_config();
    SpectralProfile p = msd_sequence(emb, valid, cfg);
    for (auto _ : state) {
        SimilarityMatrix s = similarity_matrix(p, cfg);
        benchmark::DoNotOptimize(s.s.v.data());
    }
}

void bm_similarity_serial(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    Mat emb = random_embeddings(t, 16, 11);
    BoolVec valid(t, 1);
    Config cfg = bench_config();
    SpectralProfile p = msd_sequence(emb, valid, cfg);
    for (auto _ : state) {
        SimilarityMatrix s = reference::similarity_serial(p, cfg);
        benchmark::DoNotOptimize(s.s.v.data());
    }
}

void bm_quantize_parallel(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    Mat features = random_embeddings(t, 16, 13);
    Codebook cb(random_embeddings(256, 16, 17));
    for (auto _ : state) {
        std::vector<int> tokens = quantize(features, cb);
        benchmark::DoNotOptimize(tokens.data());
    }
}

void bm_quantize_serial(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    Mat features = random_embeddings(t, 16, 13);
    Codebook cb(random_embeddings(256, 16, 17));
    for (auto _ : state) {
        std::vector<int> tokens = reference::nearest_tokens(features, cb);
        benchmark::DoNotOptimize(tokens.data());
    }
}

}  // namespace

BENCHMARK(bm_msd_parallel)->Arg(256)->Arg(2048);
BENCHMARK(bm_msd_serial)->Arg(256)->Arg(2048);
BENCHMARK(bm_similarity_parallel)->Arg(256)->Arg(1024);
BENCHMARK(bm_similarity_serial)->Arg(256)->Arg(1024);
BENCHMARK(bm_quantize_parallel)->Arg(1024)->Arg(8192);
BENCHMARK(bm_quantize_serial)->Arg(1024)->Arg(8192);

BENCHMARK_MAIN();
