#include <benchmark/benchmark.h>

#include <vector>

#include "hocr/bitcode.hpp"
#include "hocr/codebook.hpp"
#include "hocr/hamming_head.hpp"
#include "hocr/rng.hpp"

using namespace hocr;

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (auto& x : m.data()) x = rng.normal();
    return m;
}

}  // namespace

static void BM_HammingDistance(benchmark::State& state) {
    const auto width = static_cast<std::size_t>(state.range(0));
    const auto book = random_codebook(2, width, 1);
    for (auto _ : state) benchmark::DoNotOptimize(hamming_distance(book.code(0), book.code(1)));
}
BENCHMARK(BM_HammingDistance)->Arg(64)->Arg(128)->Arg(512);

// Exhaustive nearest-code scan over L classes.
static void BM_NearestCode(benchmark::State& state) {
    const auto classes = static_cast<std::size_t>(state.range(0));
    const auto width = static_cast<std::size_t>(state.range(1));
    const auto book = random_codebook(classes, width, 2);
    const auto queries = random_codebook(64, width, 3);
    SearchOptions opts;
    opts.threads = static_cast<unsigned>(state.range(2));
    std::size_t q = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(nearest_code(queries.code(q), book, opts));
        q = (q + 1) % queries.size();
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * classes));
}
BENCHMARK(BM_NearestCode)
    ->Args({100, 128, 1})
    ->Args({20948, 128, 1})
    ->Args({20948, 512, 1})
    ->Args({20948, 512, 4})
    ->Unit(benchmark::kMicrosecond);

// Full head: d x d' projection, sign, then the scan.
static void BM_Decode(benchmark::State& state) {
    const std::size_t d = 512, width = 512;
    const auto classes = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    const HammingClassifier clf(normal_matrix(d, width, rng), 1.0, random_codebook(classes, width, 5));
    std::vector<double> h(d);
    for (auto& x : h) x = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(decode(clf, h));
}
BENCHMARK(BM_Decode)->Arg(100)->Arg(20948)->Unit(benchmark::kMicrosecond);

static void BM_SoftmaxPredict(benchmark::State& state) {
    const std::size_t d = 512;
    const auto classes = static_cast<std::size_t>(state.range(0));
    Rng rng(6);
    const SoftmaxClassifier clf(normal_matrix(d, classes, rng), std::vector<double>(classes, 0.0));
    std::vector<double> h(d);
    for (auto& x : h) x = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(softmax_predict(clf, h));
}
BENCHMARK(BM_SoftmaxPredict)->Arg(100)->Arg(20948)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
