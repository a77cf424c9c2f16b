#include <benchmark/benchmark.h>

#include "hocr/lite_decoder.hpp"
#include "hocr/rng.hpp"

using namespace hocr;

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (auto& x : m.data()) x = rng.normal();
    return m;
}

DecoderConfig config_for(const benchmark::State& state) {
    DecoderConfig c;
    c.d = static_cast<std::size_t>(state.range(0));
    c.share_layers = state.range(1) != 0;
    c.use_ffn = !c.share_layers;
    c.ffn_inner = 4 * c.d;
    return c;
}

}  // namespace

// One forward pass over a T=25 target prefix against 64 encoder positions.
static void BM_DecoderForward(benchmark::State& state) {
    const auto c = config_for(state);
    const auto w = DecoderWeights::random(c, 1);
    const SequenceState s{normal_matrix(25, c.d, 2), normal_matrix(64, c.d, 3)};
    for (auto _ : state) benchmark::DoNotOptimize(decoder_forward(s, w, c));
    state.counters["params"] = static_cast<double>(w.parameter_count());
}
BENCHMARK(BM_DecoderForward)
    ->ArgNames({"d", "shared"})
    ->Args({128, 0})
    ->Args({128, 1})
    ->Args({512, 0})
    ->Args({512, 1})
    ->Unit(benchmark::kMillisecond);

static void BM_AttentionWeights(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto q = normal_matrix(n, 64, 4), k = normal_matrix(n, 64, 5);
    for (auto _ : state) benchmark::DoNotOptimize(attention_weights(q, k));
}
BENCHMARK(BM_AttentionWeights)->Arg(16)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
