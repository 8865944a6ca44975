#include <benchmark/benchmark.h>

#include <random>

#include "faceval/bandit.hpp"
#include "faceval/evaluator.hpp"
#include "faceval/metrics.hpp"
#include "faceval/optimizer.hpp"

using namespace faceval;

namespace {

std::vector<double> noisy(std::size_t n, std::uint64_t seed, int levels = 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0, 1);
    std::vector<double> v(n);
    for (auto& x : v) x = levels ? std::floor(levels * std::abs(d(rng))) : d(rng);
    return v;
}

void BM_Pearson(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto x = noisy(n, 1), y = noisy(n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::pearson(x, y));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Pearson)->Range(16, 1 << 14)->Complexity();

void BM_Spearman(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto x = noisy(n, 1, 4), y = noisy(n, 2, 4);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::spearman(x, y));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Spearman)->Range(16, 1 << 14)->Complexity();

void BM_KrippendorffOrdinal(benchmark::State& state) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> v(0, 4), miss(0, 4);
    metrics::RatingMatrix m(static_cast<std::size_t>(state.range(0)));
    for (auto& row : m)
        for (int r = 0; r < 3; ++r) row.push_back(miss(rng) == 0 ? std::nullopt : std::optional<double>(v(rng)));
    for (auto _ : state) benchmark::DoNotOptimize(metrics::krippendorff_alpha_ordinal(m));
}
BENCHMARK(BM_KrippendorffOrdinal)->Range(16, 4096);

void BM_WeightedScore(benchmark::State& state) {
    std::vector<int> samples(static_cast<std::size_t>(state.range(0)));
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = static_cast<int>(i % 5);
    for (auto _ : state) benchmark::DoNotOptimize(weighted_score(samples));
}
BENCHMARK(BM_WeightedScore)->Arg(5)->Arg(64);

void BM_RunUcb(benchmark::State& state) {
    const auto arms = static_cast<std::size_t>(state.range(0));
    BanditOptions o;
    o.workers = 1;
    for (auto _ : state) {
        auto run = run_ucb(
            arms, 64, [&](std::size_t arm, std::span<const std::size_t>) { return static_cast<double>(arm) / arms; }, o);
        benchmark::DoNotOptimize(run);
    }
}
BENCHMARK(BM_RunUcb)->Arg(16)->Arg(64);

void BM_GreedySelect(benchmark::State& state) {
    const auto members = static_cast<std::size_t>(state.range(0));
    const auto labels = noisy(200, 9, 3);
    std::vector<std::vector<double>> scores;
    for (std::size_t i = 0; i < members; ++i) {
        auto row = noisy(200, 100 + i);
        for (std::size_t u = 0; u < row.size(); ++u) row[u] += labels[u];
        scores.push_back(row);
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(greedy_select(scores, labels, 16, metrics::CorrelationKind::Pearson));
}
BENCHMARK(BM_GreedySelect)->Arg(32)->Arg(128);

}  // namespace
BENCHMARK_MAIN();
