#include "bgps/core.hpp"
#include "bgps/rng.hpp"
#include "bgps/search.hpp"
#include "bgps/synthbench.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace bgps;

namespace {

std::vector<double> random_logs(std::size_t n) {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> d(-700.0, 0.0);
    std::vector<double> v(n);
    for (auto & x : v) {
        x = d(gen);
    }
    return v;
}

void BM_LogMeanExp(benchmark::State & state) {
    const auto v = random_logs(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(log_mean_exp(v));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LogMeanExp)->Arg(10)->Arg(100)->Arg(1000);

void BM_SampleCandidates(benchmark::State & state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto logs = random_logs(n);
    std::vector<Beam> pool(n);
    for (std::size_t i = 0; i < n; ++i) {
        pool[i].seq.token_ids = {static_cast<TokenId>(i)};
        pool[i].lm_logprob = logs[i] / 100.0;
    }
    std::uint64_t seed = 0;
    for (auto _ : state) {
        CounterRng rng(seed++, 0);
        benchmark::DoNotOptimize(sample_candidate_indices(pool, 100, 10.0, false, rng));
    }
}
BENCHMARK(BM_SampleCandidates)->Arg(200)->Arg(2000);

void BM_SearchBiased4(benchmark::State & state) {
    const auto f = synth::make_fixture("biased4");
    SearchConfig cfg = f.search;
    cfg.deterministic_mode = false;
    cfg.beam_size = static_cast<int>(state.range(0));
    std::uint64_t seed = 0;
    for (auto _ : state) {
        cfg.seed = seed++;
        benchmark::DoNotOptimize(run_search(cfg, f.attribute, f.lm, f.scorer, {}));
    }
}
BENCHMARK(BM_SearchBiased4)->Arg(3)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
