#include "formu/dissolution.hpp"
#include "formu/inverse_design.hpp"
#include "formu/llm_client.hpp"
#include "formu/prompt.hpp"
#include "formu/rag_store.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace formu;

namespace {

DrugSubstance hctz() { return {"HCTZ", 0.45, 7.5e-10, 1.512}; }

std::vector<FormulationRecord> synthetic_store(std::size_t n) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<FormulationRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        FormulationRecord r;
        r.id = "syn-" + std::to_string(i);
        r.features = {5 + 295 * u(rng), 1.0, 0.5 + 0.5 * u(rng), 0.05 + 5 * u(rng), 2e-10 + 1.8e-9 * u(rng),
                      1.1 + 0.9 * u(rng), 0.05 + 3 * u(rng), 1 + 19 * u(rng)};
        const double at1 = 100.0 - r.features.d50_um / 3.5;
        r.profile.points = {{0, 0}, {0.5, at1 / 2}, {1, at1}, {2, std::min(100.0, at1 + 5)}};
        r.provenance = Provenance::simulated;
        out.push_back(r);
    }
    return out;
}

} // namespace

static void BM_Simulate(benchmark::State& state) {
    const auto psd = psd_from_lognormal(97.5, 1.5, static_cast<std::size_t>(state.range(0)));
    const auto grid = default_output_grid();
    for (auto _ : state) {
        benchmark::DoNotOptimize(simulate_dissolution(hctz(), ParticleMorphology::sphere(), psd, {}, grid));
    }
}
BENCHMARK(BM_Simulate)->Arg(10)->Arg(50)->Arg(200)->Unit(benchmark::kMicrosecond);

static void BM_Retrieve(benchmark::State& state) {
    const auto store = synthetic_store(static_cast<std::size_t>(state.range(0)));
    const auto weights = adapt_weights(store);
    const auto query = store.front().features;
    for (auto _ : state) benchmark::DoNotOptimize(retrieve(store, query, 3, weights));
}
BENCHMARK(BM_Retrieve)->Arg(100)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

static void BM_MockPredict(benchmark::State& state) {
    FormulationInput in{97.5, 1.0, 1.0, 0.45, 7.5e-10, 1.512, 1.07, 1.85};
    LLMClient client({}, BackendKind::mock);
    const auto prompt = build_prompt(PromptStrategy::zs, in);
    for (auto _ : state) benchmark::DoNotOptimize(parse_profile_response(client.complete(prompt).text));
}
BENCHMARK(BM_MockPredict)->Unit(benchmark::kMicrosecond);

static void BM_DesignRoundTrip(benchmark::State& state) {
    DesignSpec spec;
    spec.drug = hctz();
    spec.target = simulate_dissolution(spec.drug, spec.morph, psd_from_lognormal(120.0, 1.6, 50), spec.conditions,
                                       default_output_grid());
    spec.initial_d50_um = 300.0;
    spec.initial_sigma = 1.2;
    spec.regularization_weight = 0.0;
    spec.starts = 1;
    for (auto _ : state) benchmark::DoNotOptimize(design_psd(spec));
}
BENCHMARK(BM_DesignRoundTrip)->Unit(benchmark::kMillisecond)->Iterations(1);

BENCHMARK_MAIN();
