// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Criterion 9 (live model reference) is informational and never fails the run.

#include "formu/benchmark.hpp"
#include "formu/dissolution.hpp"
#include "formu/errors.hpp"
#include "formu/inverse_design.hpp"
#include "formu/llm_client.hpp"
#include "formu/metrics.hpp"
#include "formu/prompt.hpp"
#include "formu/rag_store.hpp"
#include "formu/text_format.hpp"

#ifdef FORMU_HAVE_CLI
#include "cli.hpp"
#endif

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace formu;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& rel) { return (fs::path(FORMU_FIXTURES_DIR) / rel).string(); }

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

DrugSubstance hctz() { return {"HCTZ", 0.45, 7.5e-10, 1.512}; }

FormulationInput reference_input() {
    return partial_input_from_json(nlohmann::json::parse(slurp(fixture("data/reference_input.json"))))
        .require({feature::d50, feature::aspect_ratio, feature::roundness, feature::solubility, feature::diffusivity,
                  feature::true_density, feature::ssa, feature::vol_eq});
}

std::vector<FormulationRecord> hctz_records() { return load_records_file(fixture("data/hctz_records.json")); }

DissolutionProfile profile(std::vector<double> t, std::vector<double> v) {
    DissolutionProfile p;
    for (std::size_t i = 0; i < t.size(); ++i) p.points.push_back({t[i], v[i]});
    return p;
}

// Collects failure reasons; a criterion passes when none were recorded.
struct Check {
    std::vector<std::string> failures;
    void operator()(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

struct Criterion {
    int id;
    std::string title;
    double limit_s;   // 0 = no runtime limit
    std::function<void(Check&)> body;
};

bool run_criterion(const Criterion& c) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        c.body(check);
    } catch (const std::exception& e) {
        check.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
        check.failures.push_back("runtime " + format_fixed(secs, 2) + " s over the " + format_number(c.limit_s) + " s limit");
    }
    const bool ok = check.failures.empty();
    std::cout << (ok ? "PASS" : "FAIL") << "  " << c.id << "  " << c.title << "  (" << format_fixed(secs, 3) << " s)\n";
    for (const auto& f : check.failures) std::cout << "        - " << f << "\n";
    return ok;
}

// 1. Monodisperse 50 um sphere, sink conditions, Sh = 2: x^2 shrinks linearly,
//    so remaining mass is (1 - t/td)^1.5 with td = x0^2 rho / (24 D Csat).
void analytic_oracle(Check& check) {
    const auto drug = hctz();
    const double x0 = 50e-6;
    const double td = x0 * x0 * drug.true_density_kg_m3() / (24.0 * drug.diffusivity_m2_s * drug.c_sat_mg_ml);
    check(std::abs(td - 466.6666666666667) < 1e-9, "closed-form dissolution time " + format_number(td) + " s");

    DissolutionConditions sink;
    sink.sink_override = true;
    SolverOptions pinned;
    pinned.pinned_sherwood = 2.0;
    auto grid = default_output_grid();
    for (int i = 1; i <= 40; ++i) grid.push_back(i * 15.0 / 3600.0);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    const auto trace = simulate_dissolution_traced(drug, ParticleMorphology::sphere(), SizeDistribution::monodisperse(50.0),
                                                   sink, grid, pinned);
    check(std::abs(trace.complete_time_s / td - 1.0) < 0.01,
          "numerical dissolution time " + format_number(trace.complete_time_s) + " s");
    for (const auto& p : trace.profile.points) {
        const double t = p.time_hr * 3600.0;
        const double expected = t >= td ? 100.0 : 100.0 * (1.0 - std::pow(1.0 - t / td, 1.5));
        check(std::abs(p.released_pct - expected) <= 0.5,
              "t = " + format_number(p.time_hr) + " hr: " + format_number(p.released_pct) + " vs " + format_number(expected));
    }
}

// 2. Hand-computed metric values, identity cases, degenerate reference.
void metric_exactness(Check& check) {
    const auto pair = align_profiles(profile({0, 1, 2}, {0, 50, 100}), profile({0, 1, 2}, {0, 40, 100}));
    const double eps = std::numeric_limits<double>::epsilon();
    check(std::abs(mse(pair) - 100.0 / 3.0) <= 4 * eps * 100.0 / 3.0, "mse " + format_number(mse(pair)));
    check(std::abs(r_squared(pair) - 0.98) <= 4 * eps, "r2 " + format_number(r_squared(pair)));

    const auto same = align_profiles(profile({0, 0.5, 1, 6}, {0, 30, 80, 100}), profile({0, 0.5, 1, 6}, {0, 30, 80, 100}));
    check(mse(same) == 0.0, "identity mse");
    check(r_squared(same) == 1.0, "identity r2");

    bool threw = false;
    try {
        r_squared(align_profiles(profile({0, 1, 2}, {5, 5, 5}), profile({0, 1, 2}, {0, 50, 100})));
    } catch (const DegenerateReferenceError&) {
        threw = true;
    }
    check(threw, "constant reference did not raise the degenerate-reference error");
}

// 3. Larger particles release slower at every grid time.
void size_ordering(Check& check) {
    std::vector<DissolutionProfile> runs;
    for (double d50 : {45.0, 97.5, 200.0}) {
        runs.push_back(simulate_dissolution(hctz(), ParticleMorphology::sphere(), psd_from_lognormal(d50, 1.5, 50),
                                            DissolutionConditions{}, default_output_grid()));
    }
    for (std::size_t i = 1; i < runs[0].size(); ++i) {
        const double a = runs[0].points[i].released_pct;
        const double b = runs[1].points[i].released_pct;
        const double c = runs[2].points[i].released_pct;
        // Once both sides have fully dissolved they tie at 100%.
        const bool ordered = (a > b || (a == 100.0 && b == 100.0)) && (b > c || (b == 100.0 && c == 100.0));
        check(ordered, "t = " + format_number(runs[0].points[i].time_hr) + " hr: " + format_number(a) + ", " +
                           format_number(b) + ", " + format_number(c));
    }
}

std::vector<std::string> lines(std::string_view text) {
    std::vector<std::string> out;
    for (auto part : split(text, '\n')) out.emplace_back(part);
    return out;
}

bool differs_by_cot_line(const std::string& base, const std::string& cot) {
    auto a = lines(base);
    auto b = lines(cot);
    if (b.size() != a.size() + 1) return false;
    const auto it = std::find(b.begin(), b.end(), std::string(kChainOfThoughtLine));
    if (it == b.end()) return false;
    b.erase(it);
    return a == b;
}

// 4. Prompt goldens.
void prompt_goldens(Check& check) {
    const auto in = reference_input();
    const auto records = hctz_records();
    const auto zs = build_prompt(PromptStrategy::zs, in);
    check(zs.rendered == slurp(fixture("prompts/zs_reference.txt")), "ZS rendering differs from the golden file");
    check(zs.rendered.find("Final dissolution \xE2\x89\xA5" "85% within 60 min") != std::string::npos,
          "ZS prompt lacks the dissolution constraint");
    check(zs.rendered.find(kNoExamples) != std::string::npos, "ZS prompt lacks the no-examples marker");

    const auto fs_prompt = build_prompt(PromptStrategy::fs, in, records);
    check(fs_prompt.rendered == slurp(fixture("prompts/fs_reference.txt")), "FS rendering differs from the golden file");
    check(fs_prompt.rendered.find(slurp(fixture("prompts/fs_example_block_1.txt"))) != std::string::npos,
          "FS prompt lacks the first example block");
    for (std::size_t i = 0; i < records.size(); ++i) {
        check(fs_prompt.rendered.find(render_input_block(records[i].features)) != std::string::npos &&
                  fs_prompt.rendered.find(profile_to_table_json(records[i].profile)) != std::string::npos,
              "FS prompt lacks example " + std::to_string(i + 1));
    }
    check(differs_by_cot_line(zs.rendered, build_prompt(PromptStrategy::zs_cot, in).rendered),
          "ZS_CoT is not ZS plus one line");
    check(differs_by_cot_line(fs_prompt.rendered, build_prompt(PromptStrategy::fs_cot, in, records).rendered),
          "FS_CoT is not FS plus one line");
}

// 5. Output-format parsing.
void parser_fidelity(Check& check) {
    const auto text = slurp(fixture("data/reference_output.json"));
    const auto expected = profile({0, 0.25, 0.5, 0.75, 1, 2, 3, 4, 5, 6}, {0, 85, 87, 88, 89, 89, 89, 88, 87, 87});
    check(parse_profile_response(text).profile == expected, "plain table");
    check(parse_profile_response("```json\n" + text + "\n```").profile == expected, "fenced table");
    check(parse_profile_response("Based on the constraints, the profile is:\n" + text + "\nThis meets the target.")
                  .profile == expected,
          "prose-wrapped table");
    bool threw = false;
    try {
        parse_profile_response(R"j({"columns": ["Time (hr)", "Drug Released (%)"], "data": []})j");
    } catch (const EmptyProfileError&) {
        threw = true;
    }
    check(threw, "empty data did not raise the empty-profile error");
}

// 6. Lognormal round trip from a distant start.
void inverse_round_trip(Check& check) {
    DesignSpec spec;
    spec.drug = hctz();
    spec.target = simulate_dissolution(spec.drug, spec.morph, psd_from_lognormal(120.0, 1.6, 50), spec.conditions,
                                       default_output_grid());
    spec.initial_d50_um = 300.0;
    spec.initial_sigma = 1.2;
    spec.regularization_weight = 0.0;
    const auto r = design_psd(spec);
    check(r.residual_mse < 1.0, "residual " + format_number(r.residual_mse));
    check(r.d50_um && std::abs(*r.d50_um - 120.0) / 120.0 < 0.15,
          "recovered d50 " + (r.d50_um ? format_number(*r.d50_um) : std::string("none")));
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
        check(r.objective_history[i] <= r.objective_history[i - 1], "objective rose at iteration " + std::to_string(i));
    }
}

// 7. Retrieval order and determinism.
void retrieval_determinism(Check& check) {
    const auto records = hctz_records();
    // Partial query: only d50 is given, so only d50 carries weight.
    FormulationInput q = records[0].features;
    q.d50_um = 50.0;
    std::array<bool, kFeatureCount> mask{};
    mask[feature::d50] = true;
    const auto w = adapt_weights(records).restricted_to(mask);
    const auto hits = retrieve(records, q, 3, w);
    std::vector<double> order;
    for (const auto& h : hits) order.push_back(h.record.features.d50_um);
    check(order == std::vector<double>{45.0, 97.5, 200.0}, "order for d50 = 50");

    std::mt19937_64 rng(2024);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * std::uniform_real_distribution<double>(0, 1)(rng); };
    std::vector<FormulationRecord> store;
    for (int i = 0; i < 100; ++i) {
        FormulationRecord r;
        r.id = "syn-" + std::to_string(1000 + i);
        r.features = {uni(5, 300), 1.0, uni(0.5, 1.0), uni(0.05, 5), uni(2e-10, 2e-9), uni(1.1, 2.0), uni(0.05, 3), uni(1, 20)};
        const double at1 = 100.0 - r.features.d50_um / 3.5;
        r.profile = profile({0, 0.5, 1, 2}, {0, at1 / 2, at1, std::min(100.0, at1 + 5)});
        r.provenance = Provenance::simulated;
        store.push_back(r);
    }
    const auto weights = adapt_weights(store);
    std::size_t misses = 0;
    for (const auto& r : store) {
        if (retrieve(store, r.features, 1, weights)[0].record.id != r.id) ++misses;
    }
    check(misses == 0, std::to_string(misses) + " records not ranked first for their own features");

    for (const auto& r : store) {
        const auto a = retrieve(store, r.features, 10, weights);
        const auto b = retrieve(store, r.features, 10, adapt_weights(store));
        bool same = a.size() == b.size();
        for (std::size_t k = 0; same && k < a.size(); ++k) same = a[k].record.id == b[k].record.id && a[k].score == b[k].score;
        if (!same) {
            check(false, "ranking changed between runs for " + r.id);
            break;
        }
    }
}

#ifdef FORMU_HAVE_CLI
int run_cli(std::vector<std::string> args, const fs::path& root, const std::string& run_id) {
    args.insert(args.begin(), {"--output-dir", root.string(), "--run-id", run_id});
    std::ostringstream out, err;
    return cli::run(args, out, err);
}
#endif

// 8. Offline closure: the mock backend answers with the simulator, so predict
//    equals simulate and every strategy scores perfectly on simulated data.
void offline_closure(Check& check) {
    std::mt19937_64 rng(8);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * std::uniform_real_distribution<double>(0, 1)(rng); };
    std::vector<FormulationRecord> dataset;
    for (int i = 0; i < 6; ++i) {
        FormulationRecord r;
        r.id = "sim-" + std::to_string(i);
        r.features = {std::exp(uni(std::log(5.0), std::log(300.0))), 1.0, 1.0, uni(0.05, 5), uni(2e-10, 2e-9),
                      uni(1.1, 2.0), uni(0.05, 3), uni(1, 20)};
        r.profile = simulate_dissolution(r.features.drug(), r.features.morphology(),
                                         psd_from_lognormal(r.features.d50_um, 1.5, 50), DissolutionConditions{},
                                         default_output_grid());
        r.provenance = Provenance::simulated;
        dataset.push_back(r);
    }

#ifdef FORMU_HAVE_CLI
    const auto root = fs::temp_directory_path() / ("formu_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const auto input = fixture("data/reference_input.json");
    check(run_cli({"simulate", "--input", input}, root, "a") == 0, "simulate failed");
    check(run_cli({"predict", "--strategy", "zs", "--backend", "mock", "--input", input}, root, "a") == 0, "predict failed");
    const auto pair = align_profiles(load_profile_file((root / "simulate-a/profile.csv").string()),
                                     load_profile_file((root / "predict-a/profile.csv").string()));
    check(mse(pair) == 0.0, "predict vs simulate mse " + format_number(mse(pair)));
    check(r_squared(pair) == 1.0, "predict vs simulate r2 " + format_number(r_squared(pair)));

    nlohmann::json data = nlohmann::json::array();
    for (const auto& r : dataset) data.push_back(to_json(r));
    std::ofstream(root / "dataset.json") << data.dump();
    check(run_cli({"bench", "--backend", "mock", "--dataset", (root / "dataset.json").string()}, root, "a") == 0,
          "bench failed");
    const auto report = nlohmann::json::parse(slurp((root / "bench-a/report.json").string()));
    check(report["rows"].size() == 5, "bench report rows");
    for (const auto& row : report["rows"]) {
        const auto name = row["strategy"].get<std::string>();
        check(row["evaluable"] == true, name + " unevaluable");
        if (row["evaluable"] != true) continue;
        check(row["mse"].get<double>() <= 1e-6, name + " mse " + format_number(row["mse"].get<double>()));
        check(row["r2"].get<double>() >= 0.999999, name + " r2 " + format_number(row["r2"].get<double>()));
    }
    fs::remove_all(root);
#else
    LLMClient client({}, BackendKind::mock);
    const auto in = reference_input();
    const auto predicted = parse_profile_response(client.complete(build_prompt(PromptStrategy::zs, in)).text).profile;
    const auto simulated = simulate_dissolution(in.drug(), in.morphology(), psd_from_lognormal(in.d50_um, 1.5, 50),
                                                DissolutionConditions{}, default_output_grid());
    const auto pair = align_profiles(simulated, predicted);
    check(mse(pair) == 0.0 && r_squared(pair) == 1.0, "predict vs simulate");
    const auto report = run_benchmark(dataset, kAllStrategies, client);
    for (const auto& row : report.rows) {
        check(row.evaluable && row.mse <= 1e-6 && row.r2 >= 0.999999, std::string(to_string(row.strategy)));
    }
#endif
}

// 9. Live reference: opt-in, printed next to the reference outcome, never fails.
void live_reference() {
    std::cout << "INFO  9  live model reference (informational)\n";
    const char* opt_in = std::getenv("FORMU_ACCEPTANCE_LIVE");
    const char* key = std::getenv("FORMU_API_KEY");
    std::cout << "        reference outcome:";
    for (const auto& r : kReferenceOutcome) {
        std::cout << "  " << to_string(r.strategy) << " " << format_fixed(r.mse, 2) << "/" << format_fixed(r.r2, 2);
    }
    std::cout << "\n";
    if (!opt_in || std::string(opt_in) != "1" || !key) {
        std::cout << "        skipped: set FORMU_ACCEPTANCE_LIVE=1 and FORMU_API_KEY to run against a live endpoint\n";
        return;
    }
    try {
        LLMClient client({}, BackendKind::live);
        const auto report = run_benchmark(hctz_records(), kAllStrategies, client);
        std::istringstream table(report.to_text());
        for (std::string line; std::getline(table, line);) std::cout << "        " << line << "\n";
    } catch (const std::exception& e) {
        std::cout << "        live run failed: " << e.what() << "\n";
    }
}

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "analytic ODE oracle (monodisperse 50 um, sink, Sh = 2)", 1.0, analytic_oracle},
        {2, "metric exactness", 0.0, metric_exactness},
        {3, "size ordering 45 > 97.5 > 200 um", 5.0, size_ordering},
        {4, "prompt goldens", 0.0, prompt_goldens},
        {5, "parser fidelity", 0.0, parser_fidelity},
        {6, "inverse round trip lognormal(120 um, 1.6)", 60.0, inverse_round_trip},
        {7, "retrieval determinism", 0.0, retrieval_determinism},
        {8, "offline end-to-end closure", 0.0, offline_closure},
    };
    int failed = 0;
    for (const auto& c : criteria) failed += run_criterion(c) ? 0 : 1;
    live_reference();
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criterion(s) failed") << "\n";
    return failed == 0 ? 0 : 1;
}
