#include "cli.hpp"

#include "formu/benchmark.hpp"
#include "formu/dissolution.hpp"
#include "formu/errors.hpp"
#include "formu/formulation.hpp"
#include "formu/inverse_design.hpp"
#include "formu/llm_client.hpp"
#include "formu/metrics.hpp"
#include "formu/prompt.hpp"
#include "formu/rag_store.hpp"
#include "formu/svg.hpp"
#include "formu/text_format.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace formu::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kUnitsFooter =
    "Units: particle sizes (d50, vol-eq size) in µm, solubility in mg/mL, diffusivity in m²/s,\n"
    "true density in g/mL, specific surface area (SSA) in m²/g, time in hr, released in %.";

// ---------------------------------------------------------------- config

struct AppConfig {
    LLMConfig llm;
    DissolutionConditions conditions;
    std::string store_path;
    std::string fixtures_path;
    std::string output_dir = "formu_out";
    std::uint64_t seed = 0;
};

template <class T>
void read_key(const json& j, const char* key, T& into) {
    if (!j.contains(key)) return;
    try {
        into = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

DissolutionConditions conditions_from_json(const json& j, DissolutionConditions c) {
    if (!j.is_object()) throw ConfigError("config 'conditions' must be an object");
    read_key(j, "medium_volume_ml", c.medium_volume_ml);
    read_key(j, "temperature_c", c.temperature_c);
    read_key(j, "ph", c.ph);
    read_key(j, "paddle_rpm", c.paddle_rpm);
    read_key(j, "dose_mg", c.dose_mg);
    read_key(j, "fluid_density_kg_m3", c.fluid_density_kg_m3);
    read_key(j, "fluid_viscosity_pa_s", c.fluid_viscosity_pa_s);
    read_key(j, "velocity_factor", c.velocity_factor);
    read_key(j, "sink_override", c.sink_override);
    return c;
}

AppConfig load_config(const std::string& path) {
    AppConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    if (j.contains("llm")) {
        try {
            cfg.llm = LLMConfig::from_json(j.at("llm"));
        } catch (const json::exception& e) {
            throw ConfigError("config 'llm' section: " + std::string(e.what()));
        }
    }
    if (j.contains("conditions")) cfg.conditions = conditions_from_json(j.at("conditions"), cfg.conditions);
    read_key(j, "store_path", cfg.store_path);
    read_key(j, "fixtures_path", cfg.fixtures_path);
    read_key(j, "output_dir", cfg.output_dir);
    read_key(j, "seed", cfg.seed);
    return cfg;
}

// ---------------------------------------------------------------- shared state

struct GlobalFlags {
    std::string config_path;
    std::optional<std::string> output_dir;
    std::optional<std::string> run_id;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> store_path;
};

struct Session {
    AppConfig cfg;
    std::string run_id;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;

    fs::path store_path() const {
        return cfg.store_path.empty() ? fs::path(cfg.output_dir) / "store.jsonl" : fs::path(cfg.store_path);
    }

    // <output_dir>/<command>-<run id>; a fresh suffix avoids clobbering an
    // earlier run that happened in the same second.
    fs::path make_run_dir(const std::string& command, bool explicit_id) const {
        fs::path dir = fs::path(cfg.output_dir) / (command + "-" + run_id);
        if (!explicit_id) {
            for (int n = 2; fs::exists(dir); ++n) {
                dir = fs::path(cfg.output_dir) / (command + "-" + run_id + "-" + std::to_string(n));
            }
        }
        fs::create_directories(dir);
        return dir;
    }
};

std::string timestamp_run_id() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// ---------------------------------------------------------------- flag groups

struct InputFlags {
    std::string file;
    std::array<std::optional<double>, kFeatureCount> values;

    void add_to(CLI::App& app) {
        app.add_option("--input", file, "FormulationInput JSON (canonical or verbose keys, optionally under \"Input\")");
        app.add_option("--d50", values[feature::d50], "D50 particle size [µm]");
        app.add_option("--aspect-ratio", values[feature::aspect_ratio], "aspect ratio [-]");
        app.add_option("--roundness", values[feature::roundness], "roundness [-]");
        app.add_option("--solubility", values[feature::solubility], "drug solubility [mg/mL]");
        app.add_option("--diffusivity", values[feature::diffusivity], "diffusion coefficient [m²/s]");
        app.add_option("--density", values[feature::true_density], "true density [g/mL]");
        app.add_option("--ssa", values[feature::ssa], "specific surface area [m²/g]");
        app.add_option("--vol-eq", values[feature::vol_eq], "volume-equivalent size [µm]");
    }

    PartialInput partial() const {
        PartialInput p;
        if (!file.empty()) {
            json j;
            try {
                j = json::parse(read_file(file));
            } catch (const json::parse_error& e) {
                throw ValidationError("input file is not valid JSON: " + std::string(e.what()));
            }
            p = partial_input_from_json(j);
        }
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            if (values[i]) p.values[i] = values[i];
        }
        return p;
    }
};

struct ConditionFlags {
    std::optional<double> rpm, volume, dose, velocity_factor, temperature, ph;
    bool sink = false;

    void add_to(CLI::App& app) {
        app.add_option("--rpm", rpm, "paddle speed [rpm]");
        app.add_option("--volume", volume, "medium volume [mL]");
        app.add_option("--dose", dose, "dose [mg]");
        app.add_option("--velocity-factor", velocity_factor, "particle slip velocity / paddle tip speed, in (0, 1]");
        app.add_option("--temperature", temperature, "medium temperature [°C]");
        app.add_option("--ph", ph, "medium pH");
        app.add_flag("--sink", sink, "hold bulk concentration at zero");
    }

    DissolutionConditions apply(DissolutionConditions c) const {
        if (rpm) c.paddle_rpm = *rpm;
        if (volume) c.medium_volume_ml = *volume;
        if (dose) c.dose_mg = *dose;
        if (velocity_factor) c.velocity_factor = *velocity_factor;
        if (temperature) c.temperature_c = *temperature;
        if (ph) c.ph = *ph;
        if (sink) c.sink_override = true;
        c.validate();
        return c;
    }
};

struct PsdFlags {
    double geo_sigma = 1.5;
    std::size_t bins = 50;
    std::string grid;

    void add_to(CLI::App& app) {
        app.add_option("--geo-sigma", geo_sigma, "geometric standard deviation of the log-normal PSD around D50")
            ->capture_default_str();
        app.add_option("--bins", bins, "size bins of the simulated PSD")->capture_default_str();
        app.add_option("--grid", grid, "comma-separated output times [hr], starting at 0 (default 0,0.25,0.5,0.75,1,2,3,4,5,6)");
    }

    std::vector<double> grid_hr() const {
        if (grid.empty()) return default_output_grid();
        std::vector<double> g;
        for (auto part : split(grid, ',')) g.push_back(parse_number(trim(part)));
        if (g.empty() || g.front() != 0.0) throw ValidationError("--grid must start at 0");
        for (std::size_t i = 1; i < g.size(); ++i) {
            if (!(g[i] > g[i - 1])) throw ValidationError("--grid times must strictly increase");
        }
        return g;
    }
};

struct BackendFlags {
    std::string backend = "mock";
    std::string replay;

    void add_to(CLI::App& app) {
        app.add_option("--backend", backend, "live | mock | replay")->capture_default_str();
        app.add_option("--replay", replay, "transcript JSONL used by the replay backend");
    }
};

const std::initializer_list<std::size_t> kSimulationFields{feature::d50, feature::solubility, feature::diffusivity,
                                                           feature::true_density};

// Fills SSA and volume-equivalent size from the simulated PSD when absent.
FormulationInput complete_input(const PartialInput& partial, const PsdFlags& psd) {
    FormulationInput input = partial.require(kSimulationFields);
    if (!partial.has(feature::aspect_ratio)) input.aspect_ratio = 1.0;
    if (!partial.has(feature::roundness)) input.roundness = 1.0;
    if (!partial.has(feature::ssa) || !partial.has(feature::vol_eq)) {
        const auto m = derived_metrics(psd_from_lognormal(input.d50_um, psd.geo_sigma, psd.bins),
                                       input.morphology(), input.drug());
        if (!partial.has(feature::ssa)) input.ssa_m2_g = m.ssa_m2_g;
        if (!partial.has(feature::vol_eq)) input.vol_eq_um = m.vol_eq_size_um;
    }
    input.validate();
    return input;
}

DissolutionProfile simulate_input(const FormulationInput& input, const DissolutionConditions& conditions,
                                  const PsdFlags& psd, const std::vector<double>& grid) {
    return simulate_dissolution(input.drug(), input.morphology(),
                                psd_from_lognormal(input.d50_um, psd.geo_sigma, psd.bins), conditions, grid);
}

struct ClientBundle {
    std::unique_ptr<LLMClient> client;
    std::shared_ptr<TranscriptRecorder> recorder;
};

ClientBundle make_client(const Session& s, const BackendFlags& flags, const DissolutionConditions& conditions,
                         const PsdFlags& psd, const fs::path& transcript_path) {
    const auto kind = backend_from_string(flags.backend);
    ClientHooks hooks;
    hooks.recorder = std::make_shared<TranscriptRecorder>(transcript_path);
    hooks.mock.conditions = conditions;
    hooks.mock.geo_sigma = psd.geo_sigma;
    hooks.mock.n_bins = psd.bins;
    hooks.mock.grid_hr = psd.grid_hr();
    hooks.jitter_seed = s.cfg.seed;
    if (kind == BackendKind::replay) {
        if (flags.replay.empty()) throw ConfigError("--backend replay needs --replay <transcripts.jsonl>");
        hooks.replay = std::make_shared<TranscriptLibrary>(TranscriptLibrary::load(flags.replay));
    }
    ClientBundle b;
    b.recorder = hooks.recorder;
    b.client = std::make_unique<LLMClient>(s.cfg.llm, kind, hooks);
    b.client->check_ready();
    return b;
}

std::string fixture_path(const Session& s, const std::string& relative) {
    if (s.cfg.fixtures_path.empty()) return {};
    return (fs::path(s.cfg.fixtures_path) / relative).string();
}

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
    InputFlags input;
    ConditionFlags conditions;
    PsdFlags psd;
    std::string format = "csv";
    bool svg = false;
    std::string batch;

    int run(Session& s, bool explicit_id) {
        const auto cond = conditions.apply(s.cfg.conditions);
        const auto grid = psd.grid_hr();
        if (format != "csv" && format != "json") throw ValidationError("--format must be csv or json");

        if (!batch.empty()) return run_batch(s, explicit_id, cond, grid);

        const auto in = complete_input(input.partial(), psd);
        const auto profile = simulate_input(in, cond, psd, grid);
        const auto dir = s.make_run_dir("simulate", explicit_id);
        write_file(dir / "profile.csv", profile_to_csv(profile));
        write_file(dir / "profile.json", profile_to_table_json(profile) + "\n");
        write_file(dir / "input.json", to_json(in).dump(2) + "\n");
        if (svg) write_file(dir / "profile.svg", render_profile_svg({{"simulated", profile, true}}, "Simulated dissolution"));
        *s.out << (format == "csv" ? profile_to_csv(profile) : profile_to_table_json(profile) + "\n");
        *s.err << "outputs: " << dir.string() << "\n";
        return kOk;
    }

    // Each entry keeps its id (or gets one) and becomes a simulated record.
    int run_batch(Session& s, bool explicit_id, const DissolutionConditions& cond, const std::vector<double>& grid) {
        const auto text = read_file(batch);
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error&) {
            j = json::array();
            std::istringstream lines(text);
            for (std::string line; std::getline(lines, line);) {
                if (!trim(line).empty()) j.push_back(json::parse(line));
            }
        }
        if (!j.is_array()) j = json::array({j});
        std::string jsonl;
        for (std::size_t i = 0; i < j.size(); ++i) {
            FormulationRecord rec;
            rec.id = j[i].value("id", "sim-" + std::to_string(i + 1));
            rec.features = complete_input(partial_input_from_json(j[i]), psd);
            rec.profile = simulate_input(rec.features, cond, psd, grid);
            rec.provenance = Provenance::simulated;
            rec.source = "formu simulate";
            jsonl += to_json(rec).dump() + "\n";
        }
        const auto dir = s.make_run_dir("simulate", explicit_id);
        write_file(dir / "records.jsonl", jsonl);
        *s.out << jsonl;
        *s.err << "outputs: " << dir.string() << "\n";
        return kOk;
    }
};

// ---------------------------------------------------------------- design

struct DesignCmd {
    std::string target;
    InputFlags input;
    ConditionFlags conditions;
    std::string parameterization = "lognormal";
    std::size_t bins = 50;
    double d50_min = 1.0, d50_max = 1000.0;
    double sigma_min = 1.0, sigma_max = 3.0;
    double size_min = 1.0, size_max = 1000.0;
    double initial_d50 = 100.0, initial_sigma = 1.5;
    double regularization = 1e-2;
    std::size_t starts = 4;
    std::size_t max_iterations = 200;
    std::string calibrate;

    int run(Session& s, bool explicit_id) {
        DesignSpec spec;
        spec.target = load_profile_file(target);
        const auto partial = input.partial();
        const auto drug_input = partial.require({feature::solubility, feature::diffusivity, feature::true_density});
        FormulationInput shaped = drug_input;
        if (!partial.has(feature::aspect_ratio)) shaped.aspect_ratio = 1.0;
        if (!partial.has(feature::roundness)) shaped.roundness = 1.0;
        spec.drug = shaped.drug();
        spec.morph = shaped.morphology();
        spec.conditions = conditions.apply(s.cfg.conditions);
        spec.parameterization = parameterization_from_string(parameterization);
        spec.n_bins = bins;
        spec.d50_bounds = {d50_min, d50_max};
        spec.sigma_bounds = {sigma_min, sigma_max};
        spec.size_bounds = {size_min, size_max};
        spec.initial_d50_um = initial_d50;
        spec.initial_sigma = initial_sigma;
        spec.regularization_weight = regularization;
        spec.starts = starts;
        spec.max_iterations = max_iterations;
        spec.seed = s.cfg.seed;

        std::optional<Calibration> cal;
        if (!calibrate.empty()) {
            std::vector<CalibrationCase> cases;
            for (const auto& rec : load_records_file(calibrate)) {
                cases.push_back({psd_from_lognormal(rec.features.d50_um, 1.5, bins), rec.profile});
            }
            cal = calibrate_velocity_factor(cases, spec.drug, spec.morph, spec.conditions);
            spec.conditions.velocity_factor = cal->velocity_factor;
        }
        spec.validate();

        const auto result = design_psd(spec);
        auto report = design_report(result, spec);
        auto report_json = design_report_json(result, spec);
        if (cal) {
            report += "\ncalibrated velocity_factor " + format_number(cal->velocity_factor) +
                      " (mean calibration MSE " + format_fixed(cal->mean_mse, 4) + " %^2)\n";
            report_json["calibrated_velocity_factor"] = cal->velocity_factor;
        }
        report_json["seed"] = spec.seed;
        const auto dir = s.make_run_dir("design", explicit_id);
        write_file(dir / "design.json", report_json.dump(2) + "\n");
        write_file(dir / "report.txt", report);
        write_file(dir / "achieved.csv", profile_to_csv(result.achieved));
        write_file(dir / "plot.svg", render_profile_svg({{"target", spec.target, true}, {"designed", result.achieved, false}},
                                                        "Inverse design"));
        *s.out << report;
        *s.err << "outputs: " << dir.string() << "\n";
        return kOk;
    }
};

// ---------------------------------------------------------------- predict

struct PredictCmd {
    std::string strategy = "zs";
    InputFlags input;
    ConditionFlags conditions;
    PsdFlags psd;
    BackendFlags backend;
    std::string examples;
    std::size_t few_shot = 3;
    std::size_t k = 3;

    int run(Session& s, bool explicit_id) {
        const auto strat = strategy_from_string(strategy);
        const auto cond = conditions.apply(s.cfg.conditions);
        const auto in = complete_input(input.partial(), psd);

        std::vector<FormulationRecord> shots;
        if (strat == PromptStrategy::fs || strat == PromptStrategy::fs_cot) {
            if (!examples.empty()) {
                shots = load_records_file(examples);
            } else {
                RecordStore store(s.store_path());
                shots = *store.snapshot();
            }
            if (shots.size() > few_shot) shots.resize(few_shot);
        } else if (strat == PromptStrategy::rag) {
            RecordStore store(s.store_path());
            for (auto& hit : store.retrieve(in, k)) shots.push_back(std::move(hit.record));
        }
        const auto prompt = build_prompt(strat, in, shots);

        const auto dir = s.make_run_dir("predict", explicit_id);
        write_file(dir / "prompt.txt", prompt.rendered);
        auto bundle = make_client(s, backend, cond, psd, dir / "transcript.jsonl");

        CompletionResult completion;
        try {
            completion = bundle.client->complete(prompt);
        } catch (const TransportError& e) {
            *s.err << "error: " << e.what() << "\n";
            return kTransport;
        } catch (const RequestError& e) {
            *s.err << "error: " << e.what() << "\n";
            return kTransport;
        }
        write_file(dir / "response.txt", completion.text);

        ParsedProfile parsed;
        try {
            parsed = parse_profile_response(completion.text);
        } catch (const ParseError& e) {
            write_file(dir / "parse_report.json", json{{"error", e.what()}}.dump(2) + "\n");
            *s.err << "error: response could not be parsed: " << e.what() << "\n";
            return kParseFailed;
        }
        json report = parsed.report.to_json();
        json findings = json::array();
        for (const auto& f : validate_profile(parsed.profile)) {
            findings.push_back({{"rule", f.rule},
                                {"severity", f.severity == Severity::fatal ? "fatal" : "advisory"},
                                {"message", f.message}});
            *s.err << (f.severity == Severity::fatal ? "fatal: " : "advisory: ") << f.message << "\n";
        }
        report["findings"] = findings;
        report["strategy"] = to_string(strat);
        report["backend"] = to_string(bundle.client->backend());
        write_file(dir / "parse_report.json", report.dump(2) + "\n");
        write_file(dir / "profile.csv", profile_to_csv(parsed.profile));
        write_file(dir / "profile.svg",
                   render_profile_svg({{std::string(to_string(strat)), parsed.profile, true}}, "Predicted dissolution"));
        *s.out << profile_to_csv(parsed.profile);
        *s.err << "outputs: " << dir.string() << "\n";
        return kOk;
    }
};

// ---------------------------------------------------------------- store

struct StoreCmd {
    std::string ingest_file;
    bool overwrite = false;
    InputFlags query;
    std::size_t k = 3;

    int ingest(Session& s) {
        const auto records = load_records_file(ingest_file);
        RecordStore store(s.store_path());
        for (const auto& r : records) store.ingest(r, overwrite);
        *s.out << "ingested " << records.size() << " record(s); store " << s.store_path().string() << " holds "
               << store.size() << "\n";
        return kOk;
    }

    int list(Session& s) {
        RecordStore store(s.store_path());
        *s.out << "id\td50_um\tsolubility_mg_ml\tssa_m2_g\tvol_eq_um\tprovenance\tpoints\n";
        for (const auto& r : *store.snapshot()) {
            *s.out << r.id << "\t" << format_number(r.features.d50_um) << "\t"
                   << format_number(r.features.solubility_mg_ml) << "\t" << format_number(r.features.ssa_m2_g)
                   << "\t" << format_number(r.features.vol_eq_um) << "\t" << to_string(r.provenance) << "\t"
                   << r.profile.size() << "\n";
        }
        return kOk;
    }

    int retrieve(Session& s) {
        const auto partial = query.partial();
        std::array<bool, kFeatureCount> mask{};
        FormulationInput q;
        auto fv = feature_vector(q);
        bool any = false;
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            mask[i] = partial.has(i);
            any = any || mask[i];
        }
        if (!any) throw ValidationError("store retrieve needs at least one query feature (e.g. --d50)");
        // Unset features carry zero weight, so their placeholder value is irrelevant.
        q.d50_um = partial.values[feature::d50].value_or(fv[feature::d50]);
        q.aspect_ratio = partial.values[feature::aspect_ratio].value_or(q.aspect_ratio);
        q.roundness = partial.values[feature::roundness].value_or(q.roundness);
        q.solubility_mg_ml = partial.values[feature::solubility].value_or(0.0);
        q.diffusivity_m2_s = partial.values[feature::diffusivity].value_or(0.0);
        q.true_density_g_ml = partial.values[feature::true_density].value_or(0.0);
        q.ssa_m2_g = partial.values[feature::ssa].value_or(0.0);
        q.vol_eq_um = partial.values[feature::vol_eq].value_or(0.0);

        RecordStore store(s.store_path());
        auto weights = store.weights();
        if (!std::all_of(mask.begin(), mask.end(), [](bool b) { return b; })) weights = weights.restricted_to(mask);
        const auto snapshot = store.snapshot();
        const auto hits = formu::retrieve(*snapshot, q, k, weights);
        *s.out << "rank\tid\tscore\td50_um\n";
        for (std::size_t i = 0; i < hits.size(); ++i) {
            *s.out << i + 1 << "\t" << hits[i].record.id << "\t" << format_fixed(hits[i].score, 6) << "\t"
                   << format_number(hits[i].record.features.d50_um) << "\n";
        }
        return kOk;
    }
};

// ---------------------------------------------------------------- bench

struct BenchCmd {
    std::string dataset;
    std::string strategies = "zs,zs_cot,fs,fs_cot,rag";
    BackendFlags backend;
    ConditionFlags conditions;
    PsdFlags psd;
    std::size_t few_shot = 3;
    std::size_t k = 3;
    bool sequential = false;

    int run(Session& s, bool explicit_id) {
        std::string path = dataset.empty() ? fixture_path(s, "data/hctz_records.json") : dataset;
        if (path.empty()) throw ValidationError("bench needs --dataset (or fixtures_path in the config)");
        const auto records = load_records_file(path);
        for (const auto& r : records) r.validate();

        std::vector<PromptStrategy> chosen;
        for (auto part : split(strategies, ',')) chosen.push_back(strategy_from_string(trim(part)));

        const auto cond = conditions.apply(s.cfg.conditions);
        const auto dir = s.make_run_dir("bench", explicit_id);
        auto bundle = make_client(s, backend, cond, psd, dir / "transcripts.jsonl");

        BenchmarkOptions options;
        options.few_shot_examples = few_shot;
        options.rag_k = k;
        options.parallel = !sequential;

        EvalReport report;
        try {
            report = run_benchmark(records, chosen, *bundle.client, options);
        } catch (const TransportError& e) {
            *s.err << "error: " << e.what() << "\n";
            return kTransport;
        } catch (const RequestError& e) {
            *s.err << "error: " << e.what() << "\n";
            return kTransport;
        }

        write_file(dir / "report.txt", report.to_text());
        write_file(dir / "report.csv", report.to_csv());
        auto j = report.to_json();
        j["backend"] = backend.backend;
        j["dataset"] = path;
        j["seed"] = s.cfg.seed;
        write_file(dir / "report.json", j.dump(2) + "\n");
        write_file(dir / "residuals.csv", report.residuals_csv());
        fs::create_directories(dir / "plots");
        for (const auto& rec : records) {
            std::vector<PlotSeries> series{{"reference", rec.profile, true}};
            for (const auto& o : report.outcomes) {
                if (o.record_id == rec.id && o.predicted) series.push_back({std::string(to_string(o.strategy)), *o.predicted, false});
            }
            write_file(dir / "plots" / (rec.id + ".svg"), render_profile_svg(series, rec.id));
        }
        *s.out << report.to_text();
        *s.err << "outputs: " << dir.string() << "\n";
        if (report.all_unevaluable()) {
            *s.err << "error: no response could be parsed for any strategy\n";
            return kParseFailed;
        }
        return kOk;
    }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
    std::string reference;
    std::string predicted;

    int run(Session& s, bool explicit_id) {
        const auto ref = load_profile_file(reference);
        const auto pred = load_profile_file(predicted);
        const auto pair = align_profiles(ref, pred);
        const double m = mse(pair);
        std::optional<double> r2;
        try {
            r2 = r_squared(pair);
        } catch (const DegenerateReferenceError& e) {
            *s.err << "note: " << e.what() << "\n";
        }
        json j{{"mse", m}, {"r2", r2 ? json(*r2) : json(nullptr)}, {"n", pair.size()},
               {"reference", reference}, {"predicted", predicted}};
        const auto dir = s.make_run_dir("eval", explicit_id);
        write_file(dir / "eval.json", j.dump(2) + "\n");
        *s.out << "points\t" << pair.size() << "\nmse\t" << format_number(m) << "\nr2\t"
               << (r2 ? format_number(*r2) : std::string("undefined")) << "\n";
        return kOk;
    }
};

void add_footer(CLI::App& app) { app.footer(kUnitsFooter); }

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"formu: dissolution simulation, inverse PSD design and LLM prompt benchmarking"};
    app.name("formu");
    add_footer(app);
    app.require_subcommand(1);
    // Global options may follow the subcommand name.
    app.fallthrough();
    app.set_version_flag("--version", "formu 0.1.0");

    GlobalFlags global;
    app.add_option("--config", global.config_path, "JSON config file (llm, conditions, store_path, fixtures_path, output_dir, seed)");
    app.add_option("--output-dir", global.output_dir, "root for all outputs (default formu_out)");
    app.add_option("--run-id", global.run_id, "run directory suffix (default: UTC timestamp)");
    app.add_option("--seed", global.seed, "seed for multi-start design and retry jitter");
    app.add_option("--store", global.store_path, "JSONL record store (default <output-dir>/store.jsonl)");

    SimulateCmd simulate;
    auto* sim = app.add_subcommand("simulate", "Simulate a dissolution profile from particle and drug properties");
    simulate.input.add_to(*sim);
    simulate.conditions.add_to(*sim);
    simulate.psd.add_to(*sim);
    sim->add_option("--format", simulate.format, "stdout format: csv | json")->capture_default_str();
    sim->add_flag("--svg", simulate.svg, "also write profile.svg");
    sim->add_option("--batch", simulate.batch, "JSON array / JSONL of inputs; writes simulated records.jsonl");
    add_footer(*sim);

    DesignCmd design;
    auto* des = app.add_subcommand("design", "Fit a particle size distribution to a target profile");
    des->add_option("--target", design.target, "target profile (CSV time_hr,released_pct or table JSON)")->required();
    design.input.add_to(*des);
    design.conditions.add_to(*des);
    des->add_option("--parameterization", design.parameterization, "lognormal | free_bins")->capture_default_str();
    des->add_option("--bins", design.bins, "size bins")->capture_default_str();
    des->add_option("--d50-min", design.d50_min, "lower D50 bound [µm]")->capture_default_str();
    des->add_option("--d50-max", design.d50_max, "upper D50 bound [µm]")->capture_default_str();
    des->add_option("--sigma-min", design.sigma_min, "lower geometric sigma bound")->capture_default_str();
    des->add_option("--sigma-max", design.sigma_max, "upper geometric sigma bound")->capture_default_str();
    des->add_option("--size-min", design.size_min, "smallest free-bins size [µm]")->capture_default_str();
    des->add_option("--size-max", design.size_max, "largest free-bins size [µm]")->capture_default_str();
    des->add_option("--initial-d50", design.initial_d50, "starting D50 [µm]")->capture_default_str();
    des->add_option("--initial-sigma", design.initial_sigma, "starting geometric sigma")->capture_default_str();
    des->add_option("--regularization", design.regularization, "roughness weight for free_bins")->capture_default_str();
    des->add_option("--starts", design.starts, "multi-start count")->capture_default_str();
    des->add_option("--max-iterations", design.max_iterations, "iteration cap per start")->capture_default_str();
    des->add_option("--calibrate", design.calibrate,
                    "records file; fit velocity_factor to them (geo sigma 1.5) before designing");
    add_footer(*des);

    PredictCmd predict;
    auto* pre = app.add_subcommand("predict", "Ask an LLM backend for a dissolution profile");
    pre->add_option("--strategy", predict.strategy, "zs | zs_cot | fs | fs_cot | rag")->capture_default_str();
    predict.input.add_to(*pre);
    predict.conditions.add_to(*pre);
    predict.psd.add_to(*pre);
    predict.backend.add_to(*pre);
    pre->add_option("--examples", predict.examples, "records file for few-shot examples (default: the store)");
    pre->add_option("--few-shot", predict.few_shot, "maximum few-shot examples")->capture_default_str();
    pre->add_option("-k,--k", predict.k, "records retrieved for rag")->capture_default_str();
    add_footer(*pre);

    StoreCmd store;
    auto* sto = app.add_subcommand("store", "Manage the JSONL record store");
    sto->require_subcommand(1);
    add_footer(*sto);
    auto* sto_ingest = sto->add_subcommand("ingest", "Add records from a JSON array, object or JSONL file");
    sto_ingest->add_option("file", store.ingest_file, "records file")->required();
    sto_ingest->add_flag("--overwrite", store.overwrite, "replace records with the same id");
    add_footer(*sto_ingest);
    auto* sto_list = sto->add_subcommand("list", "List stored records");
    add_footer(*sto_list);
    auto* sto_retrieve = sto->add_subcommand("retrieve", "Rank stored records against a (partial) query");
    store.query.add_to(*sto_retrieve);
    sto_retrieve->add_option("-k,--k", store.k, "records to return")->capture_default_str();
    add_footer(*sto_retrieve);

    BenchCmd bench;
    auto* ben = app.add_subcommand("bench", "Score the five prompt strategies on a dataset (MSE, R²)");
    ben->add_option("--dataset", bench.dataset, "records file (default <fixtures_path>/data/hctz_records.json)");
    ben->add_option("--strategies", bench.strategies, "comma-separated subset")->capture_default_str();
    bench.backend.add_to(*ben);
    bench.conditions.add_to(*ben);
    bench.psd.add_to(*ben);
    ben->add_option("--few-shot", bench.few_shot, "few-shot examples per prompt")->capture_default_str();
    ben->add_option("-k,--k", bench.k, "records retrieved for rag")->capture_default_str();
    ben->add_flag("--sequential", bench.sequential, "evaluate records one at a time");
    add_footer(*ben);

    EvalCmd eval;
    auto* eva = app.add_subcommand("eval", "MSE and R² between two profile files");
    eva->add_option("--reference", eval.reference, "reference profile")->required();
    eva->add_option("--predicted", eval.predicted, "predicted profile")->required();
    add_footer(*eva);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << app.version() << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        Session session;
        session.cfg = load_config(global.config_path);
        if (global.output_dir) session.cfg.output_dir = *global.output_dir;
        if (global.seed) session.cfg.seed = *global.seed;
        if (global.store_path) session.cfg.store_path = *global.store_path;
        session.cfg.llm.validate();
        session.run_id = global.run_id.value_or(timestamp_run_id());
        session.out = &out;
        session.err = &err;
        const bool explicit_id = global.run_id.has_value();

        if (sim->parsed()) return simulate.run(session, explicit_id);
        if (des->parsed()) return design.run(session, explicit_id);
        if (pre->parsed()) return predict.run(session, explicit_id);
        if (sto_ingest->parsed()) return store.ingest(session);
        if (sto_list->parsed()) return store.list(session);
        if (sto_retrieve->parsed()) return store.retrieve(session);
        if (ben->parsed()) return bench.run(session, explicit_id);
        if (eva->parsed()) return eval.run(session, explicit_id);
        return kUsage;
    } catch (const TransportError& e) {
        err << "error: " << e.what() << "\n";
        return kTransport;
    } catch (const RequestError& e) {
        err << "error: " << e.what() << "\n";
        return kTransport;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const json::exception& e) {
        err << "error: malformed JSON: " << e.what() << "\n";
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    }
}

} // namespace formu::cli
