#include "formu/benchmark.hpp"

#include "formu/errors.hpp"
#include "formu/rag_store.hpp"
#include "formu/text_format.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace formu {

using nlohmann::json;

namespace {

std::vector<FormulationRecord> others(std::span<const FormulationRecord> dataset, std::size_t skip) {
    std::vector<FormulationRecord> out;
    out.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (i != skip) out.push_back(dataset[i]);
    }
    return out;
}

RecordOutcome evaluate(std::span<const FormulationRecord> dataset, std::size_t index,
                       PromptStrategy strategy, LLMClient& client, const BenchmarkOptions& options) {
    const auto& record = dataset[index];
    RecordOutcome out;
    out.record_id = record.id;
    out.strategy = strategy;

    std::vector<FormulationRecord> examples;
    if (strategy == PromptStrategy::fs || strategy == PromptStrategy::fs_cot) {
        examples = others(dataset, index);
        if (examples.size() > options.few_shot_examples) examples.resize(options.few_shot_examples);
    } else if (strategy == PromptStrategy::rag) {
        auto pool = others(dataset, index);
        if (!pool.empty()) {
            for (auto& hit : retrieve(pool, record.features, options.rag_k, adapt_weights(pool))) {
                examples.push_back(std::move(hit.record));
            }
        }
    }

    try {
        const auto prompt = build_prompt(strategy, record.features, examples);
        const auto completion = client.complete(prompt);
        auto parsed = parse_profile_response(completion.text);
        auto pair = align_profiles(record.profile, parsed.profile);
        out.mse = mse(pair);
        try {
            out.r2 = r_squared(pair);
        } catch (const DegenerateReferenceError&) {
        }
        out.predicted = std::move(parsed.profile);
        out.pair = std::move(pair);
        out.ok = true;
    } catch (const TransportError&) {
        throw;
    } catch (const RequestError&) {
        throw;
    } catch (const Error& e) {
        out.error = e.what();
    }
    return out;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

} // namespace

EvalReport run_benchmark(std::span<const FormulationRecord> dataset,
                         std::span<const PromptStrategy> strategies, LLMClient& client,
                         const BenchmarkOptions& options) {
    if (dataset.empty()) throw PreconditionError("benchmark dataset is empty");
    std::vector<PromptStrategy> order;
    for (auto s : kAllStrategies) {
        if (std::find(strategies.begin(), strategies.end(), s) != strategies.end()) order.push_back(s);
    }
    if (order.empty()) throw PreconditionError("no strategies selected");

    const std::size_t jobs = order.size() * dataset.size();
    std::vector<RecordOutcome> outcomes(jobs);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (std::size_t job = next++; job < jobs; job = next++) {
            try {
                outcomes[job] = evaluate(dataset, job % dataset.size(), order[job / dataset.size()],
                                         client, options);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = jobs;
            }
        }
    };

    const std::size_t threads =
        options.parallel ? std::min<std::size_t>(jobs, static_cast<std::size_t>(client.config().max_inflight)) : 1;
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    EvalReport report;
    for (std::size_t s = 0; s < order.size(); ++s) {
        EvalRow row;
        row.strategy = order[s];
        double mse_sum = 0.0;
        double r2_sum = 0.0;
        std::size_t r2_count = 0;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const auto& o = outcomes[s * dataset.size() + i];
            if (!o.ok) {
                ++row.failures;
                continue;
            }
            ++row.n;
            mse_sum += o.mse;
            if (o.r2) {
                r2_sum += *o.r2;
                ++r2_count;
            }
        }
        row.evaluable = row.n > 0;
        if (row.evaluable) {
            row.mse = mse_sum / static_cast<double>(row.n);
            row.r2 = r2_count ? r2_sum / static_cast<double>(r2_count) : 0.0;
        }
        if (!row.evaluable) {
            row.notes = "unevaluable: every record failed";
        } else if (row.failures) {
            row.notes = std::to_string(row.failures) + " failed record(s)";
        }
        if (row.evaluable && r2_count < row.n) {
            if (!row.notes.empty()) row.notes += "; ";
            row.notes += "R2 over " + std::to_string(r2_count) + " record(s)";
        }
        report.rows.push_back(row);
    }
    report.outcomes = std::move(outcomes);
    return report;
}

bool EvalReport::all_unevaluable() const {
    return std::none_of(rows.begin(), rows.end(), [](const EvalRow& r) { return r.evaluable; });
}

std::string EvalReport::to_text() const {
    std::string out = pad("", 12);
    for (const auto& r : rows) out += pad(std::string(to_string(r.strategy)), 12);
    out += "\n" + pad("MSE (%^2)", 12);
    for (const auto& r : rows) out += pad(r.evaluable ? format_fixed(r.mse, 4) : "n/a", 12);
    out += "\n" + pad("R square", 12);
    for (const auto& r : rows) out += pad(r.evaluable ? format_fixed(r.r2, 4) : "n/a", 12);
    out += "\n" + pad("n", 12);
    for (const auto& r : rows) out += pad(std::to_string(r.n), 12);
    out += "\n" + pad("failures", 12);
    for (const auto& r : rows) out += pad(std::to_string(r.failures), 12);
    out += "\n";
    for (const auto& r : rows) {
        if (!r.notes.empty()) out += std::string(to_string(r.strategy)) + ": " + r.notes + "\n";
    }
    return out;
}

std::string EvalReport::to_csv() const {
    std::string out = "strategy,mse,r2,n,failures,evaluable,notes\n";
    for (const auto& r : rows) {
        out += std::string(to_string(r.strategy)) + "," + (r.evaluable ? format_number(r.mse) : "") + "," +
               (r.evaluable ? format_number(r.r2) : "") + "," + std::to_string(r.n) + "," +
               std::to_string(r.failures) + "," + (r.evaluable ? "true" : "false") + ",\"" + r.notes + "\"\n";
    }
    return out;
}

json EvalReport::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows) {
        json row{{"strategy", to_string(r.strategy)}, {"n", r.n}, {"failures", r.failures},
                 {"evaluable", r.evaluable}, {"notes", r.notes}};
        row["mse"] = r.evaluable ? json(r.mse) : json(nullptr);
        row["r2"] = r.evaluable ? json(r.r2) : json(nullptr);
        rows_json.push_back(row);
    }
    json records = json::array();
    for (const auto& o : outcomes) {
        json rec{{"record", o.record_id}, {"strategy", to_string(o.strategy)}, {"ok", o.ok}};
        if (o.ok) {
            rec["mse"] = o.mse;
            rec["r2"] = o.r2 ? json(*o.r2) : json(nullptr);
        } else {
            rec["error"] = o.error;
        }
        records.push_back(rec);
    }
    json reference = json::array();
    for (const auto& r : kReferenceOutcome) {
        reference.push_back({{"strategy", to_string(r.strategy)}, {"mse", r.mse}, {"r2", r.r2}});
    }
    return {{"rows", rows_json}, {"records", records}, {"reference_outcome", reference}};
}

std::string EvalReport::residuals_csv() const {
    std::string out = "record,strategy,time_hr,reference_pct,predicted_pct,residual_pct\n";
    for (const auto& o : outcomes) {
        if (!o.pair) continue;
        for (std::size_t i = 0; i < o.pair->size(); ++i) {
            out += o.record_id + "," + std::string(to_string(o.strategy)) + "," +
                   format_number(o.pair->times_hr[i]) + "," + format_number(o.pair->reference[i]) + "," +
                   format_number(o.pair->predicted[i]) + "," +
                   format_number(o.pair->reference[i] - o.pair->predicted[i]) + "\n";
        }
    }
    return out;
}

} // namespace formu
