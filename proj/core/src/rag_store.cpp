#include "formu/rag_store.hpp"

#include "formu/errors.hpp"
#include "formu/prompt.hpp"
#include "formu/text_format.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace formu {

RetrievalWeights RetrievalWeights::uniform(const std::array<bool, kFeatureCount>& mask,
                                           const FeatureVector& scales) {
    RetrievalWeights w;
    w.scales = scales;
    const auto count = static_cast<double>(std::count(mask.begin(), mask.end(), true));
    if (count == 0) throw ValidationError("retrieval weights need at least one feature");
    for (std::size_t j = 0; j < kFeatureCount; ++j) w.weights[j] = mask[j] ? 1.0 / count : 0.0;
    return w;
}

RetrievalWeights RetrievalWeights::restricted_to(const std::array<bool, kFeatureCount>& mask) const {
    return uniform(mask, scales);
}

double RetrievalWeights::weight_sum() const {
    return std::accumulate(weights.begin(), weights.end(), 0.0);
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    return pearson(average_ranks(a), average_ranks(b));
}

} // namespace

RetrievalWeights adapt_weights(std::span<const FormulationRecord> records) {
    if (records.empty()) throw EmptyStoreError("cannot adapt weights on an empty store");

    std::array<std::vector<double>, kFeatureCount> columns;
    std::vector<double> released_1h;
    for (const auto& r : records) {
        const auto f = feature_vector(r.features);
        for (std::size_t j = 0; j < kFeatureCount; ++j) columns[j].push_back(f[j]);
        const double t_last = r.profile.points.back().time_hr;
        released_1h.push_back(released_at(r.profile, std::min(1.0, t_last)));
    }

    FeatureVector scales{};
    std::array<bool, kFeatureCount> spread{};
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
        const auto& col = columns[j];
        const double med = median(col);
        std::vector<double> dev;
        dev.reserve(col.size());
        for (double v : col) dev.push_back(std::abs(v - med));
        double mad = median(dev);
        const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
        spread[j] = *hi > *lo;
        if (mad == 0.0 && spread[j]) {
            // Mostly tied column: fall back to the mean deviation about the median.
            mad = std::accumulate(dev.begin(), dev.end(), 0.0) / static_cast<double>(dev.size());
        }
        scales[j] = std::max(mad, kMinFeatureScale);
    }

    const bool any_spread = std::any_of(spread.begin(), spread.end(), [](bool b) { return b; });
    std::array<bool, kFeatureCount> all{};
    all.fill(true);
    const auto& fallback_mask = any_spread ? spread : all;

    if (records.size() < kAdaptiveMinRecords) return RetrievalWeights::uniform(fallback_mask, scales);

    RetrievalWeights w;
    w.scales = scales;
    double total = 0.0;
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
        w.weights[j] = spread[j] ? std::abs(spearman(columns[j], released_1h)) : 0.0;
        total += w.weights[j];
    }
    if (!(total > 0.0)) return RetrievalWeights::uniform(fallback_mask, scales);
    for (auto& wj : w.weights) wj /= total;
    return w;
}

std::vector<ScoredRecord> retrieve(std::span<const FormulationRecord> records,
                                   const FormulationInput& query, std::size_t k,
                                   const RetrievalWeights& weights) {
    if (k < 1) throw ValidationError("retrieve: k must be >= 1");
    if (records.empty()) throw EmptyStoreError("retrieve: store is empty");
    const auto q = feature_vector(query);
    std::vector<ScoredRecord> scored;
    scored.reserve(records.size());
    for (const auto& r : records) {
        const auto f = feature_vector(r.features);
        double distance = 0.0;
        for (std::size_t j = 0; j < kFeatureCount; ++j) {
            if (weights.weights[j] == 0.0) continue;
            distance += weights.weights[j] * std::abs(q[j] - f[j]) / weights.scales[j];
        }
        scored.push_back({r, std::exp(-distance)});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredRecord& a, const ScoredRecord& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.record.id < b.record.id;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

std::string to_examples(std::span<const FormulationRecord> records) {
    if (records.empty()) throw PreconditionError("to_examples needs at least one record");
    return render_example_blocks(records);
}

RecordStore::RecordStore() : records_(std::make_shared<const std::vector<FormulationRecord>>()) {}

RecordStore::RecordStore(std::filesystem::path path) : RecordStore() {
    path_ = std::move(path);
    if (!std::filesystem::exists(*path_)) return;
    std::ifstream in(*path_);
    if (!in) throw ConfigError("cannot read store " + path_->string());
    std::vector<FormulationRecord> loaded;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        FormulationRecord r;
        try {
            r = record_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path_->string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path_->string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto it = std::find_if(loaded.begin(), loaded.end(), [&](const auto& x) { return x.id == r.id; });
        if (it != loaded.end()) {
            *it = std::move(r);
        } else {
            loaded.push_back(std::move(r));
        }
    }
    records_ = std::make_shared<const std::vector<FormulationRecord>>(std::move(loaded));
}

void RecordStore::ingest(const FormulationRecord& record, bool overwrite) {
    record.validate();
    std::lock_guard lock(mutex_);
    auto next = std::make_shared<std::vector<FormulationRecord>>(*records_);
    auto it = std::find_if(next->begin(), next->end(), [&](const auto& x) { return x.id == record.id; });
    if (it != next->end() && !overwrite) {
        throw ConflictError("record id '" + record.id + "' already in store");
    }
    if (path_) {
        if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
        std::ofstream out(*path_, std::ios::app);
        if (!out) throw ConfigError("cannot append to store " + path_->string());
        out << to_json(record).dump() << '\n';
        if (!out) throw ConfigError("write failed for store " + path_->string());
    }
    if (it != next->end()) {
        *it = record;
    } else {
        next->push_back(record);
    }
    records_ = std::move(next);
    cached_weights_.reset();
}

RecordStore::Snapshot RecordStore::snapshot() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t RecordStore::size() const { return snapshot()->size(); }

std::optional<FormulationRecord> RecordStore::find(const std::string& id) const {
    auto snap = snapshot();
    for (const auto& r : *snap) {
        if (r.id == id) return r;
    }
    return std::nullopt;
}

bool RecordStore::stats_stale() const {
    std::lock_guard lock(mutex_);
    return !cached_weights_.has_value();
}

RetrievalWeights RecordStore::weights() {
    std::lock_guard lock(mutex_);
    if (!cached_weights_) cached_weights_ = adapt_weights(*records_);
    return *cached_weights_;
}

std::vector<ScoredRecord> RecordStore::retrieve(const FormulationInput& query, std::size_t k) {
    auto snap = snapshot();
    if (snap->empty()) throw EmptyStoreError("retrieve: store is empty");
    return formu::retrieve(*snap, query, k, weights());
}

} // namespace formu
