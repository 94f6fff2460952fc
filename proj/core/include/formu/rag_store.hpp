#pragma once

#include "formu/formulation.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace formu {

/// Feature weights and scales for the retrieval kernel
///
///     score(q, r) = exp(-sum_j w_j |q_j - r_j| / s_j)
///
/// w_j >= 0 with sum 1; s_j > 0 is a robust spread of feature j.
struct RetrievalWeights {
    FeatureVector weights{};
    FeatureVector scales{};

    /// Equal weight on the features flagged in `mask`, zero elsewhere.
    static RetrievalWeights uniform(const std::array<bool, kFeatureCount>& mask,
                                    const FeatureVector& scales);
    /// Re-weights uniformly over the features whose mask bit is set.
    RetrievalWeights restricted_to(const std::array<bool, kFeatureCount>& mask) const;
    double weight_sum() const;
};

inline constexpr double kMinFeatureScale = 1e-12;
inline constexpr std::size_t kAdaptiveMinRecords = 5;

/// Per-feature scale = median absolute deviation (floored at 1e-12). Raw
/// weight = |Spearman rho| between the feature and released % at 1 hr,
/// renormalized. Below five records, or when no feature correlates, weights
/// fall back to uniform over features with nonzero spread.
RetrievalWeights adapt_weights(std::span<const FormulationRecord> records);

struct ScoredRecord {
    FormulationRecord record;
    double score = 0.0;
};

/// Top-k by score, ties broken by ascending id. Throws EmptyStoreError.
std::vector<ScoredRecord> retrieve(std::span<const FormulationRecord> records,
                                   const FormulationInput& query, std::size_t k,
                                   const RetrievalWeights& weights);

/// Example blocks for a prompt's Examples section, in the given order.
std::string to_examples(std::span<const FormulationRecord> records);

/// Append-only JSONL record store with an in-memory index.
///
/// Ingestion is serialized; readers take an immutable snapshot. On load a
/// later line with the same id replaces the earlier one.
class RecordStore {
public:
    using Snapshot = std::shared_ptr<const std::vector<FormulationRecord>>;

    /// In-memory only.
    RecordStore();
    /// Loads `path` if it exists; ingests append to it.
    explicit RecordStore(std::filesystem::path path);

    RecordStore(const RecordStore&) = delete;
    RecordStore& operator=(const RecordStore&) = delete;

    /// Throws ConflictError on a duplicate id unless `overwrite`, and
    /// ValidationError for invalid records.
    void ingest(const FormulationRecord& record, bool overwrite = false);

    Snapshot snapshot() const;
    std::size_t size() const;
    std::optional<FormulationRecord> find(const std::string& id) const;

    /// True after any ingest until weights are recomputed.
    bool stats_stale() const;
    RetrievalWeights weights();

    std::vector<ScoredRecord> retrieve(const FormulationInput& query, std::size_t k);

    const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

private:
    mutable std::mutex mutex_;
    std::optional<std::filesystem::path> path_;
    Snapshot records_;
    std::optional<RetrievalWeights> cached_weights_;
};

} // namespace formu
