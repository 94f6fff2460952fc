#pragma once

#include "formu/formulation.hpp"
#include "formu/llm_client.hpp"
#include "formu/metrics.hpp"
#include "formu/prompt.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace formu {

/// Result of one (record, strategy) evaluation.
struct RecordOutcome {
    std::string record_id;
    PromptStrategy strategy = PromptStrategy::zs;
    bool ok = false;
    std::optional<DissolutionProfile> predicted;
    std::optional<AlignedPair> pair;
    double mse = 0.0;
    std::optional<double> r2;
    std::string error;
};

struct EvalRow {
    PromptStrategy strategy = PromptStrategy::zs;
    double mse = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;          ///< records evaluated
    std::size_t failures = 0;   ///< records whose prompt, completion or parse failed
    bool evaluable = false;
    std::string notes;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<RecordOutcome> outcomes;

    std::string to_text() const;
    std::string to_csv() const;
    nlohmann::json to_json() const;
    /// One line per aligned point: record, strategy, time, reference, predicted, residual.
    std::string residuals_csv() const;
    bool all_unevaluable() const;
};

struct BenchmarkOptions {
    std::size_t few_shot_examples = 3;
    std::size_t rag_k = 3;
    /// Evaluate records concurrently; the client still bounds in-flight calls.
    bool parallel = true;
};

/// Builds, completes, parses and scores every (record, strategy) pair.
///
/// Few-shot examples and the RAG store are taken from the other records of
/// the dataset (leave-one-out). Rows come out in ZS, ZS_CoT, FS, FS_CoT, RAG
/// order restricted to `strategies`; per-strategy MSE and R^2 are unweighted
/// means over the records that parsed.
EvalReport run_benchmark(std::span<const FormulationRecord> dataset,
                         std::span<const PromptStrategy> strategies, LLMClient& client,
                         const BenchmarkOptions& options = {});

/// Reference outcome of a live run against a 671B-parameter model, for documentation
/// and side-by-side printing; not used for pass/fail.
struct ReferenceRow {
    PromptStrategy strategy;
    double mse;
    double r2;
};
inline constexpr std::array<ReferenceRow, 5> kReferenceOutcome{{
    {PromptStrategy::zs, 23.61, 0.97},
    {PromptStrategy::zs_cot, 114.89, 0.90},
    {PromptStrategy::fs, 57.0, 0.92},
    {PromptStrategy::fs_cot, 22.56, 0.97},
    {PromptStrategy::rag, 10.55, 0.99},
}};

} // namespace formu
