#pragma once

#include "formu/formulation.hpp"
#include "formu/profile.hpp"

#include <json.hpp>

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace formu {

enum class PromptStrategy { zs, zs_cot, fs, fs_cot, rag };

/// Table order: ZS, ZS_CoT, FS, FS_CoT, RAG.
inline constexpr std::array<PromptStrategy, 5> kAllStrategies{
    PromptStrategy::zs, PromptStrategy::zs_cot, PromptStrategy::fs, PromptStrategy::fs_cot,
    PromptStrategy::rag};

/// "ZS", "ZS_CoT", "FS", "FS_CoT", "RAG".
std::string_view to_string(PromptStrategy s);
/// Case-insensitive; accepts '-' or '_' separators ("zs-cot", "FS_CoT").
PromptStrategy strategy_from_string(std::string_view text);

bool is_chain_of_thought(PromptStrategy s);
bool needs_examples(PromptStrategy s);

enum class PromptSection { role, background, request, input_format, output_format, examples, constraints };

inline constexpr std::array<PromptSection, 7> kSectionOrder{
    PromptSection::role,          PromptSection::background, PromptSection::request,
    PromptSection::input_format,  PromptSection::output_format, PromptSection::examples,
    PromptSection::constraints};

/// Display name used in the "### Name: ###" header.
std::string_view section_title(PromptSection s);

inline constexpr std::string_view kChainOfThoughtLine = "Do the step-by-step analysis";
inline constexpr std::string_view kNoExamples = "no examples provided";

struct PromptBundle {
    PromptStrategy strategy = PromptStrategy::zs;
    std::vector<std::pair<PromptSection, std::string>> sections;
    std::string rendered;

    /// Body text of one section (without header), empty if absent.
    std::string_view section(PromptSection s) const;
};

/// Forward task: predict the released-% table for `input`.
///
/// FS/FS_CoT need at least one example and RAG at least one retrieved record
/// (PreconditionError otherwise); ZS variants ignore `examples`.
/// `extra_constraints` are appended after the fixed constraint list.
PromptBundle build_prompt(PromptStrategy strategy, const FormulationInput& input,
                          std::span<const FormulationRecord> examples = {},
                          std::span<const std::string> extra_constraints = {});

/// Inverse task: propose particle properties for a target profile. Only the
/// drug constants and shape of `drug_constants` are used.
PromptBundle build_inverse_prompt(PromptStrategy strategy, const DissolutionProfile& target,
                                  const FormulationInput& drug_constants,
                                  std::span<const FormulationRecord> examples = {},
                                  std::span<const std::string> extra_constraints = {});

/// `{ Input = { "key" : value, ... } }` block.
std::string render_input_block(const FormulationInput& input);

/// "### ExampleN: ###" blocks, one per record, in order.
std::string render_example_blocks(std::span<const FormulationRecord> records);

/// Output-format grid hint, e.g. "{t_0}, {t_0.25}, ..., {t_6}".
std::string render_key_metrics(const std::vector<double>& grid_hr);

struct ClampEvent {
    std::size_t index = 0;
    double time_hr = 0.0;
    double original = 0.0;
    double clamped = 0.0;
};

/// Records every leniency applied while parsing a response.
struct ParseReport {
    std::string source_unit = "hr";
    bool code_fenced = false;
    bool surrounding_text = false;
    bool reordered = false;
    std::vector<ClampEvent> clamped;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

struct ParsedProfile {
    DissolutionProfile profile;
    ParseReport report;
};

/// Extracts the first JSON object with "columns" and "data" from free text.
/// Throws ParseError (nothing parseable), EmptyProfileError or
/// DuplicateTimeError.
ParsedProfile parse_profile_response(std::string_view text);

enum class Severity { fatal, advisory };

struct ProfileFinding {
    std::string rule;
    Severity severity = Severity::advisory;
    std::string message;
};

/// Rules: initial_condition, value_range (fatal); usp_85_within_1h,
/// non_monotonic (advisory).
std::vector<ProfileFinding> validate_profile(const DissolutionProfile& profile);

bool has_fatal(const std::vector<ProfileFinding>& findings);

/// Parses the Input Format section of a rendered forward prompt.
PartialInput input_from_prompt(std::string_view rendered_prompt);

} // namespace formu
