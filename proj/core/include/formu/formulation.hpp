#pragma once

#include "formu/dissolution.hpp"
#include "formu/profile.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace formu {

/// Particle and drug properties in the units used by records and prompts:
/// um, mg/mL, m^2/s, g/mL, m^2/g.
struct FormulationInput {
    double d50_um = 0.0;
    double aspect_ratio = 1.0;
    double roundness = 1.0;
    double solubility_mg_ml = 0.0;
    double diffusivity_m2_s = 0.0;
    double true_density_g_ml = 0.0;
    double ssa_m2_g = 0.0;
    double vol_eq_um = 0.0;

    void validate() const;

    DrugSubstance drug() const;
    ParticleMorphology morphology() const;

    friend bool operator==(const FormulationInput&, const FormulationInput&) = default;
};

inline constexpr std::size_t kFeatureCount = 8;
using FeatureVector = std::array<double, kFeatureCount>;

/// Canonical snake_case keys, in feature order.
const std::array<std::string_view, kFeatureCount>& feature_keys();
/// The verbose keys used in prompts, in feature order.
const std::array<std::string_view, kFeatureCount>& verbose_feature_keys();

FeatureVector feature_vector(const FormulationInput& input);

enum class Provenance { experimental, simulated };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view text);

struct FormulationRecord {
    std::string id;
    FormulationInput features;
    DissolutionProfile profile;
    Provenance provenance = Provenance::experimental;
    std::string source;

    void validate() const;

    friend bool operator==(const FormulationRecord&, const FormulationRecord&) = default;
};

/// Field-by-field optional view, used where inputs may be partial (CLI
/// queries, prompt sections).
struct PartialInput {
    std::array<std::optional<double>, kFeatureCount> values;

    bool has(std::size_t feature) const { return values[feature].has_value(); }
    /// Throws ValidationError naming the first missing required field.
    FormulationInput require(std::initializer_list<std::size_t> required) const;
};

namespace feature {
inline constexpr std::size_t d50 = 0;
inline constexpr std::size_t aspect_ratio = 1;
inline constexpr std::size_t roundness = 2;
inline constexpr std::size_t solubility = 3;
inline constexpr std::size_t diffusivity = 4;
inline constexpr std::size_t true_density = 5;
inline constexpr std::size_t ssa = 6;
inline constexpr std::size_t vol_eq = 7;
} // namespace feature

/// Reads canonical or verbose keys, optionally nested under "Input".
/// Values may be numbers or strings such as "7.5x 10^(-10)".
PartialInput partial_input_from_json(const nlohmann::json& j);

/// Extracts `"key" : value` pairs from prompt-style text blocks, which are
/// not valid JSON (missing commas, `7.5x 10^(-10)` literals).
PartialInput partial_input_from_text(std::string_view text);

/// Parses "7.5x 10^(-10)", "7.5e-10", "7.5 * 10^-10" and plain numbers.
double parse_scientific(std::string_view text);

nlohmann::json to_json(const FormulationInput& input);
nlohmann::json to_json(const FormulationRecord& record);

/// Canonical store line or a verbose-key import object
/// ({"id", "Input": {...}, "Output": {"columns", "data"}, ...}).
FormulationRecord record_from_json(const nlohmann::json& j);

/// JSON array, single object, or JSONL.
std::vector<FormulationRecord> records_from_text(std::string_view text);
std::vector<FormulationRecord> load_records_file(const std::string& path);

} // namespace formu
