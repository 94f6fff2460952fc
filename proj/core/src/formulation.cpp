#include "formu/formulation.hpp"

#include "formu/errors.hpp"
#include "formu/text_format.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

namespace formu {

using nlohmann::json;

void FormulationInput::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be > 0");
    };
    positive(d50_um, "d50_um");
    positive(solubility_mg_ml, "solubility_mg_ml");
    positive(diffusivity_m2_s, "diffusivity_m2_s");
    positive(true_density_g_ml, "true_density_g_ml");
    positive(ssa_m2_g, "ssa_m2_g");
    positive(vol_eq_um, "vol_eq_um");
    if (!(aspect_ratio >= 1.0)) throw ValidationError("aspect_ratio must be >= 1");
    if (!(roundness > 0.0 && roundness <= 1.0)) throw ValidationError("roundness must be in (0, 1]");
}

DrugSubstance FormulationInput::drug() const {
    return DrugSubstance{"", solubility_mg_ml, diffusivity_m2_s, true_density_g_ml};
}

ParticleMorphology FormulationInput::morphology() const {
    return ParticleMorphology::from_shape(aspect_ratio, roundness);
}

const std::array<std::string_view, kFeatureCount>& feature_keys() {
    static const std::array<std::string_view, kFeatureCount> keys{
        "d50_um",           "aspect_ratio",      "roundness", "solubility_mg_ml",
        "diffusivity_m2_s", "true_density_g_ml", "ssa_m2_g",  "vol_eq_um"};
    return keys;
}

const std::array<std::string_view, kFeatureCount>& verbose_feature_keys() {
    static const std::array<std::string_view, kFeatureCount> keys{
        "Mean Particle Size, D50",
        "Aspect ratio",
        "Roundness",
        "solubility of drug (mg/mL)",
        "Diffusion coefficient of drug (m^2/s)",
        "True Density of drug (g/mL)",
        "Specific surface area (m^2/g)",
        "volume-based equivalent particle size (micrometer)"};
    return keys;
}

FeatureVector feature_vector(const FormulationInput& in) {
    return {in.d50_um,           in.aspect_ratio,      in.roundness, in.solubility_mg_ml,
            in.diffusivity_m2_s, in.true_density_g_ml, in.ssa_m2_g,  in.vol_eq_um};
}

std::string_view to_string(Provenance p) {
    return p == Provenance::experimental ? "experimental" : "simulated";
}

Provenance provenance_from_string(std::string_view text) {
    if (text == "experimental") return Provenance::experimental;
    if (text == "simulated") return Provenance::simulated;
    throw ValidationError("unknown provenance '" + std::string(text) + "'");
}

void FormulationRecord::validate() const {
    if (id.empty()) throw ValidationError("record id must not be empty");
    try {
        features.validate();
        check_profile(profile);
    } catch (const ValidationError& e) {
        throw ValidationError("record '" + id + "': " + e.what());
    }
}

FormulationInput PartialInput::require(std::initializer_list<std::size_t> required) const {
    for (auto f : required) {
        if (!values[f]) throw ValidationError("missing required field " + std::string(feature_keys()[f]));
    }
    FormulationInput in;
    auto get = [&](std::size_t f, double fallback) { return values[f].value_or(fallback); };
    in.d50_um = get(feature::d50, 0.0);
    in.aspect_ratio = get(feature::aspect_ratio, 1.0);
    in.roundness = get(feature::roundness, 1.0);
    in.solubility_mg_ml = get(feature::solubility, 0.0);
    in.diffusivity_m2_s = get(feature::diffusivity, 0.0);
    in.true_density_g_ml = get(feature::true_density, 0.0);
    in.ssa_m2_g = get(feature::ssa, 0.0);
    in.vol_eq_um = get(feature::vol_eq, 0.0);
    return in;
}

double parse_scientific(std::string_view text) {
    static const std::regex pattern(
        R"(^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(?:(?:[xX*]|\xC3\x97)\s*10\s*\^\s*\(?\s*([-+]?\d+)\s*\)?)?\s*$)");
    std::string s(text);
    std::smatch m;
    if (!std::regex_match(s, m, pattern)) throw ValidationError("not a number: '" + s + "'");
    if (!m[2].matched) return parse_number(m[1].str());
    const std::string mantissa = m[1].str();
    if (mantissa.find_first_of("eE") == std::string::npos) {
        return parse_number(mantissa + "e" + m[2].str());
    }
    return parse_number(mantissa) * std::pow(10.0, parse_number(m[2].str()));
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::optional<std::size_t> feature_index(std::string_view key) {
    const std::string k = lower(trim(key));
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (k == lower(feature_keys()[i]) || k == lower(verbose_feature_keys()[i])) return i;
    }
    if (k == "d50") return feature::d50;
    return std::nullopt;
}

double number_from_json(const json& v, std::string_view key) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        try {
            return parse_scientific(v.get<std::string>());
        } catch (const ValidationError&) {
        }
    }
    throw ValidationError("field " + std::string(key) + " is not numeric");
}

DissolutionProfile profile_from_json(const json& j) {
    DissolutionProfile p;
    const json* data = &j;
    double time_scale = 1.0;
    if (j.is_object()) {
        if (!j.contains("data")) throw ValidationError("profile object lacks \"data\"");
        data = &j.at("data");
        if (j.contains("columns") && j["columns"].is_array() && !j["columns"].empty() &&
            j["columns"][0].is_string() &&
            lower(j["columns"][0].get<std::string>()).find("min") != std::string::npos) {
            time_scale = 1.0 / 60.0;
        }
    }
    if (!data->is_array()) throw ValidationError("profile must be an array of [time, released]");
    for (const auto& row : *data) {
        if (!row.is_array() || row.size() != 2) {
            throw ValidationError("profile rows must be [time, released] pairs");
        }
        p.points.push_back({number_from_json(row[0], "time") * time_scale,
                            number_from_json(row[1], "released")});
    }
    return p;
}

} // namespace

PartialInput partial_input_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("formulation input must be a JSON object");
    const json& src = (j.contains("Input") && j["Input"].is_object()) ? j["Input"] : j;
    PartialInput out;
    for (auto it = src.begin(); it != src.end(); ++it) {
        auto idx = feature_index(it.key());
        if (!idx) continue;
        if (it.value().is_null()) continue;
        out.values[*idx] = number_from_json(it.value(), it.key());
    }
    return out;
}

PartialInput partial_input_from_text(std::string_view text) {
    static const std::regex pair(R"re("([^"]+)"\s*:\s*([^,\n}]+))re");
    PartialInput out;
    std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), pair); it != std::sregex_iterator(); ++it) {
        auto idx = feature_index((*it)[1].str());
        if (!idx) continue;
        try {
            out.values[*idx] = parse_scientific((*it)[2].str());
        } catch (const ValidationError&) {
        }
    }
    return out;
}

json to_json(const FormulationInput& in) {
    json j = json::object();
    const auto values = feature_vector(in);
    for (std::size_t i = 0; i < kFeatureCount; ++i) j[std::string(feature_keys()[i])] = values[i];
    return j;
}

json to_json(const FormulationRecord& r) {
    json j = to_json(r.features);
    j["id"] = r.id;
    json rows = json::array();
    for (const auto& p : r.profile.points) rows.push_back({p.time_hr, p.released_pct});
    j["profile"] = rows;
    j["provenance"] = std::string(to_string(r.provenance));
    j["source"] = r.source;
    return j;
}

FormulationRecord record_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("record must be a JSON object");
    FormulationRecord r;
    if (!j.contains("id") || !j["id"].is_string()) throw ValidationError("record lacks string \"id\"");
    r.id = j["id"].get<std::string>();
    r.features = partial_input_from_json(j).require(
        {feature::d50, feature::solubility, feature::diffusivity, feature::true_density,
         feature::ssa, feature::vol_eq});
    const json* profile = nullptr;
    for (const char* key : {"profile", "Output", "output"}) {
        if (j.contains(key)) {
            profile = &j[key];
            break;
        }
    }
    if (!profile) throw ValidationError("record '" + r.id + "' lacks a profile");
    r.profile = profile_from_json(*profile);
    if (j.contains("provenance")) r.provenance = provenance_from_string(j["provenance"].get<std::string>());
    if (j.contains("source")) r.source = j["source"].get<std::string>();
    r.validate();
    return r;
}

std::vector<FormulationRecord> records_from_text(std::string_view text) {
    std::vector<FormulationRecord> out;
    auto body = trim(text);
    if (body.empty()) return out;
    if (body.front() == '[') {
        json arr = json::parse(body);
        for (const auto& item : arr) out.push_back(record_from_json(item));
        return out;
    }
    // One object, or one object per line.
    try {
        json single = json::parse(body);
        out.push_back(record_from_json(single));
        return out;
    } catch (const json::parse_error&) {
    }
    std::size_t line_no = 0;
    for (const auto& line : split(body, '\n')) {
        ++line_no;
        auto l = trim(line);
        if (l.empty()) continue;
        try {
            out.push_back(record_from_json(json::parse(l)));
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<FormulationRecord> load_records_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open records file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return records_from_text(buffer.str());
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

} // namespace formu
