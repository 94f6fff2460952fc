#include "formu/prompt.hpp"

#include "formu/errors.hpp"
#include "formu/text_format.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <optional>

namespace formu {

using nlohmann::json;

namespace {

constexpr std::string_view kRole =
    "Hi, You are an expert on the Drug development.\n"
    "You can design the particle size distribution for customized dissolution profiles,\n"
    "or predict the Drug Released (%) based on given physical proerties such as particle size "
    "distribution.";

constexpr std::string_view kBackground =
    "You have a bunch of experience on that and\n"
    "have studied those commonly used emperical diffusion models\n"
    "such as Nernst-Brunner translation dissolution and radial diffusion dynamics from\n"
    "(1) Salish, K., So, C., Jeong, S. H., Hou, H. H. & Mao, C. A Refined Thin-Film Model for Drug "
    "Dissolution\n"
    "Considering Radial Diffusion - Simulating Powder Dissolution. Pharm Res 41, 947-958 (2024).\n"
    "https://doi.org/10.1007/s11095-024-03696-0\n"
    "(2) Djukaj, S., Kolar, J., Lehocky, R., Zadrazil, A. & Stepanek, F. Design of particle size "
    "distribution for\n"
    "custom dissolution profiles by solving the inverse problem. Powder Technology: An International "
    "Journal\n"
    "on the Science and Technology of Wet and Dry Particulate Systems, 395 (2022).";

constexpr std::string_view kForwardRequest =
    "1. Your customer will give you several fundamental parameters and based on the given parameters,\n"
    "2. you need to either predict the Drug Released (%) for the customer or\n"
    "3. you need to design the physical properties of the drugs and optimize the conditions based on "
    "given\n"
    "dissolution profile (dissolution rate)";

// Wording of the inverse task is this project's own.
constexpr std::string_view kInverseRequest =
    "1. Your customer will give you the drug constants and a target dissolution profile,\n"
    "2. you need to design the physical properties of the drugs (particle size distribution, D50,\n"
    "specific surface area and volume-based equivalent particle size) so that the powder reproduces\n"
    "the given dissolution profile (dissolution rate)";

constexpr std::string_view kOutputIntro =
    "please generate a table with columns: [Time(min), Drug Released (%)].\n";

constexpr std::string_view kNernstBrunner =
    "1. Nernst-Brunner equation = {\n"
    "\n"
    "$$\\frac{dx}{dt} = -\\frac{k \\psi_A}{\\rho_s \\psi_v} (C_{\\text{sat}} - C_b)$$\n"
    "\n"
    "Where  $k = \\frac{Sh}{D} \\cdot x$ ,\n"
    " $Sh = 2 + 0.52 Re^{0.52} Sc^{1/3}$\n"
    "}";

constexpr std::array<std::string_view, 4> kFixedRules{
    "Final dissolution \xE2\x89\xA5" "85% within 60 min (USP compliance).",
    "Please Do not make up recommendations without scientific basis.",
    "Only provide optimizations that have clear scientific reasoning.",
    "Do not make up the answer randomly if you may not be able to provide the correct answer."};

const DissolutionProfile& output_format_example() {
    static const DissolutionProfile example{{{0, 0},
                                             {0.25, 85},
                                             {0.5, 87},
                                             {0.75, 88},
                                             {1, 89},
                                             {2, 89},
                                             {3, 89},
                                             {4, 88},
                                             {5, 87},
                                             {6, 87}}};
    return example;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// "7.5x 10^(-10)" style; the mantissa is the shortest round-trip form.
std::string format_power_of_ten(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::scientific);
    if (ec != std::errc{}) throw DomainError("cannot format " + format_number(value));
    std::string sci(buf, ptr);
    auto e = sci.find('e');
    return sci.substr(0, e) + "x 10^(" + std::to_string(std::stoi(sci.substr(e + 1))) + ")";
}

std::string render_input_lines(const FormulationInput& in, bool include_particle_fields) {
    std::string out;
    if (include_particle_fields) {
        out += "    \"Mean Particle Size, D50\" : " + format_number(in.d50_um) + ",\n";
    }
    out += "    \"Aspect ratio\" : " + format_min_decimals(in.aspect_ratio, 1) + ",\n";
    out += "    \"Roundness\": " + format_min_decimals(in.roundness, 1) + ",\n";
    out += "    \"solubility of drug (mg/mL)\" : " + format_number(in.solubility_mg_ml) + ",\n";
    out += "    \"Diffusion coefficient of drug (m^2/s)\" : " + format_power_of_ten(in.diffusivity_m2_s) +
           ",\n";
    out += "    \"True Density of drug (g/mL)\" : " + format_number(in.true_density_g_ml) + ",\n";
    if (include_particle_fields) {
        out += "    \"Specific surface area (m^2/g)\" : " + format_min_decimals(in.ssa_m2_g, 2) + ",\n";
        out += "    \"volume-based equivalent particle size (micrometer)\" : " +
               format_min_decimals(in.vol_eq_um, 2) + ",\n";
    }
    return out;
}

std::string examples_body(PromptStrategy strategy, std::span<const FormulationRecord> examples) {
    switch (strategy) {
    case PromptStrategy::zs:
    case PromptStrategy::zs_cot:
        return std::string(kNoExamples);
    case PromptStrategy::fs:
    case PromptStrategy::fs_cot:
        if (examples.empty()) {
            throw PreconditionError(std::string(to_string(strategy)) + " prompt needs at least one example");
        }
        return "### Few-shot Examples ###\n" + render_example_blocks(examples);
    case PromptStrategy::rag:
        if (examples.empty()) {
            throw PreconditionError("RAG prompt needs at least one retrieved record");
        }
        return "### Retrieved Examples ###\n" + render_example_blocks(examples);
    }
    return {};
}

std::string constraints_body(PromptStrategy strategy, std::span<const std::string> extra) {
    std::string out(kNernstBrunner);
    int n = 2;
    for (auto rule : kFixedRules) out += "\n" + std::to_string(n++) + ". " + std::string(rule);
    for (const auto& rule : extra) out += "\n" + std::to_string(n++) + ". " + rule;
    if (is_chain_of_thought(strategy)) out += "\n" + std::string(kChainOfThoughtLine);
    return out;
}

PromptBundle assemble(PromptStrategy strategy, std::vector<std::pair<PromptSection, std::string>> sections) {
    PromptBundle bundle;
    bundle.strategy = strategy;
    for (std::size_t i = 0; i < sections.size(); ++i) {
        if (i > 0) bundle.rendered += "\n";
        bundle.rendered += "### " + std::string(section_title(sections[i].first)) + ": ###\n";
        bundle.rendered += sections[i].second;
        if (!sections[i].second.empty() && sections[i].second.back() != '\n') bundle.rendered += "\n";
    }
    bundle.sections = std::move(sections);
    return bundle;
}

// Finds the end of a JSON object starting at `open`, honouring strings.
std::optional<std::size_t> matching_brace(std::string_view text, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i;
        }
    }
    return std::nullopt;
}

std::optional<double> cell_number(const json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        try {
            return parse_number(v.get<std::string>());
        } catch (const ValidationError&) {
        }
    }
    return std::nullopt;
}

} // namespace

std::string_view to_string(PromptStrategy s) {
    switch (s) {
    case PromptStrategy::zs: return "ZS";
    case PromptStrategy::zs_cot: return "ZS_CoT";
    case PromptStrategy::fs: return "FS";
    case PromptStrategy::fs_cot: return "FS_CoT";
    case PromptStrategy::rag: return "RAG";
    }
    return "?";
}

PromptStrategy strategy_from_string(std::string_view text) {
    std::string key = lower(trim(text));
    std::replace(key.begin(), key.end(), '-', '_');
    for (auto s : kAllStrategies) {
        if (key == lower(to_string(s))) return s;
    }
    throw ValidationError("unknown prompt strategy '" + std::string(text) +
                          "' (expected zs, zs_cot, fs, fs_cot or rag)");
}

bool is_chain_of_thought(PromptStrategy s) {
    return s == PromptStrategy::zs_cot || s == PromptStrategy::fs_cot;
}

bool needs_examples(PromptStrategy s) {
    return s == PromptStrategy::fs || s == PromptStrategy::fs_cot || s == PromptStrategy::rag;
}

std::string_view section_title(PromptSection s) {
    switch (s) {
    case PromptSection::role: return "Role";
    case PromptSection::background: return "Background";
    case PromptSection::request: return "Request";
    case PromptSection::input_format: return "Input Format";
    case PromptSection::output_format: return "Output Format";
    case PromptSection::examples: return "Examples";
    case PromptSection::constraints: return "Constraints";
    }
    return "?";
}

std::string_view PromptBundle::section(PromptSection s) const {
    for (const auto& [id, body] : sections) {
        if (id == s) return body;
    }
    return {};
}

std::string render_input_block(const FormulationInput& input) {
    return "{\n  Input = {\n" + render_input_lines(input, true) + "  }\n}";
}

std::string render_example_blocks(std::span<const FormulationRecord> records) {
    std::string out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        out += "### Example" + std::to_string(i + 1) + ": ###\n";
        out += "### Input : ###\n";
        out += render_input_block(records[i].features) + "\n";
        out += "### Output : ###\n";
        out += profile_to_table_json(records[i].profile) + "\n";
    }
    return out;
}

std::string render_key_metrics(const std::vector<double>& grid_hr) {
    std::string out;
    for (std::size_t i = 0; i < grid_hr.size(); ++i) {
        if (i > 0) out += ", ";
        out += "{t_" + format_number(grid_hr[i]) + "}";
    }
    return out;
}

PromptBundle build_prompt(PromptStrategy strategy, const FormulationInput& input,
                          std::span<const FormulationRecord> examples,
                          std::span<const std::string> extra_constraints) {
    std::string output_format(kOutputIntro);
    output_format += "Include key metrics: " + render_key_metrics(default_output_grid()) + "\n";
    output_format += "where t refers to the abbreviation of \"Time (hrs)\"\n\n";
    output_format += profile_to_table_json(output_format_example());

    return assemble(strategy, {
                                  {PromptSection::role, std::string(kRole)},
                                  {PromptSection::background, std::string(kBackground)},
                                  {PromptSection::request, std::string(kForwardRequest)},
                                  {PromptSection::input_format, render_input_block(input)},
                                  {PromptSection::output_format, output_format},
                                  {PromptSection::examples, examples_body(strategy, examples)},
                                  {PromptSection::constraints, constraints_body(strategy, extra_constraints)},
                              });
}

PromptBundle build_inverse_prompt(PromptStrategy strategy, const DissolutionProfile& target,
                                  const FormulationInput& drug_constants,
                                  std::span<const FormulationRecord> examples,
                                  std::span<const std::string> extra_constraints) {
    if (target.empty()) throw PreconditionError("inverse prompt needs a non-empty target profile");
    check_profile(target);

    std::string input = "{\n  Input = {\n" + render_input_lines(drug_constants, false) + "  }\n}\n\n";
    input += "Target dissolution profile:\n" + profile_to_table_json(target);

    std::string output_format =
        "please generate a table with columns: [Property, Value] covering:\n";
    for (auto key : verbose_feature_keys()) output_format += "\"" + std::string(key) + "\"\n";
    output_format += "and state the particle size distribution (D50 and geometric standard deviation).";

    return assemble(strategy, {
                                  {PromptSection::role, std::string(kRole)},
                                  {PromptSection::background, std::string(kBackground)},
                                  {PromptSection::request, std::string(kInverseRequest)},
                                  {PromptSection::input_format, input},
                                  {PromptSection::output_format, output_format},
                                  {PromptSection::examples, examples_body(strategy, examples)},
                                  {PromptSection::constraints, constraints_body(strategy, extra_constraints)},
                              });
}

json ParseReport::to_json() const {
    json j;
    j["source_unit"] = source_unit;
    j["code_fenced"] = code_fenced;
    j["surrounding_text"] = surrounding_text;
    j["reordered"] = reordered;
    json clamps = json::array();
    for (const auto& c : clamped) {
        clamps.push_back({{"index", c.index}, {"time_hr", c.time_hr}, {"original", c.original},
                          {"clamped", c.clamped}});
    }
    j["clamped"] = clamps;
    j["warnings"] = warnings;
    return j;
}

ParsedProfile parse_profile_response(std::string_view text) {
    std::optional<json> table;
    std::size_t begin = 0;
    std::size_t end = 0;
    for (std::size_t pos = text.find('{'); pos != std::string_view::npos; pos = text.find('{', pos + 1)) {
        auto close = matching_brace(text, pos);
        if (!close) continue;
        json candidate = json::parse(text.substr(pos, *close - pos + 1), nullptr, false);
        if (candidate.is_discarded() || !candidate.is_object()) continue;
        if (candidate.contains("columns") && candidate.contains("data")) {
            table = std::move(candidate);
            begin = pos;
            end = *close + 1;
            break;
        }
    }
    if (!table) throw ParseError("no JSON table with \"columns\" and \"data\" found in response");

    ParsedProfile out;
    auto& report = out.report;
    report.code_fenced = text.find("```") != std::string_view::npos;
    auto outside = [](std::string_view s) {
        for (char c : s) {
            if (!std::isspace(static_cast<unsigned char>(c)) && c != '`') return true;
        }
        return false;
    };
    std::string_view before = text.substr(0, begin);
    // Ignore a language tag directly after an opening fence.
    if (auto fence = before.rfind("```"); fence != std::string_view::npos) {
        auto tag_end = before.find('\n', fence);
        std::string_view tag = before.substr(fence + 3, tag_end == std::string_view::npos ? 0 : tag_end - fence - 3);
        if (lower(trim(tag)) == "json") before = before.substr(0, fence);
    }
    report.surrounding_text = outside(before) || outside(text.substr(end));

    double time_scale = 1.0;
    const json& columns = (*table)["columns"];
    if (columns.is_array() && !columns.empty() && columns[0].is_string()) {
        std::string head = lower(columns[0].get<std::string>());
        if (head.find("min") != std::string::npos) {
            time_scale = 1.0 / 60.0;
            report.source_unit = "min";
            report.warnings.push_back("time column in minutes; converted to hours");
        } else if (head.find("hr") == std::string::npos && head.find("hour") == std::string::npos) {
            report.warnings.push_back("time column unit not recognised; assuming hours");
        }
    } else {
        report.warnings.push_back("missing column names; assuming [time (hr), released (%)]");
    }

    const json& data = (*table)["data"];
    if (!data.is_array()) throw ParseError("\"data\" is not an array");
    if (data.empty()) throw EmptyProfileError("response table has no data rows");

    for (std::size_t i = 0; i < data.size(); ++i) {
        const json& row = data[i];
        std::optional<double> t;
        std::optional<double> v;
        if (row.is_array() && row.size() >= 2) {
            t = cell_number(row[0]);
            v = cell_number(row[1]);
        }
        if (!t || !v) {
            report.warnings.push_back("row " + std::to_string(i) + " is not a numeric [time, released] pair; skipped");
            continue;
        }
        ProfilePoint p{*t * time_scale, *v};
        if (p.released_pct < 0.0 || p.released_pct > 100.0) {
            double c = std::clamp(p.released_pct, 0.0, 100.0);
            report.clamped.push_back({i, p.time_hr, p.released_pct, c});
            report.warnings.push_back("row " + std::to_string(i) + " released " +
                                      format_number(p.released_pct) + "% clamped to " + format_number(c));
            p.released_pct = c;
        }
        out.profile.points.push_back(p);
    }
    if (out.profile.empty()) throw EmptyProfileError("response table has no usable rows");

    auto& pts = out.profile.points;
    auto by_time = [](const ProfilePoint& a, const ProfilePoint& b) { return a.time_hr < b.time_hr; };
    if (!std::is_sorted(pts.begin(), pts.end(), by_time)) {
        std::stable_sort(pts.begin(), pts.end(), by_time);
        report.reordered = true;
        report.warnings.push_back("rows re-sorted by time");
    }
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].time_hr == pts[i - 1].time_hr) {
            throw DuplicateTimeError("duplicate time " + format_number(pts[i].time_hr) + " hr in response");
        }
    }
    return out;
}

std::vector<ProfileFinding> validate_profile(const DissolutionProfile& profile) {
    std::vector<ProfileFinding> findings;
    if (profile.empty()) {
        findings.push_back({"initial_condition", Severity::fatal, "profile is empty"});
        return findings;
    }
    const auto& first = profile.points.front();
    if (first.time_hr != 0.0 || first.released_pct != 0.0) {
        findings.push_back({"initial_condition", Severity::fatal,
                            "first point is (" + format_number(first.time_hr) + ", " +
                                format_number(first.released_pct) + "), expected (0, 0)"});
    }
    for (const auto& p : profile.points) {
        if (p.released_pct < 0.0 || p.released_pct > 100.0) {
            findings.push_back({"value_range", Severity::fatal,
                                "released " + format_number(p.released_pct) + "% at t = " +
                                    format_number(p.time_hr) + " hr is outside [0, 100]"});
        }
    }
    bool usp_ok = false;
    for (const auto& p : profile.points) {
        if (p.time_hr <= 1.0 && p.released_pct >= 85.0) usp_ok = true;
    }
    if (!usp_ok) {
        findings.push_back({"usp_85_within_1h", Severity::advisory,
                            "no point with >= 85% released within 1 hr"});
    }
    double peak = profile.points.front().released_pct;
    for (const auto& p : profile.points) {
        if (peak - p.released_pct > 5.0) {
            findings.push_back({"non_monotonic", Severity::advisory,
                                "released drops " + format_number(peak - p.released_pct) +
                                    " points below an earlier value at t = " + format_number(p.time_hr) +
                                    " hr"});
        }
        peak = std::max(peak, p.released_pct);
    }
    return findings;
}

bool has_fatal(const std::vector<ProfileFinding>& findings) {
    return std::any_of(findings.begin(), findings.end(),
                       [](const ProfileFinding& f) { return f.severity == Severity::fatal; });
}

PartialInput input_from_prompt(std::string_view rendered) {
    const std::string open = "### " + std::string(section_title(PromptSection::input_format)) + ": ###";
    auto start = rendered.find(open);
    if (start == std::string_view::npos) throw MockParseError("prompt has no Input Format section");
    start += open.size();
    auto stop = rendered.find("\n### ", start);
    return partial_input_from_text(rendered.substr(start, stop == std::string_view::npos ? stop : stop - start));
}

} // namespace formu
