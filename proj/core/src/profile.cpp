#include "formu/profile.hpp"

#include "formu/errors.hpp"
#include "formu/prompt.hpp"
#include "formu/text_format.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace formu {

std::vector<double> DissolutionProfile::times() const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.time_hr);
    return out;
}

std::vector<double> DissolutionProfile::values() const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.released_pct);
    return out;
}

void check_profile(const DissolutionProfile& profile) {
    if (profile.empty()) throw ValidationError("profile has no points");
    if (profile.points.front().time_hr != 0.0 || profile.points.front().released_pct != 0.0) {
        throw ValidationError("profile must start at (0, 0)");
    }
    for (std::size_t i = 0; i < profile.size(); ++i) {
        const auto& p = profile.points[i];
        if (!(p.released_pct >= 0.0 && p.released_pct <= 100.0)) {
            throw ValidationError("released % out of [0, 100] at t = " + format_number(p.time_hr));
        }
        if (i > 0 && !(p.time_hr > profile.points[i - 1].time_hr)) {
            throw ValidationError("profile times must strictly increase");
        }
    }
}

double released_at(const DissolutionProfile& profile, double time_hr) {
    const auto& pts = profile.points;
    if (pts.empty()) throw DomainError("released_at: empty profile");
    if (time_hr < pts.front().time_hr || time_hr > pts.back().time_hr) {
        throw DomainError("released_at: t = " + format_number(time_hr) + " hr outside profile range");
    }
    auto it = std::lower_bound(pts.begin(), pts.end(), time_hr,
                               [](const ProfilePoint& p, double t) { return p.time_hr < t; });
    if (it->time_hr == time_hr) return it->released_pct;
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    double w = (time_hr - lo.time_hr) / (hi.time_hr - lo.time_hr);
    return lo.released_pct + w * (hi.released_pct - lo.released_pct);
}

std::vector<double> default_output_grid() {
    return {0.0, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
}

std::string profile_to_csv(const DissolutionProfile& profile) {
    std::string out = "time_hr,released_pct\n";
    for (const auto& p : profile.points) {
        out += format_number(p.time_hr);
        out += ',';
        out += format_number(p.released_pct);
        out += '\n';
    }
    return out;
}

DissolutionProfile profile_from_csv(std::string_view text) {
    DissolutionProfile profile;
    std::size_t line_no = 0;
    bool first_row = true;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto cells = split(line, ',');
        if (cells.size() != 2) {
            throw ParseError("profile CSV line " + std::to_string(line_no) + ": expected 2 columns");
        }
        try {
            profile.points.push_back({parse_number(cells[0]), parse_number(cells[1])});
        } catch (const ValidationError& e) {
            if (!first_row) {
                throw ParseError("profile CSV line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        first_row = false;
    }
    if (profile.empty()) throw EmptyProfileError("profile CSV has no data rows");
    return profile;
}

std::string profile_to_table_json(const DissolutionProfile& profile) {
    std::string out = "{\n  \"columns\": [\"Time (hr)\", \"Drug Released (%)\"],\n  \"data\": [\n";
    for (std::size_t i = 0; i < profile.size(); ++i) {
        const auto& p = profile.points[i];
        out += "    [" + format_number(p.time_hr) + ", " + format_number(p.released_pct) + "]";
        out += (i + 1 < profile.size()) ? ",\n" : "\n";
    }
    out += "  ]\n}";
    return out;
}

DissolutionProfile load_profile_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open profile file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::string text = buffer.str();
    auto body = trim(text);
    if (!body.empty() && (body.front() == '{' || body.front() == '`')) {
        return parse_profile_response(text).profile;
    }
    return profile_from_csv(text);
}

} // namespace formu
