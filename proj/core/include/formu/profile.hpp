#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace formu {

struct ProfilePoint {
    double time_hr = 0.0;
    double released_pct = 0.0;

    friend bool operator==(const ProfilePoint&, const ProfilePoint&) = default;
};

/// Percent drug released against time (hours).
///
/// The struct itself is permissive so that parsed LLM output can be held and
/// inspected; `check_profile` enforces the strict invariants used for
/// simulator output and stored records.
struct DissolutionProfile {
    std::vector<ProfilePoint> points;

    std::vector<double> times() const;
    std::vector<double> values() const;
    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }

    friend bool operator==(const DissolutionProfile&, const DissolutionProfile&) = default;
};

/// Throws ValidationError unless times strictly increase, the first point is
/// (0, 0) and every value lies in [0, 100].
void check_profile(const DissolutionProfile& profile);

/// Linear interpolation; throws DomainError outside the time range.
double released_at(const DissolutionProfile& profile, double time_hr);

/// {0, 0.25, 0.5, 0.75, 1, 2, 3, 4, 5, 6} hr.
std::vector<double> default_output_grid();

/// `time_hr,released_pct` header plus one row per point.
std::string profile_to_csv(const DissolutionProfile& profile);
DissolutionProfile profile_from_csv(std::string_view text);

/// The `{"columns": [...], "data": [...]}` table layout used in prompts and
/// mock responses.
std::string profile_to_table_json(const DissolutionProfile& profile);

/// Reads either CSV or the JSON table layout, chosen by content.
DissolutionProfile load_profile_file(const std::string& path);

} // namespace formu
