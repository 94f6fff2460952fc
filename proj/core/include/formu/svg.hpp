#pragma once

#include "formu/profile.hpp"

#include <string>
#include <vector>

namespace formu {

struct PlotSeries {
    std::string label;
    DissolutionProfile profile;
    bool markers = false;
};

/// Released-% vs time line chart, one polyline per series plus a legend.
std::string render_profile_svg(const std::vector<PlotSeries>& series, const std::string& title);

} // namespace formu
