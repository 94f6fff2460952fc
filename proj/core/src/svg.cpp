#include "formu/svg.hpp"

#include "formu/text_format.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace formu {

namespace {

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace

std::string render_profile_svg(const std::vector<PlotSeries>& series, const std::string& title) {
    constexpr double width = 640, height = 420;
    constexpr double left = 60, right = 160, top = 40, bottom = 50;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;

    double t_max = 0.0;
    for (const auto& s : series) {
        for (const auto& p : s.profile.points) t_max = std::max(t_max, p.time_hr);
    }
    if (t_max <= 0.0) t_max = 1.0;
    t_max = std::ceil(t_max);

    auto px = [&](double t) { return left + plot_w * t / t_max; };
    auto py = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 100.0) / 100.0); };

    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_number(width) +
                      "\" height=\"" + format_number(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + format_number(left) + "\" y=\"24\" font-size=\"14\">" + escape(title) + "</text>\n";

    for (int v = 0; v <= 100; v += 20) {
        const double y = py(v);
        out += "<line x1=\"" + format_fixed(left, 1) + "\" y1=\"" + format_fixed(y, 1) + "\" x2=\"" +
               format_fixed(left + plot_w, 1) + "\" y2=\"" + format_fixed(y, 1) + "\" stroke=\"#ddd\"/>\n";
        out += "<text x=\"" + format_fixed(left - 8, 1) + "\" y=\"" + format_fixed(y + 4, 1) +
               "\" text-anchor=\"end\">" + std::to_string(v) + "</text>\n";
    }
    const int ticks = static_cast<int>(t_max);
    for (int t = 0; t <= ticks; ++t) {
        const double x = px(t);
        out += "<text x=\"" + format_fixed(x, 1) + "\" y=\"" + format_fixed(top + plot_h + 18, 1) +
               "\" text-anchor=\"middle\">" + std::to_string(t) + "</text>\n";
    }
    out += "<rect x=\"" + format_fixed(left, 1) + "\" y=\"" + format_fixed(top, 1) + "\" width=\"" +
           format_fixed(plot_w, 1) + "\" height=\"" + format_fixed(plot_h, 1) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    out += "<text x=\"" + format_fixed(left + plot_w / 2, 1) + "\" y=\"" + format_fixed(height - 10, 1) +
           "\" text-anchor=\"middle\">Time (hr)</text>\n";
    out += "<text transform=\"translate(16," + format_fixed(top + plot_h / 2, 1) +
           ") rotate(-90)\" text-anchor=\"middle\">Drug Released (%)</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* colour = kPalette[i % kPalette.size()];
        std::string pts;
        for (const auto& p : s.profile.points) {
            if (!pts.empty()) pts += ' ';
            pts += format_fixed(px(p.time_hr), 2) + "," + format_fixed(py(p.released_pct), 2);
        }
        out += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"" +
               pts + "\"/>\n";
        if (s.markers) {
            for (const auto& p : s.profile.points) {
                out += "<circle cx=\"" + format_fixed(px(p.time_hr), 2) + "\" cy=\"" +
                       format_fixed(py(p.released_pct), 2) + "\" r=\"3\" fill=\"" + colour + "\"/>\n";
            }
        }
        const double ly = top + 14 + 18 * static_cast<double>(i);
        out += "<line x1=\"" + format_fixed(left + plot_w + 12, 1) + "\" y1=\"" + format_fixed(ly - 4, 1) +
               "\" x2=\"" + format_fixed(left + plot_w + 32, 1) + "\" y2=\"" + format_fixed(ly - 4, 1) +
               "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + format_fixed(left + plot_w + 38, 1) + "\" y=\"" + format_fixed(ly, 1) + "\">" +
               escape(s.label) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

} // namespace formu
