#include "formu/metrics.hpp"

#include "formu/errors.hpp"

#include <algorithm>

namespace formu {

namespace {

DissolutionProfile sorted(DissolutionProfile p) {
    std::stable_sort(p.points.begin(), p.points.end(),
                     [](const ProfilePoint& a, const ProfilePoint& b) { return a.time_hr < b.time_hr; });
    return p;
}

} // namespace

AlignedPair align_profiles(const DissolutionProfile& reference_in, const DissolutionProfile& predicted_in) {
    if (reference_in.size() < 2 || predicted_in.size() < 2) {
        throw AlignmentError("alignment needs at least two points in each profile");
    }
    const auto reference = sorted(reference_in);
    const auto predicted = sorted(predicted_in);
    const double lo = std::max(reference.points.front().time_hr, predicted.points.front().time_hr);
    const double hi = std::min(reference.points.back().time_hr, predicted.points.back().time_hr);
    if (lo > hi) throw AlignmentError("profiles do not overlap in time");

    AlignedPair pair;
    for (const auto& p : reference.points) {
        if (p.time_hr < lo || p.time_hr > hi) continue;
        pair.times_hr.push_back(p.time_hr);
        pair.reference.push_back(p.released_pct);
        pair.predicted.push_back(released_at(predicted, p.time_hr));
    }
    if (pair.size() < 2) throw AlignmentError("fewer than two reference points inside the overlap");
    return pair;
}

double mse(const AlignedPair& pair) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pair.size(); ++i) {
        const double d = pair.reference[i] - pair.predicted[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pair.size());
}

double r_squared(const AlignedPair& pair) {
    double mean = 0.0;
    for (double y : pair.reference) mean += y;
    mean /= static_cast<double>(pair.size());
    double ss_tot = 0.0;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < pair.size(); ++i) {
        ss_tot += (pair.reference[i] - mean) * (pair.reference[i] - mean);
        ss_res += (pair.reference[i] - pair.predicted[i]) * (pair.reference[i] - pair.predicted[i]);
    }
    if (ss_tot == 0.0) throw DegenerateReferenceError("reference profile has zero variance");
    return 1.0 - ss_res / ss_tot;
}

} // namespace formu
