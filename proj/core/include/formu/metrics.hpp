#pragma once

#include "formu/profile.hpp"

#include <vector>

namespace formu {

/// Reference and predicted values on one common time grid.
struct AlignedPair {
    std::vector<double> times_hr;
    std::vector<double> reference;
    std::vector<double> predicted;

    std::size_t size() const noexcept { return times_hr.size(); }
};

/// Grid = reference times inside the overlap of both time ranges; predicted
/// values are linearly interpolated onto it, never extrapolated. Both inputs
/// are sorted by time first. Throws AlignmentError when fewer than two grid
/// points remain.
AlignedPair align_profiles(const DissolutionProfile& reference, const DissolutionProfile& predicted);

/// (1/n) sum (y_i - yhat_i)^2
double mse(const AlignedPair& pair);

/// 1 - SS_res / SS_tot; throws DegenerateReferenceError if the reference is constant.
double r_squared(const AlignedPair& pair);

} // namespace formu
