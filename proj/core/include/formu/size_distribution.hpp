#pragma once

#include <cstddef>
#include <vector>

namespace formu {

struct SizeBin {
    double size_um = 0.0;
    double mass_fraction = 0.0;
};

/// Binned mass-fraction particle size distribution.
///
/// Sizes strictly increase and are positive; fractions are non-negative and
/// sum to one within 1e-9. Construction validates, so every instance is valid.
class SizeDistribution {
public:
    explicit SizeDistribution(std::vector<SizeBin> bins);

    static SizeDistribution monodisperse(double size_um);

    /// Normalizes `fractions` to sum to one before validating.
    static SizeDistribution from_fractions(const std::vector<double>& sizes_um,
                                           const std::vector<double>& fractions);

    const std::vector<SizeBin>& bins() const noexcept { return bins_; }
    std::size_t size() const noexcept { return bins_.size(); }

    /// Mass median. Each bin's mass is centred on its size; the 0.5 crossing
    /// is interpolated linearly in log-size between neighbouring bins.
    double d50_um() const;

    std::vector<double> sizes_um() const;
    std::vector<double> fractions() const;

private:
    std::vector<SizeBin> bins_;
};

/// Log-normal mass distribution discretized on `n_bins` geometric bins
/// spanning d50 * geo_sigma^[-3, 3]. geo_sigma == 1 or n_bins == 1 gives a
/// single bin at d50.
SizeDistribution psd_from_lognormal(double d50_um, double geo_sigma, std::size_t n_bins);

} // namespace formu
