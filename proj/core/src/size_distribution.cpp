#include "formu/size_distribution.hpp"

#include "formu/errors.hpp"
#include "formu/text_format.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace formu {

SizeDistribution::SizeDistribution(std::vector<SizeBin> bins) : bins_(std::move(bins)) {
    if (bins_.empty()) throw ValidationError("size distribution needs at least one bin");
    double total = 0.0;
    for (std::size_t i = 0; i < bins_.size(); ++i) {
        const auto& b = bins_[i];
        if (!(b.size_um > 0.0) || !std::isfinite(b.size_um)) {
            throw ValidationError("bin sizes must be positive and finite");
        }
        if (i > 0 && !(b.size_um > bins_[i - 1].size_um)) {
            throw ValidationError("bin sizes must strictly increase");
        }
        if (!(b.mass_fraction >= 0.0) || !std::isfinite(b.mass_fraction)) {
            throw ValidationError("mass fractions must be non-negative");
        }
        total += b.mass_fraction;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("mass fractions sum to " + format_number(total) + ", expected 1");
    }
}

SizeDistribution SizeDistribution::monodisperse(double size_um) {
    return SizeDistribution({{size_um, 1.0}});
}

SizeDistribution SizeDistribution::from_fractions(const std::vector<double>& sizes_um,
                                                  const std::vector<double>& fractions) {
    if (sizes_um.size() != fractions.size()) {
        throw ValidationError("sizes and fractions differ in length");
    }
    double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
    if (!(total > 0.0)) throw ValidationError("mass fractions sum to zero");
    std::vector<SizeBin> bins;
    bins.reserve(sizes_um.size());
    for (std::size_t i = 0; i < sizes_um.size(); ++i) {
        bins.push_back({sizes_um[i], fractions[i] / total});
    }
    return SizeDistribution(std::move(bins));
}

double SizeDistribution::d50_um() const {
    if (bins_.size() == 1) return bins_.front().size_um;
    std::vector<double> centre(bins_.size());
    double cum = 0.0;
    for (std::size_t i = 0; i < bins_.size(); ++i) {
        centre[i] = cum + 0.5 * bins_[i].mass_fraction;
        cum += bins_[i].mass_fraction;
    }
    if (0.5 <= centre.front()) return bins_.front().size_um;
    for (std::size_t i = 0; i + 1 < bins_.size(); ++i) {
        if (centre[i] <= 0.5 && 0.5 < centre[i + 1]) {
            double w = (0.5 - centre[i]) / (centre[i + 1] - centre[i]);
            double lo = std::log(bins_[i].size_um);
            double hi = std::log(bins_[i + 1].size_um);
            return std::exp(lo + w * (hi - lo));
        }
    }
    return bins_.back().size_um;
}

std::vector<double> SizeDistribution::sizes_um() const {
    std::vector<double> out;
    out.reserve(bins_.size());
    for (const auto& b : bins_) out.push_back(b.size_um);
    return out;
}

std::vector<double> SizeDistribution::fractions() const {
    std::vector<double> out;
    out.reserve(bins_.size());
    for (const auto& b : bins_) out.push_back(b.mass_fraction);
    return out;
}

namespace {

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

} // namespace

SizeDistribution psd_from_lognormal(double d50_um, double geo_sigma, std::size_t n_bins) {
    if (!(d50_um > 0.0)) throw ValidationError("d50 must be > 0");
    if (!(geo_sigma >= 1.0)) throw ValidationError("geo_sigma must be >= 1");
    if (n_bins < 1) throw ValidationError("n_bins must be >= 1");
    if (geo_sigma == 1.0 || n_bins == 1) return SizeDistribution::monodisperse(d50_um);

    const double log_sigma = std::log(geo_sigma);
    const double span = 3.0;
    std::vector<double> z(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i) {
        z[i] = -span + 2.0 * span * static_cast<double>(i) / static_cast<double>(n_bins - 1);
    }
    std::vector<double> sizes(n_bins);
    std::vector<double> fractions(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i) {
        sizes[i] = d50_um * std::exp(z[i] * log_sigma);
        // Outer bins absorb the tails so no mass is dropped.
        double lo = (i == 0) ? 0.0 : normal_cdf(0.5 * (z[i - 1] + z[i]));
        double hi = (i + 1 == n_bins) ? 1.0 : normal_cdf(0.5 * (z[i] + z[i + 1]));
        fractions[i] = hi - lo;
    }
    return SizeDistribution::from_fractions(sizes, fractions);
}

} // namespace formu
