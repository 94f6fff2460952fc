#pragma once

#include "formu/dissolution.hpp"
#include "formu/profile.hpp"
#include "formu/size_distribution.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace formu {

enum class Parameterization { lognormal, free_bins };

std::string_view to_string(Parameterization p);
Parameterization parameterization_from_string(std::string_view s);

struct Bounds {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const { return v >= lo && v <= hi; }
    double clamp(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
};

struct DesignSpec {
    DissolutionProfile target;
    DrugSubstance drug;
    ParticleMorphology morph;
    DissolutionConditions conditions;
    Parameterization parameterization = Parameterization::lognormal;
    /// Bins of the forward model (lognormal) or number of free bins.
    std::size_t n_bins = 50;

    Bounds d50_bounds{1.0, 1000.0};     ///< um
    Bounds sigma_bounds{1.0, 3.0};      ///< geometric standard deviation
    Bounds size_bounds{1.0, 1000.0};    ///< free-bins size grid, um

    double initial_d50_um = 100.0;
    double initial_sigma = 1.5;
    double regularization_weight = 1e-2;

    std::size_t starts = 4;
    std::uint64_t seed = 0;
    std::size_t max_iterations = 200;
    /// Objective (%^2) below which the fit counts as converged outright.
    double objective_tolerance = 1e-3;
    SolverOptions solver;

    /// Throws ConfigError for inverted bounds or an initial guess outside
    /// them, ValidationError for an invalid target or drug.
    void validate() const;
};

struct DesignResult {
    SizeDistribution psd = SizeDistribution::monodisperse(1.0);
    DissolutionProfile achieved;
    double residual_mse = 0.0;
    double objective = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    /// Set for the lognormal parameterization.
    std::optional<double> d50_um;
    std::optional<double> geo_sigma;
    /// Best objective after each accepted iteration of the winning start,
    /// starting with the value at its initial point.
    std::vector<double> objective_history;
    std::size_t start_index = 0;
};

/// MSE between the target and the simulated profile, plus the roughness
/// penalty (sum of squared second differences of bin fractions) for free bins.
double objective(const SizeDistribution& psd, const DesignSpec& spec);

/// Geometric size grid used by the free-bins parameterization.
std::vector<double> free_bin_sizes(const DesignSpec& spec);

/// The distribution an optimizer starts from: the initial lognormal guess,
/// projected onto the free-bins grid when that parameterization is chosen.
SizeDistribution initial_psd(const DesignSpec& spec);

/// Fits a size distribution to spec.target. Never throws on non-convergence;
/// the best point found is returned with converged = false.
DesignResult design_psd(const DesignSpec& spec);

/// Plain-text summary: parameters, derived SSA and volume-equivalent size,
/// residual, and one achieved-vs-target row per target time.
std::string design_report(const DesignResult& result, const DesignSpec& spec);
nlohmann::json design_report_json(const DesignResult& result, const DesignSpec& spec);

/// One known (distribution, measured profile) pair used for calibration.
struct CalibrationCase {
    SizeDistribution psd;
    DissolutionProfile measured;
};

struct Calibration {
    double velocity_factor = 0.0;
    double mean_mse = 0.0;   ///< mean over cases, %^2
};

/// Golden-section search in log(velocity_factor) for the value minimizing the
/// mean MSE of the simulated against the measured profiles.
Calibration calibrate_velocity_factor(std::span<const CalibrationCase> cases, const DrugSubstance& drug,
                                      const ParticleMorphology& morph,
                                      const DissolutionConditions& conditions,
                                      Bounds bounds = {1e-4, 1.0}, const SolverOptions& solver = {});

} // namespace formu
