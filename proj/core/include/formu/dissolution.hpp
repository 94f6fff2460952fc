#pragma once

#include "formu/profile.hpp"
#include "formu/size_distribution.hpp"

#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace formu {

/// Intrinsic drug constants in record units.
struct DrugSubstance {
    std::string name;
    double c_sat_mg_ml = 0.0;        ///< solubility; numerically equal to kg/m^3
    double diffusivity_m2_s = 0.0;
    double true_density_g_ml = 0.0;

    double true_density_kg_m3() const { return true_density_g_ml * 1000.0; }
    void validate() const;
};

/// Shape factors: surface = psi_a * x^2, volume = psi_v * x^3.
struct ParticleMorphology {
    double aspect_ratio = 1.0;
    double roundness = 1.0;
    double psi_a = std::numbers::pi;
    double psi_v = std::numbers::pi / 6.0;

    static ParticleMorphology sphere() { return {}; }

    /// Sphere factors with psi_a scaled by the prolate-spheroid surface
    /// correction for `aspect_ratio`. Roundness is carried but inert.
    static ParticleMorphology from_shape(double aspect_ratio, double roundness);

    void validate() const;
};

/// Surface of a prolate spheroid of the given aspect ratio divided by the
/// surface of the sphere with the same volume. 1 at aspect ratio 1.
double prolate_surface_factor(double aspect_ratio);

struct DissolutionConditions {
    double medium_volume_ml = 900.0;
    double temperature_c = 37.0;
    double ph = 7.2;
    double paddle_rpm = 50.0;
    double dose_mg = 10.0;
    double fluid_density_kg_m3 = 993.0;
    double fluid_viscosity_pa_s = 7.0e-4;
    double velocity_factor = 0.1;   ///< slip velocity as a fraction of paddle tip speed
    bool sink_override = false;     ///< hold bulk concentration at zero

    void validate() const;
};

inline constexpr double kUspPaddleRadiusM = 0.037;

struct SolverOptions {
    double rel_tol = 1e-6;
    /// Absolute tolerance on x^2 as a fraction of each bin's initial x^2.
    double abs_tol = 1e-6;
    double max_step_s = 120.0;
    double min_step_s = 1e-9;
    std::size_t max_steps = 2'000'000;
    double impeller_radius_m = kUspPaddleRadiusM;
    /// When set, replaces the Sherwood correlation by a constant.
    std::optional<double> pinned_sherwood;
};

/// Sh = 2 + 0.52 Re^0.52 Sc^(1/3).
double sherwood(double re, double sc);

/// k = Sh * D / x, in m/s.
double mass_transfer_coefficient(double sh, double diffusivity_m2_s, double x_m);

struct FlowGroups {
    double reynolds = 0.0;
    double schmidt = 0.0;
};

/// Re from the particle slip velocity (velocity_factor x paddle tip speed),
/// Sc from the medium properties.
FlowGroups reynolds_schmidt(const DissolutionConditions& conditions, double x_m,
                            double diffusivity_m2_s,
                            double impeller_radius_m = kUspPaddleRadiusM);

/// Nernst-Brunner shrinking rate dx/dt = -(k psi_a / (rho_s psi_v)) (C_sat - C_b), m/s.
double shrink_rate(double x_m, double k_m_s, const ParticleMorphology& morph,
                   const DrugSubstance& drug, double c_b_mg_ml);

struct SimulationState {
    double time_s = 0.0;
    std::vector<double> sizes_um;
    double dissolved_mg = 0.0;
    double remaining_mg = 0.0;
    double bulk_mg_ml = 0.0;
};

struct SimulationTrace {
    DissolutionProfile profile;
    /// Time at which each bin reached zero size, NaN if it never did.
    std::vector<double> extinction_time_s;
    /// Time the last bin dissolved, NaN if solid remains at the end of the grid.
    double complete_time_s = 0.0;
    std::size_t accepted_steps = 0;
    std::size_t rejected_steps = 0;
};

using StepObserver = std::function<void(const SimulationState&)>;

/// Integrates the polydisperse shrinking-particle model and samples percent
/// released on `grid_hr` (must start at 0 and strictly increase).
DissolutionProfile simulate_dissolution(const DrugSubstance& drug,
                                        const ParticleMorphology& morph,
                                        const SizeDistribution& psd,
                                        const DissolutionConditions& conditions,
                                        const std::vector<double>& grid_hr,
                                        const SolverOptions& options = {});

/// Same as simulate_dissolution, additionally reporting extinction times and
/// calling `observer` after every accepted step.
SimulationTrace simulate_dissolution_traced(const DrugSubstance& drug,
                                            const ParticleMorphology& morph,
                                            const SizeDistribution& psd,
                                            const DissolutionConditions& conditions,
                                            const std::vector<double>& grid_hr,
                                            const SolverOptions& options = {},
                                            const StepObserver& observer = {});

struct DerivedMetrics {
    double ssa_m2_g = 0.0;
    double vol_eq_size_um = 0.0;
};

/// Surface-to-mass ratio and mass-weighted volume-equivalent diameter.
DerivedMetrics derived_metrics(const SizeDistribution& psd, const ParticleMorphology& morph,
                               const DrugSubstance& drug);

} // namespace formu
