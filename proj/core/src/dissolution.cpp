#include "formu/dissolution.hpp"

#include "formu/errors.hpp"
#include "formu/text_format.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace formu {

void DrugSubstance::validate() const {
    if (!(c_sat_mg_ml > 0.0)) throw ValidationError("solubility must be > 0 mg/mL");
    if (!(diffusivity_m2_s > 0.0)) throw ValidationError("diffusivity must be > 0 m^2/s");
    if (!(true_density_g_ml > 0.0)) throw ValidationError("true density must be > 0 g/mL");
}

double prolate_surface_factor(double aspect_ratio) {
    if (!(aspect_ratio >= 1.0)) throw ValidationError("aspect ratio must be >= 1");
    if (aspect_ratio == 1.0) return 1.0;
    // Semi-axes a = R AR^(2/3), b = R AR^(-1/3) keep a b^2 = R^3.
    const double e = std::sqrt(1.0 - 1.0 / (aspect_ratio * aspect_ratio));
    return 0.5 * std::pow(aspect_ratio, -2.0 / 3.0) * (1.0 + aspect_ratio * std::asin(e) / e);
}

ParticleMorphology ParticleMorphology::from_shape(double aspect_ratio, double roundness) {
    ParticleMorphology m;
    m.aspect_ratio = aspect_ratio;
    m.roundness = roundness;
    m.psi_a = std::numbers::pi * prolate_surface_factor(aspect_ratio);
    m.validate();
    return m;
}

void ParticleMorphology::validate() const {
    if (!(aspect_ratio >= 1.0)) throw ValidationError("aspect ratio must be >= 1");
    if (!(roundness > 0.0 && roundness <= 1.0)) throw ValidationError("roundness must be in (0, 1]");
    if (!(psi_a > 0.0) || !(psi_v > 0.0)) throw ValidationError("shape factors must be > 0");
    if (psi_v / psi_a > (1.0 / 6.0) * (1.0 + 1e-9)) {
        throw ValidationError("psi_v / psi_a exceeds the sphere bound 1/6");
    }
}

void DissolutionConditions::validate() const {
    if (!(medium_volume_ml > 0.0)) throw ValidationError("medium volume must be > 0 mL");
    if (!(dose_mg > 0.0)) throw ValidationError("dose must be > 0 mg");
    if (!(velocity_factor > 0.0 && velocity_factor <= 1.0)) {
        throw ValidationError("velocity factor must be in (0, 1]");
    }
    if (!(paddle_rpm >= 0.0)) throw ValidationError("paddle speed must be >= 0 rpm");
    if (!(fluid_density_kg_m3 > 0.0)) throw ValidationError("fluid density must be > 0");
    if (!(fluid_viscosity_pa_s > 0.0)) throw ValidationError("fluid viscosity must be > 0");
}

double sherwood(double re, double sc) {
    if (!(re >= 0.0)) throw DomainError("sherwood: Reynolds number must be >= 0");
    if (!(sc > 0.0)) throw DomainError("sherwood: Schmidt number must be > 0");
    return 2.0 + 0.52 * std::pow(re, 0.52) * std::cbrt(sc);
}

double mass_transfer_coefficient(double sh, double diffusivity_m2_s, double x_m) {
    if (x_m == 0.0) throw SingularityError("mass transfer coefficient is singular at x = 0");
    if (!(sh > 0.0) || !(diffusivity_m2_s > 0.0) || !(x_m > 0.0)) {
        throw DomainError("mass_transfer_coefficient: inputs must be > 0");
    }
    return sh * diffusivity_m2_s / x_m;
}

FlowGroups reynolds_schmidt(const DissolutionConditions& c, double x_m, double diffusivity_m2_s,
                            double impeller_radius_m) {
    if (!(x_m > 0.0)) throw DomainError("reynolds_schmidt: particle size must be > 0");
    const double tip_speed = 2.0 * std::numbers::pi * c.paddle_rpm / 60.0 * impeller_radius_m;
    const double slip = c.velocity_factor * tip_speed;
    return {c.fluid_density_kg_m3 * slip * x_m / c.fluid_viscosity_pa_s,
            c.fluid_viscosity_pa_s / (c.fluid_density_kg_m3 * diffusivity_m2_s)};
}

double shrink_rate(double x_m, double k_m_s, const ParticleMorphology& morph,
                   const DrugSubstance& drug, double c_b_mg_ml) {
    (void)x_m;
    if (c_b_mg_ml > drug.c_sat_mg_ml) {
        throw SaturationError("bulk concentration " + format_number(c_b_mg_ml) +
                              " mg/mL exceeds solubility " + format_number(drug.c_sat_mg_ml));
    }
    if (c_b_mg_ml < 0.0) throw DomainError("bulk concentration must be >= 0");
    // mg/mL == kg/m^3, so the driving force is already SI.
    const double driving = drug.c_sat_mg_ml - c_b_mg_ml;
    return -(k_m_s * morph.psi_a / (drug.true_density_kg_m3() * morph.psi_v)) * driving;
}

namespace {

void check_grid(const std::vector<double>& grid_hr) {
    if (grid_hr.empty() || grid_hr.front() != 0.0) {
        throw ValidationError("output grid must start at 0 hr");
    }
    for (std::size_t i = 1; i < grid_hr.size(); ++i) {
        if (!(grid_hr[i] > grid_hr[i - 1]) || !std::isfinite(grid_hr[i])) {
            throw ValidationError("output grid must strictly increase");
        }
    }
}

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                 b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

/// Right-hand side in s = x^2 (m^2) for every bin; inactive bins have zero rate.
class ShrinkingPopulation {
public:
    ShrinkingPopulation(const DrugSubstance& drug, const ParticleMorphology& morph,
                        const SizeDistribution& psd, const DissolutionConditions& conditions,
                        const SolverOptions& options)
        : drug_(drug), morph_(morph), conditions_(conditions), options_(options) {
        const auto& bins = psd.bins();
        s0_.reserve(bins.size());
        mass0_.reserve(bins.size());
        active_.reserve(bins.size());
        for (const auto& b : bins) {
            const double x = b.size_um * 1e-6;
            s0_.push_back(x * x);
            mass0_.push_back(b.mass_fraction * conditions.dose_mg);
            active_.push_back(b.mass_fraction > 0.0 ? 1 : 0);
        }
        schmidt_ = conditions.fluid_viscosity_pa_s /
                   (conditions.fluid_density_kg_m3 * drug.diffusivity_m2_s);
        const double tip = 2.0 * std::numbers::pi * conditions.paddle_rpm / 60.0 *
                           options.impeller_radius_m;
        re_per_metre_ = conditions.fluid_density_kg_m3 * conditions.velocity_factor * tip /
                        conditions.fluid_viscosity_pa_s;
        surface_rate_at_zero_ = -2.0 * sherwood_at(0.0) * drug.diffusivity_m2_s * morph.psi_a /
                                (drug.true_density_kg_m3() * morph.psi_v);
    }

    std::size_t size() const { return s0_.size(); }
    const std::vector<double>& initial() const { return s0_; }
    bool active(std::size_t i) const { return active_[i] != 0; }
    void deactivate(std::size_t i) { active_[i] = 0; }
    double initial_mass(std::size_t i) const { return mass0_[i]; }

    double remaining_mg(const std::vector<double>& s) const {
        double rem = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!active_[i] || s[i] <= 0.0) continue;
            const double r = s[i] / s0_[i];
            rem += mass0_[i] * r * std::sqrt(r);
        }
        return rem;
    }

    double dissolved_mg(const std::vector<double>& s) const {
        return std::max(0.0, conditions_.dose_mg - remaining_mg(s));
    }

    double bulk_mg_ml(double dissolved) const {
        if (conditions_.sink_override) return 0.0;
        return dissolved / conditions_.medium_volume_ml;
    }

    /// Fills `rate` with ds/dt; returns the bulk concentration used.
    double rhs(const std::vector<double>& s, std::vector<double>& rate) const {
        const double cb = std::min(bulk_mg_ml(dissolved_mg(s)), drug_.c_sat_mg_ml);
        const double driving_ratio = (drug_.c_sat_mg_ml - cb) / drug_.c_sat_mg_ml;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!active_[i]) {
                rate[i] = 0.0;
                continue;
            }
            const double x = s[i] > 0.0 ? std::sqrt(s[i]) : 0.0;
            if (x > 0.0) {
                const double k = mass_transfer_coefficient(sherwood_at(x), drug_.diffusivity_m2_s, x);
                rate[i] = 2.0 * x * shrink_rate(x, k, morph_, drug_, cb);
            } else {
                rate[i] = surface_rate_at_zero_ * driving_ratio * drug_.c_sat_mg_ml;
            }
        }
        return cb;
    }

private:
    double sherwood_at(double x_m) const {
        if (options_.pinned_sherwood) return *options_.pinned_sherwood;
        return sherwood(re_per_metre_ * x_m, schmidt_);
    }

    const DrugSubstance& drug_;
    const ParticleMorphology& morph_;
    const DissolutionConditions& conditions_;
    const SolverOptions& options_;
    std::vector<double> s0_;
    std::vector<double> mass0_;
    std::vector<char> active_;
    double schmidt_ = 0.0;
    double re_per_metre_ = 0.0;
    double surface_rate_at_zero_ = 0.0;
};

} // namespace

SimulationTrace simulate_dissolution_traced(const DrugSubstance& drug,
                                            const ParticleMorphology& morph,
                                            const SizeDistribution& psd,
                                            const DissolutionConditions& conditions,
                                            const std::vector<double>& grid_hr,
                                            const SolverOptions& options,
                                            const StepObserver& observer) {
    drug.validate();
    morph.validate();
    conditions.validate();
    check_grid(grid_hr);
    if (options.pinned_sherwood && !(*options.pinned_sherwood > 0.0)) {
        throw ValidationError("pinned Sherwood number must be > 0");
    }

    ShrinkingPopulation pop(drug, morph, psd, conditions, options);
    const std::size_t n = pop.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    SimulationTrace trace;
    trace.extinction_time_s.assign(n, nan);
    trace.profile.points.reserve(grid_hr.size());

    const double capacity_mg = conditions.sink_override
                                   ? std::numeric_limits<double>::infinity()
                                   : drug.c_sat_mg_ml * conditions.medium_volume_ml;
    const double cap_pct = 100.0 * std::min(1.0, capacity_mg / conditions.dose_mg);

    std::vector<double> s = pop.initial();
    std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), s_new(n);

    double last_pct = 0.0;
    auto released_pct = [&](double dissolved) {
        double pct = std::clamp(100.0 * dissolved / conditions.dose_mg, 0.0, cap_pct);
        last_pct = std::max(last_pct, pct);
        return last_pct;
    };

    auto notify = [&](double t) {
        if (!observer) return;
        SimulationState state;
        state.time_s = t;
        state.sizes_um.resize(n);
        for (std::size_t i = 0; i < n; ++i) state.sizes_um[i] = std::sqrt(std::max(s[i], 0.0)) * 1e6;
        state.remaining_mg = pop.remaining_mg(s);
        state.dissolved_mg = conditions.dose_mg - state.remaining_mg;
        state.bulk_mg_ml = pop.bulk_mg_ml(state.dissolved_mg);
        observer(state);
    };

    auto any_active = [&] {
        for (std::size_t i = 0; i < n; ++i)
            if (pop.active(i)) return true;
        return false;
    };

    trace.profile.points.push_back({0.0, 0.0});
    notify(0.0);

    double t = 0.0;
    pop.rhs(s, k1);

    // Initial step: a small fraction of the fastest bin's linearized lifetime.
    double h = options.max_step_s;
    for (std::size_t i = 0; i < n; ++i) {
        if (pop.active(i) && k1[i] < 0.0) h = std::min(h, 0.01 * s[i] / -k1[i]);
    }
    h = std::max(h, options.min_step_s);

    std::size_t steps = 0;
    for (std::size_t g = 1; g < grid_hr.size(); ++g) {
        const double t_target = grid_hr[g] * 3600.0;
        while (t < t_target) {
            if (!any_active()) break;
            // Nothing left to drive dissolution: state is frozen.
            bool moving = false;
            for (std::size_t i = 0; i < n; ++i) moving = moving || k1[i] != 0.0;
            if (!moving) break;

            if (++steps > options.max_steps) {
                throw IntegrationError("step limit reached at t = " + format_number(t) + " s (step " +
                                       std::to_string(steps) + ")");
            }
            const double h_step = std::min(h, t_target - t);
            const bool hits_target = h_step == t_target - t;

            for (std::size_t i = 0; i < n; ++i) tmp[i] = s[i] + h_step * a21 * k1[i];
            pop.rhs(tmp, k2);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = s[i] + h_step * (a31 * k1[i] + a32 * k2[i]);
            pop.rhs(tmp, k3);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = s[i] + h_step * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
            pop.rhs(tmp, k4);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = s[i] + h_step * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
            pop.rhs(tmp, k5);
            for (std::size_t i = 0; i < n; ++i)
                tmp[i] = s[i] + h_step * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                                          a65 * k5[i]);
            pop.rhs(tmp, k6);
            for (std::size_t i = 0; i < n; ++i)
                s_new[i] = s[i] + h_step * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] +
                                            b6 * k6[i]);
            pop.rhs(s_new, k7);

            double err = 0.0;
            std::size_t worst = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!pop.active(i)) continue;
                const double e = h_step * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                                           e6 * k6[i] + e7 * k7[i]);
                const double scale = options.abs_tol * pop.initial()[i] +
                                     options.rel_tol * std::max(std::abs(s[i]), std::abs(s_new[i]));
                const double ratio = std::abs(e) / scale;
                if (ratio > err) {
                    err = ratio;
                    worst = i;
                }
            }

            bool saturated = false;
            if (!conditions.sink_override) {
                const double cb_new = pop.bulk_mg_ml(pop.dissolved_mg(s_new));
                saturated = cb_new > drug.c_sat_mg_ml * (1.0 + 1e-12);
            }

            if (err > 1.0 || saturated || !std::isfinite(err)) {
                ++trace.rejected_steps;
                const double shrink = (std::isfinite(err) && err > 1.0)
                                          ? std::max(0.1, 0.9 * std::pow(err, -0.2))
                                          : 0.5;
                h = h_step * shrink;
                if (h < options.min_step_s) {
                    throw IntegrationError("step size underflow at t = " + format_number(t) +
                                           " s (step " + std::to_string(steps) + ", bin " +
                                           std::to_string(worst) + ")");
                }
                continue;
            }

            ++trace.accepted_steps;
            for (std::size_t i = 0; i < n; ++i) {
                if (pop.active(i) && s_new[i] <= 0.0) {
                    const double frac = s[i] / (s[i] - s_new[i]);
                    trace.extinction_time_s[i] = t + h_step * frac;
                    s_new[i] = 0.0;
                    k7[i] = 0.0;
                    pop.deactivate(i);
                }
            }
            s.swap(s_new);
            k1.swap(k7);
            t = hits_target ? t_target : t + h_step;

            const double grow = err > 0.0 ? std::min(5.0, 0.9 * std::pow(err, -0.2)) : 5.0;
            const double proposal = h_step * grow;
            // Do not let a shortened step that landed on a grid time throttle the next one.
            h = std::min(options.max_step_s, hits_target ? std::max(h, proposal) : proposal);
            notify(t);
        }
        trace.profile.points.push_back({grid_hr[g], released_pct(pop.dissolved_mg(s))});
    }

    double complete = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (pop.initial_mass(i) <= 0.0) continue;
        if (std::isnan(trace.extinction_time_s[i])) {
            complete = nan;
            break;
        }
        complete = std::max(complete, trace.extinction_time_s[i]);
    }
    trace.complete_time_s = complete;
    return trace;
}

DissolutionProfile simulate_dissolution(const DrugSubstance& drug, const ParticleMorphology& morph,
                                        const SizeDistribution& psd,
                                        const DissolutionConditions& conditions,
                                        const std::vector<double>& grid_hr,
                                        const SolverOptions& options) {
    return simulate_dissolution_traced(drug, morph, psd, conditions, grid_hr, options).profile;
}

DerivedMetrics derived_metrics(const SizeDistribution& psd, const ParticleMorphology& morph,
                               const DrugSubstance& drug) {
    const double rho = drug.true_density_kg_m3();
    const double eq_factor = std::cbrt(6.0 * morph.psi_v / std::numbers::pi);
    DerivedMetrics out;
    for (const auto& b : psd.bins()) {
        const double x = b.size_um * 1e-6;
        out.ssa_m2_g += b.mass_fraction * morph.psi_a / (morph.psi_v * rho * x) / 1000.0;
        out.vol_eq_size_um += b.mass_fraction * eq_factor * b.size_um;
    }
    return out;
}

} // namespace formu
