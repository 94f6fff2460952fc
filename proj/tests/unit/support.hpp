#pragma once

#include "formu/dissolution.hpp"
#include "formu/formulation.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace formu::testing {

inline std::string fixture(const std::string& relative) {
    return (std::filesystem::path(FORMU_FIXTURES_DIR) / relative).string();
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Hydrochlorothiazide constants as printed with the example input.
inline DrugSubstance hctz() { return {"HCTZ", 0.45, 7.5e-10, 1.512}; }

/// Seeded draws for property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    }
    double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

    DrugSubstance drug() {
        return {"gen", log_uniform(0.05, 5.0), log_uniform(2e-10, 2e-9), uniform(1.1, 2.0)};
    }

    FormulationInput input() {
        FormulationInput in;
        in.d50_um = log_uniform(5.0, 300.0);
        in.aspect_ratio = 1.0;
        in.roundness = 1.0;
        in.solubility_mg_ml = log_uniform(0.05, 5.0);
        in.diffusivity_m2_s = log_uniform(2e-10, 2e-9);
        in.true_density_g_ml = uniform(1.1, 2.0);
        in.ssa_m2_g = log_uniform(0.05, 3.0);
        in.vol_eq_um = log_uniform(1.0, 20.0);
        return in;
    }

private:
    std::mt19937_64 rng_;
};

/// Record whose profile comes from the simulator on the default grid.
inline FormulationRecord simulated_record(const std::string& id, const FormulationInput& in) {
    FormulationRecord r;
    r.id = id;
    r.features = in;
    r.profile = simulate_dissolution(in.drug(), in.morphology(), psd_from_lognormal(in.d50_um, 1.5, 50),
                                     DissolutionConditions{}, default_output_grid());
    r.provenance = Provenance::simulated;
    r.source = "test";
    return r;
}

} // namespace formu::testing
