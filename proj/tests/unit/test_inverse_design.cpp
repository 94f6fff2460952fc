#include "formu/dissolution.hpp"
#include "formu/errors.hpp"
#include "formu/metrics.hpp"
#include "formu/inverse_design.hpp"
#include "formu/text_format.hpp"

#include "support.hpp"

#include <doctest.h>

#include <chrono>

using namespace formu;
using formu::testing::Gen;
using formu::testing::fixture;
using formu::testing::hctz;

namespace {

DissolutionProfile forward(double d50, double sigma, const DissolutionConditions& cond = {}) {
    return simulate_dissolution(hctz(), {}, psd_from_lognormal(d50, sigma, 50), cond, default_output_grid());
}

DesignSpec round_trip_spec() {
    DesignSpec spec;
    spec.target = forward(120.0, 1.6);
    spec.drug = hctz();
    spec.initial_d50_um = 300.0;
    spec.initial_sigma = 1.2;
    spec.regularization_weight = 0.0;
    return spec;
}

// First time the piecewise-linear profile reaches pct, or +inf.
double time_to(const DissolutionProfile& p, double pct) {
    double t0 = 0.0, v0 = 0.0;
    for (const auto& pt : p.points) {
        if (pt.released_pct >= pct) {
            return pt.released_pct == v0 ? pt.time_hr : t0 + (pct - v0) * (pt.time_hr - t0) / (pt.released_pct - v0);
        }
        t0 = pt.time_hr;
        v0 = pt.released_pct;
    }
    return std::numeric_limits<double>::infinity();
}

} // namespace

TEST_CASE("objective is zero at the generating distribution") {
    auto spec = round_trip_spec();
    CHECK(objective(psd_from_lognormal(120.0, 1.6, 50), spec) <= 1e-4);
    CHECK(objective(psd_from_lognormal(60.0, 1.6, 50), spec) > 1.0);

    spec.parameterization = Parameterization::free_bins;
    spec.n_bins = 20;
    std::vector<SizeBin> bins;
    for (double s : free_bin_sizes(spec)) bins.push_back({s, 1.0 / 20});
    const auto uniform = SizeDistribution(bins);
    CHECK(objective(uniform, spec) > objective(psd_from_lognormal(120.0, 1.6, 50), spec));
}

TEST_CASE("free-bin grid is geometric over the size bounds") {
    DesignSpec spec;
    spec.n_bins = 7;
    spec.size_bounds = {2.0, 128.0};
    const auto s = free_bin_sizes(spec);
    REQUIRE(s.size() == 7);
    CHECK(s.front() == doctest::Approx(2.0));
    CHECK(s.back() == doctest::Approx(128.0));
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] / s[i - 1] == doctest::Approx(2.0));
}

TEST_CASE("a target simulated from the initial guess is a fixed point") {
    DesignSpec spec;
    spec.drug = hctz();
    spec.target = forward(spec.initial_d50_um, spec.initial_sigma);
    const auto r = design_psd(spec);
    CHECK(r.iterations <= 1);
    CHECK(r.residual_mse < 1e-12);
    CHECK(r.converged);
    REQUIRE(r.d50_um);
    CHECK(*r.d50_um == doctest::Approx(spec.initial_d50_um));
    CHECK(design_report(r, spec).find("residual MSE (%^2)      0.000000\n") != std::string::npos);
}

TEST_CASE("lognormal round trip recovers d50") {
    const auto spec = round_trip_spec();
    const auto r = design_psd(spec);
    REQUIRE(r.d50_um);
    CHECK(std::abs(*r.d50_um - 120.0) / 120.0 < 0.15);
    CHECK(r.residual_mse < 1.0);
    CHECK(r.converged);
    CHECK(r.residual_mse == doctest::Approx(mse(align_profiles(spec.target, r.achieved))));
    CHECK(r.achieved == simulate_dissolution(spec.drug, spec.morph, r.psd, spec.conditions, spec.target.times()));
    CHECK(spec.d50_bounds.contains(*r.d50_um));
    CHECK(spec.sigma_bounds.contains(*r.geo_sigma));

    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
        CHECK(r.objective_history[i] <= r.objective_history[i - 1]);
    }

    SUBCASE("report") {
        const auto text = design_report(r, spec);
        const auto m = derived_metrics(r.psd, spec.morph, spec.drug);
        CHECK(text.find(format_fixed(m.ssa_m2_g, 6)) != std::string::npos);
        CHECK(text.find(format_fixed(m.vol_eq_size_um, 4)) != std::string::npos);
        for (double t : spec.target.times()) {
            CHECK(text.find("\n" + format_number(t)) != std::string::npos);
        }
        const auto j = design_report_json(r, spec);
        CHECK(j["ssa_m2_g"].get<double>() == m.ssa_m2_g);
        CHECK(j["profile"].size() == spec.target.size());
    }
}

TEST_CASE("identical spec and seed give identical results") {
    auto spec = round_trip_spec();
    spec.seed = 42;
    spec.max_iterations = 60;
    const auto a = design_psd(spec);
    const auto b = design_psd(spec);
    REQUIRE(a.psd.size() == b.psd.size());
    for (std::size_t i = 0; i < a.psd.size(); ++i) {
        CHECK(a.psd.bins()[i].size_um == b.psd.bins()[i].size_um);
        CHECK(a.psd.bins()[i].mass_fraction == b.psd.bins()[i].mass_fraction);
    }
    CHECK(a.achieved == b.achieved);
    CHECK(a.residual_mse == b.residual_mse);
    CHECK(a.objective_history == b.objective_history);
    CHECK(a.start_index == b.start_index);
}

TEST_CASE("round trips across the identifiable range") {
    Gen g(7);
    for (int i = 0; i < 3; ++i) {
        const double d50 = g.log_uniform(20.0, 300.0);
        const double sigma = g.uniform(1.2, 2.0);
        DesignSpec spec;
        spec.drug = hctz();
        spec.target = forward(d50, sigma);
        spec.regularization_weight = 0.0;
        spec.seed = static_cast<std::uint64_t>(i);
        const auto r = design_psd(spec);
        INFO("d50 " << d50 << " sigma " << sigma);
        CHECK(r.residual_mse < 1.0);
    }
}

TEST_CASE("infeasible configurations are rejected") {
    auto spec = round_trip_spec();
    spec.d50_bounds = {500.0, 100.0};
    CHECK_THROWS_AS(design_psd(spec), ConfigError);
    spec = round_trip_spec();
    spec.initial_d50_um = 5000.0;
    CHECK_THROWS_AS(design_psd(spec), ConfigError);
    spec = round_trip_spec();
    spec.sigma_bounds = {0.5, 2.0};
    CHECK_THROWS_AS(design_psd(spec), ConfigError);
    spec = round_trip_spec();
    spec.target.points.clear();
    CHECK_THROWS(design_psd(spec));
    CHECK(parameterization_from_string("free_bins") == Parameterization::free_bins);
    CHECK_THROWS_AS(parameterization_from_string("spline"), ConfigError);
}

TEST_CASE("free-bins design stays feasible and improves on its start") {
    auto spec = round_trip_spec();
    spec.parameterization = Parameterization::free_bins;
    spec.n_bins = 12;
    spec.max_iterations = 25;
    spec.regularization_weight = 1e-2;
    const auto start = objective(initial_psd(spec), spec);
    const auto r = design_psd(spec);
    CHECK(r.objective <= start);
    CHECK_FALSE(r.d50_um.has_value());
    double total = 0.0;
    for (const auto& b : r.psd.bins()) {
        CHECK(b.mass_fraction >= 0.0);
        CHECK(spec.size_bounds.contains(b.size_um));
        total += b.mass_fraction;
    }
    CHECK(total == doctest::Approx(1.0));
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
        CHECK(r.objective_history[i] <= r.objective_history[i - 1]);
    }
    CHECK(design_report(r, spec).find("mass_fraction") != std::string::npos);
}

TEST_CASE("calibrated design of the 45 um example") {
    const auto records = load_records_file(fixture("data/hctz_records.json"));
    REQUIRE(records.size() == 3);
    std::vector<CalibrationCase> cases;
    for (std::size_t i = 1; i < records.size(); ++i) {
        cases.push_back({psd_from_lognormal(records[i].features.d50_um, 1.5, 50), records[i].profile});
    }
    const auto cal = calibrate_velocity_factor(cases, hctz(), {}, {});
    CHECK(cal.velocity_factor >= 1e-4);
    CHECK(cal.velocity_factor <= 1.0);

    DesignSpec spec;
    spec.target = records[0].profile;
    spec.drug = hctz();
    spec.conditions.velocity_factor = cal.velocity_factor;
    const auto r = design_psd(spec);
    REQUIRE(r.d50_um);
    CHECK(*r.d50_um >= 20.0);
    CHECK(*r.d50_um <= 90.0);
    CHECK(time_to(r.achieved, 85.0) <= 1.0);
}
