#include "formu/inverse_design.hpp"

#include "formu/errors.hpp"
#include "formu/text_format.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace formu {

using nlohmann::json;

std::string_view to_string(Parameterization p) {
    return p == Parameterization::lognormal ? "lognormal" : "free_bins";
}

Parameterization parameterization_from_string(std::string_view s) {
    if (s == "lognormal") return Parameterization::lognormal;
    if (s == "free_bins" || s == "free-bins") return Parameterization::free_bins;
    throw ConfigError("unknown parameterization '" + std::string(s) + "' (lognormal, free_bins)");
}

namespace {

void check_bounds(const Bounds& b, const char* name) {
    if (!(std::isfinite(b.lo) && std::isfinite(b.hi) && b.lo < b.hi)) {
        throw ConfigError(std::string(name) + " bounds need lo < hi");
    }
}

} // namespace

void DesignSpec::validate() const {
    check_profile(target);
    if (target.size() < 2) throw ValidationError("target profile needs at least two points");
    drug.validate();
    morph.validate();
    conditions.validate();
    check_bounds(d50_bounds, "d50");
    check_bounds(sigma_bounds, "geo_sigma");
    check_bounds(size_bounds, "size");
    if (!(d50_bounds.lo > 0.0)) throw ConfigError("d50 lower bound must be > 0");
    if (!(sigma_bounds.lo >= 1.0)) throw ConfigError("geo_sigma lower bound must be >= 1");
    if (!(size_bounds.lo > 0.0)) throw ConfigError("size lower bound must be > 0");
    if (!d50_bounds.contains(initial_d50_um)) throw ConfigError("initial d50 outside its bounds");
    if (!sigma_bounds.contains(initial_sigma)) throw ConfigError("initial geo_sigma outside its bounds");
    if (n_bins < 1) throw ConfigError("n_bins must be >= 1");
    if (parameterization == Parameterization::free_bins && n_bins < 3) {
        throw ConfigError("free_bins needs at least 3 bins");
    }
    if (!(regularization_weight >= 0.0)) throw ConfigError("regularization weight must be >= 0");
    if (starts < 1) throw ConfigError("starts must be >= 1");
    if (!(objective_tolerance >= 0.0)) throw ConfigError("objective tolerance must be >= 0");
}

namespace {

double roughness(const std::vector<double>& f) {
    double r = 0.0;
    for (std::size_t i = 1; i + 1 < f.size(); ++i) {
        const double d2 = f[i + 1] - 2.0 * f[i] + f[i - 1];
        r += d2 * d2;
    }
    return r;
}

struct Evaluation {
    DissolutionProfile achieved;
    double residual = 0.0;
    double objective = 0.0;
};

Evaluation evaluate(const SizeDistribution& psd, const DesignSpec& spec) {
    Evaluation e;
    e.achieved = simulate_dissolution(spec.drug, spec.morph, psd, spec.conditions, spec.target.times(),
                                      spec.solver);
    double sum = 0.0;
    for (std::size_t i = 0; i < spec.target.size(); ++i) {
        const double d = spec.target.points[i].released_pct - e.achieved.points[i].released_pct;
        sum += d * d;
    }
    e.residual = sum / static_cast<double>(spec.target.size());
    e.objective = e.residual;
    if (spec.parameterization == Parameterization::free_bins) {
        e.objective += spec.regularization_weight * roughness(psd.fractions());
    }
    return e;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Lognormal mass fractions on a fixed size grid, bins split at geometric midpoints.
std::vector<double> lognormal_on_grid(const std::vector<double>& sizes, double d50, double sigma) {
    const std::size_t n = sizes.size();
    std::vector<double> f(n, 0.0);
    const double ls = std::log(std::max(sigma, 1.0 + 1e-9));
    for (std::size_t i = 0; i < n; ++i) {
        const double lo = i == 0 ? 0.0 : normal_cdf(std::log(std::sqrt(sizes[i - 1] * sizes[i]) / d50) / ls);
        const double hi = i + 1 == n ? 1.0 : normal_cdf(std::log(std::sqrt(sizes[i] * sizes[i + 1]) / d50) / ls);
        f[i] = std::max(hi - lo, 0.0);
    }
    const double total = std::accumulate(f.begin(), f.end(), 0.0);
    if (!(total > 0.0)) {
        // Whole mass beyond the grid on one side: put it in the nearest bin.
        const auto nearest = d50 < sizes.front() ? 0 : n - 1;
        std::fill(f.begin(), f.end(), 0.0);
        f[nearest] = 1.0;
    }
    return f;
}

// Euclidean projection onto the probability simplex.
std::vector<double> project_simplex(std::vector<double> v) {
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        cumulative += u[i];
        const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
        if (u[i] - t > 0.0) theta = t;
    }
    for (auto& x : v) x = std::max(x - theta, 0.0);
    const double total = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= total;
    return v;
}

// Below this the fit is exact to solver precision and iterating is pointless.
constexpr double kExactFit = 1e-12;

bool stalled(const std::vector<double>& history) {
    if (history.size() < 6) return false;
    const double before = history[history.size() - 6];
    const double now = history.back();
    return before - now <= 1e-6 * std::max(std::abs(before), 1e-300);
}

struct StartResult {
    SizeDistribution psd = SizeDistribution::monodisperse(1.0);
    Evaluation eval;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> history;
    std::optional<double> d50;
    std::optional<double> sigma;
};

// Nelder-Mead over (ln d50, ln sigma), every vertex clamped into the box.
StartResult run_lognormal(const DesignSpec& spec, double d50, double sigma) {
    using Vec = std::array<double, 2>;
    const Vec lo{std::log(spec.d50_bounds.lo), std::log(spec.sigma_bounds.lo)};
    const Vec hi{std::log(spec.d50_bounds.hi), std::log(spec.sigma_bounds.hi)};

    auto clamp = [&](Vec y) {
        for (int k = 0; k < 2; ++k) y[k] = std::clamp(y[k], lo[k], hi[k]);
        return y;
    };
    auto psd_of = [&](const Vec& y) {
        return psd_from_lognormal(std::exp(y[0]), std::max(std::exp(y[1]), 1.0), spec.n_bins);
    };
    struct Vertex {
        Vec y;
        Evaluation eval;
    };
    auto make = [&](const Vec& y) {
        const Vec c = clamp(y);
        return Vertex{c, evaluate(psd_of(c), spec)};
    };

    std::vector<Vertex> simplex;
    simplex.push_back(make({std::log(d50), std::log(sigma)}));

    StartResult out;
    out.history.push_back(simplex[0].eval.objective);
    if (simplex[0].eval.objective < spec.objective_tolerance) {
        out.psd = psd_of(simplex[0].y);
        out.eval = simplex[0].eval;
        out.converged = true;
        out.d50 = std::exp(simplex[0].y[0]);
        out.sigma = std::max(std::exp(simplex[0].y[1]), 1.0);
        return out;
    }
    for (int k = 0; k < 2; ++k) {
        Vec y = simplex[0].y;
        const double step = 0.15 * (hi[k] - lo[k]);
        y[k] = (y[k] + step <= hi[k]) ? y[k] + step : y[k] - step;
        simplex.push_back(make(y));
    }

    auto by_objective = [](const Vertex& a, const Vertex& b) { return a.eval.objective < b.eval.objective; };
    std::stable_sort(simplex.begin(), simplex.end(), by_objective);

    while (out.iterations < spec.max_iterations) {
        const Vec centroid{(simplex[0].y[0] + simplex[1].y[0]) / 2.0, (simplex[0].y[1] + simplex[1].y[1]) / 2.0};
        const auto& worst = simplex[2];
        auto along = [&](double t) {
            return Vec{centroid[0] + t * (centroid[0] - worst.y[0]), centroid[1] + t * (centroid[1] - worst.y[1])};
        };

        auto reflected = make(along(1.0));
        if (reflected.eval.objective < simplex[0].eval.objective) {
            auto expanded = make(along(2.0));
            simplex[2] = expanded.eval.objective < reflected.eval.objective ? expanded : reflected;
        } else if (reflected.eval.objective < simplex[1].eval.objective) {
            simplex[2] = reflected;
        } else {
            const bool outside = reflected.eval.objective < worst.eval.objective;
            auto contracted = make(along(outside ? 0.5 : -0.5));
            const double bar = outside ? reflected.eval.objective : worst.eval.objective;
            if (contracted.eval.objective < bar) {
                simplex[2] = contracted;
            } else {
                for (std::size_t v = 1; v < simplex.size(); ++v) {
                    simplex[v] = make({(simplex[0].y[0] + simplex[v].y[0]) / 2.0,
                                       (simplex[0].y[1] + simplex[v].y[1]) / 2.0});
                }
            }
        }
        std::stable_sort(simplex.begin(), simplex.end(), by_objective);
        ++out.iterations;
        out.history.push_back(simplex[0].eval.objective);

        double diameter = 0.0;
        for (std::size_t v = 1; v < simplex.size(); ++v) {
            diameter = std::max(diameter, std::hypot(simplex[v].y[0] - simplex[0].y[0],
                                                     simplex[v].y[1] - simplex[0].y[1]));
        }
        // Keep refining below the tolerance; identifiability of d50 needs it.
        if (simplex[0].eval.objective < kExactFit || (stalled(out.history) && diameter < 1e-6)) break;
    }
    out.converged = simplex[0].eval.objective < spec.objective_tolerance || stalled(out.history);

    out.psd = psd_of(simplex[0].y);
    out.eval = simplex[0].eval;
    out.d50 = std::exp(simplex[0].y[0]);
    out.sigma = std::max(std::exp(simplex[0].y[1]), 1.0);
    return out;
}

// Projected finite-difference gradient descent with Armijo backtracking.
StartResult run_free_bins(const DesignSpec& spec, double d50, double sigma) {
    const auto sizes = free_bin_sizes(spec);
    const std::size_t n = sizes.size();
    auto eval_at = [&](const std::vector<double>& x) {
        return evaluate(SizeDistribution::from_fractions(sizes, x), spec);
    };

    std::vector<double> x = lognormal_on_grid(sizes, d50, sigma);
    Evaluation current = eval_at(x);

    StartResult out;
    out.history.push_back(current.objective);
    out.converged = current.objective < spec.objective_tolerance;

    double alpha = 0.0;
    while (!out.converged && out.iterations < spec.max_iterations) {
        constexpr double h = 1e-6;
        std::vector<double> grad(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto probe = x;
            probe[i] += h;
            grad[i] = (eval_at(probe).objective - current.objective) / h;
        }
        const double gmax = std::abs(*std::max_element(grad.begin(), grad.end(),
                                                       [](double a, double b) { return std::abs(a) < std::abs(b); }));
        if (!(gmax > 0.0)) {
            out.converged = true;
            break;
        }
        if (alpha == 0.0) alpha = 0.05 / gmax;

        bool accepted = false;
        for (int tries = 0; tries < 40; ++tries) {
            std::vector<double> candidate(n);
            for (std::size_t i = 0; i < n; ++i) candidate[i] = x[i] - alpha * grad[i];
            candidate = project_simplex(std::move(candidate));
            double decrease = 0.0;
            for (std::size_t i = 0; i < n; ++i) decrease += grad[i] * (x[i] - candidate[i]);
            auto trial = eval_at(candidate);
            if (trial.objective <= current.objective - 1e-4 * decrease && trial.objective <= current.objective) {
                x = std::move(candidate);
                current = std::move(trial);
                accepted = true;
                alpha *= 2.0;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // No descent left along the projected gradient at any step size.
            out.converged = true;
            break;
        }
        ++out.iterations;
        out.history.push_back(current.objective);
        if (current.objective < kExactFit || stalled(out.history)) out.converged = true;
    }
    out.converged = out.converged || current.objective < spec.objective_tolerance;

    out.psd = SizeDistribution::from_fractions(sizes, x);
    out.eval = std::move(current);
    return out;
}

} // namespace

std::vector<double> free_bin_sizes(const DesignSpec& spec) {
    const std::size_t n = spec.n_bins;
    std::vector<double> sizes(n);
    const double a = std::log(spec.size_bounds.lo);
    const double b = std::log(spec.size_bounds.hi);
    for (std::size_t i = 0; i < n; ++i) {
        sizes[i] = n == 1 ? std::exp(a) : std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return sizes;
}

SizeDistribution initial_psd(const DesignSpec& spec) {
    if (spec.parameterization == Parameterization::lognormal) {
        return psd_from_lognormal(spec.initial_d50_um, spec.initial_sigma, spec.n_bins);
    }
    const auto sizes = free_bin_sizes(spec);
    return SizeDistribution::from_fractions(sizes, lognormal_on_grid(sizes, spec.initial_d50_um, spec.initial_sigma));
}

double objective(const SizeDistribution& psd, const DesignSpec& spec) {
    return evaluate(psd, spec).objective;
}

DesignResult design_psd(const DesignSpec& spec) {
    spec.validate();

    // Start 0 is the user's guess; the rest are log-uniform draws in the box.
    std::vector<std::array<double, 2>> starts{{spec.initial_d50_um, spec.initial_sigma}};
    std::mt19937_64 rng(spec.seed);
    auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    auto log_uniform = [&](const Bounds& b) {
        return std::clamp(std::exp(std::log(b.lo) + unit() * (std::log(b.hi) - std::log(b.lo))), b.lo, b.hi);
    };
    while (starts.size() < spec.starts) {
        const double d = log_uniform(spec.d50_bounds);
        const double s = log_uniform(spec.sigma_bounds);
        starts.push_back({d, s});
    }

    std::optional<StartResult> best;
    std::size_t best_index = 0;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        auto r = spec.parameterization == Parameterization::lognormal
                     ? run_lognormal(spec, starts[i][0], starts[i][1])
                     : run_free_bins(spec, starts[i][0], starts[i][1]);
        const bool better = !best || r.eval.residual < best->eval.residual ||
                            (r.eval.residual == best->eval.residual && r.iterations < best->iterations);
        if (better) {
            best = std::move(r);
            best_index = i;
        }
        // A start at the fixed point cannot be beaten on residual or iterations.
        if (i == 0 && best->iterations == 0 && best->converged) break;
    }

    DesignResult result;
    result.psd = best->psd;
    result.achieved = std::move(best->eval.achieved);
    result.residual_mse = best->eval.residual;
    result.objective = best->eval.objective;
    result.iterations = best->iterations;
    result.converged = best->converged;
    result.d50_um = best->d50;
    result.geo_sigma = best->sigma;
    result.objective_history = std::move(best->history);
    result.start_index = best_index;
    return result;
}

std::string design_report(const DesignResult& result, const DesignSpec& spec) {
    const auto metrics = derived_metrics(result.psd, spec.morph, spec.drug);
    std::string out = "Inverse design (" + std::string(to_string(spec.parameterization)) + ")\n";
    auto line = [&](const std::string& key, const std::string& value) {
        std::string k = "  " + key;
        k.resize(std::max<std::size_t>(k.size(), 26), ' ');
        out += k + value + "\n";
    };
    if (result.d50_um) line("d50 (um)", format_fixed(*result.d50_um, 4));
    if (result.geo_sigma) line("geo_sigma", format_fixed(*result.geo_sigma, 4));
    line("distribution d50 (um)", format_fixed(result.psd.d50_um(), 4));
    line("SSA (m2/g)", format_fixed(metrics.ssa_m2_g, 6));
    line("vol-eq size (um)", format_fixed(metrics.vol_eq_size_um, 4));
    line("residual MSE (%^2)", format_fixed(result.residual_mse, 6));
    line("objective", format_number(result.objective));
    line("iterations", std::to_string(result.iterations) + (result.converged ? " (converged)" : " (not converged)"));
    line("winning start", std::to_string(result.start_index));

    if (spec.parameterization == Parameterization::free_bins) {
        out += "\nsize_um     mass_fraction\n";
        for (const auto& bin : result.psd.bins()) {
            std::string s = format_fixed(bin.size_um, 4);
            s.resize(std::max<std::size_t>(s.size(), 12), ' ');
            out += s + format_fixed(bin.mass_fraction, 6) + "\n";
        }
    }

    out += "\ntime_hr     target_pct  achieved_pct\n";
    for (std::size_t i = 0; i < spec.target.size(); ++i) {
        std::string t = format_number(spec.target.points[i].time_hr);
        t.resize(std::max<std::size_t>(t.size(), 12), ' ');
        std::string a = format_fixed(spec.target.points[i].released_pct, 4);
        a.resize(std::max<std::size_t>(a.size(), 12), ' ');
        out += t + a + format_fixed(result.achieved.points[i].released_pct, 4) + "\n";
    }
    return out;
}

json design_report_json(const DesignResult& result, const DesignSpec& spec) {
    const auto metrics = derived_metrics(result.psd, spec.morph, spec.drug);
    json bins = json::array();
    for (const auto& bin : result.psd.bins()) bins.push_back({bin.size_um, bin.mass_fraction});
    json rows = json::array();
    for (std::size_t i = 0; i < spec.target.size(); ++i) {
        rows.push_back({spec.target.points[i].time_hr, spec.target.points[i].released_pct,
                        result.achieved.points[i].released_pct});
    }
    json out{{"parameterization", to_string(spec.parameterization)},
             {"distribution_d50_um", result.psd.d50_um()},
             {"ssa_m2_g", metrics.ssa_m2_g},
             {"vol_eq_um", metrics.vol_eq_size_um},
             {"residual_mse", result.residual_mse},
             {"objective", result.objective},
             {"iterations", result.iterations},
             {"converged", result.converged},
             {"start_index", result.start_index},
             {"objective_history", result.objective_history},
             {"bins", bins},
             {"profile_columns", {"time_hr", "target_pct", "achieved_pct"}},
             {"profile", rows}};
    out["d50_um"] = result.d50_um ? json(*result.d50_um) : json(nullptr);
    out["geo_sigma"] = result.geo_sigma ? json(*result.geo_sigma) : json(nullptr);
    return out;
}

Calibration calibrate_velocity_factor(std::span<const CalibrationCase> cases, const DrugSubstance& drug,
                                      const ParticleMorphology& morph,
                                      const DissolutionConditions& conditions, Bounds bounds,
                                      const SolverOptions& solver) {
    if (cases.empty()) throw PreconditionError("calibration needs at least one case");
    check_bounds(bounds, "velocity_factor");
    if (!(bounds.lo > 0.0 && bounds.hi <= 1.0)) throw ConfigError("velocity_factor bounds must lie in (0, 1]");
    for (const auto& c : cases) check_profile(c.measured);

    auto loss = [&](double log_vf) {
        auto cond = conditions;
        cond.velocity_factor = std::clamp(std::exp(log_vf), bounds.lo, bounds.hi);
        double total = 0.0;
        for (const auto& c : cases) {
            const auto sim = simulate_dissolution(drug, morph, c.psd, cond, c.measured.times(), solver);
            double sum = 0.0;
            for (std::size_t i = 0; i < sim.size(); ++i) {
                const double d = sim.points[i].released_pct - c.measured.points[i].released_pct;
                sum += d * d;
            }
            total += sum / static_cast<double>(sim.size());
        }
        return total / static_cast<double>(cases.size());
    };

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(bounds.lo);
    double b = std::log(bounds.hi);
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = loss(c);
    double fd = loss(d);
    for (int i = 0; i < 60 && b - a > 1e-6; ++i) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = loss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = loss(d);
        }
    }
    // The loss is often monotone, so the ends compete with the interior point.
    std::array<std::pair<double, double>, 3> candidates{
        {{fc <= fd ? fc : fd, fc <= fd ? c : d}, {loss(std::log(bounds.lo)), std::log(bounds.lo)},
         {loss(std::log(bounds.hi)), std::log(bounds.hi)}}};
    const auto best = *std::min_element(candidates.begin(), candidates.end());
    return {std::clamp(std::exp(best.second), bounds.lo, bounds.hi), best.first};
}

} // namespace formu
