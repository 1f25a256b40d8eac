#include "maxreglab/regularity.hpp"

#include <algorithm>
#include <cmath>

#include "maxreglab/errors.hpp"
#include "maxreglab/rng.hpp"
#include "maxreglab/summation.hpp"

namespace mrl {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

HolderEstimate slope_fit(const std::vector<double>& lags, const std::vector<double>& incs) {
    HolderEstimate est;
    est.lags = lags;
    est.max_increments = incs;
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < lags.size(); ++j) {
        if (incs[j] <= 0.0) continue;
        const double x = std::log(lags[j]);
        const double y = std::log(incs[j]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n >= 2) {
        const double denom = static_cast<double>(n) * sxx - sx * sx;
        est.exponent = (static_cast<double>(n) * sxy - sx * sy) / denom;
    }
    return est;
}

int dyadic_levels(std::size_t n_steps) {
    return static_cast<int>(std::floor(std::log2(static_cast<double>(n_steps)))) - 2;
}

// Window start indices for the max-increment at one lag. The same number of
// windows is used at every lag; otherwise the extreme-value factor
// sqrt(2 log #windows) varies across lags and biases the fitted slope.
std::vector<std::size_t> window_starts(std::size_t n, std::size_t lag, std::size_t count) {
    std::vector<std::size_t> starts;
    const std::size_t last = n - lag;
    if (count <= 1 || last == 0) {
        starts.push_back(0);
        return starts;
    }
    starts.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        starts.push_back(last * w / (count - 1));
    }
    return starts;
}
}  // namespace

HolderEstimate holder_exponent(const SolutionPath& solution, const SpectralOperator& A,
                               double alpha) {
    const std::size_t n = solution.states.size() - 1;
    const int J = dyadic_levels(n);
    if (J + 1 < 5) throw InsufficientLevels("need at least 5 dyadic lag levels");
    const std::size_t count = n >> J;  // windows at the coarsest lag
    std::vector<double> lags, incs;
    for (int j = 0; j <= J; ++j) {
        const std::size_t lag = std::size_t{1} << j;
        double worst = 0.0;
        for (std::size_t i : window_starts(n, lag, count)) {
            StateVector d = solution.states[i + lag];
            d -= solution.states[i];
            worst = std::max(worst, norm_alpha(A, alpha, d));
        }
        lags.push_back(solution.grid.dt() * static_cast<double>(lag));
        incs.push_back(worst);
    }
    return slope_fit(lags, incs);
}

HolderEstimate holder_exponent_series(std::span<const double> values, double dt) {
    const std::size_t n = values.size() - 1;
    const int J = dyadic_levels(n);
    if (J + 1 < 5) throw InsufficientLevels("need at least 5 dyadic lag levels");
    const std::size_t count = n >> J;
    std::vector<double> lags, incs;
    for (int j = 0; j <= J; ++j) {
        const std::size_t lag = std::size_t{1} << j;
        double worst = 0.0;
        for (std::size_t i : window_starts(n, lag, count)) {
            worst = std::max(worst, std::abs(values[i + lag] - values[i]));
        }
        lags.push_back(dt * static_cast<double>(lag));
        incs.push_back(worst);
    }
    return slope_fit(lags, incs);
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

BesovCheck bm_halfreg_check(std::span<const std::vector<double>> paths, double dt, double p,
                            int levels) {
    if (paths.empty()) throw InsufficientLevels("no paths");
    const std::size_t n = paths.front().size() - 1;
    int usable = 0;
    while ((std::size_t{1} << (usable + 1)) <= n) ++usable;
    levels = std::min(levels, usable);
    if (levels < 4) throw InsufficientLevels("need at least 4 dyadic levels");

    BesovCheck out;
    for (int l = 0; l < levels; ++l) {
        // coarse to fine: lag shrinks as the level index grows
        const std::size_t lag = std::size_t{1} << (levels - 1 - l);
        const double lag_t = dt * static_cast<double>(lag);
        KahanSum acc;
        std::size_t count = 0;
        for (const auto& path : paths) {
            for (std::size_t i = 0; i + lag <= n; i += lag) {
                acc.add(std::pow(std::abs(path[i + lag] - path[i]), p));
                ++count;
            }
        }
        const double term = std::pow(lag_t, -0.5 * p) * acc.value() / static_cast<double>(count);
        out.lags.push_back(lag_t);
        out.level_terms.push_back(term);
        out.partial_sums.push_back((out.partial_sums.empty() ? 0.0 : out.partial_sums.back()) +
                                   term);
    }

    const std::size_t L = out.level_terms.size();
    bool sustained = true;
    KahanSum rate;
    for (std::size_t l = L - 3; l < L; ++l) {
        const double prev = out.level_terms[l - 1];
        const double cur = out.level_terms[l];
        if (!(prev > 0.0) || cur <= 0.5 * prev) sustained = false;
        if (prev > 0.0 && cur > 0.0) rate.add(std::log2(cur / prev));
    }
    out.growth_rate = rate.value() / 3.0;
    const double ratio = out.partial_sums.back() / out.partial_sums.front();
    out.verdict = (sustained && ratio >= 4.0) ? DivergenceVerdict::diverges
                                              : DivergenceVerdict::bounded;
    return out;
}

std::vector<double> synthetic_holder_path(double h, std::size_t n_steps, double horizon,
                                          std::uint64_t seed, std::uint64_t path_index) {
    const int j_max = static_cast<int>(std::floor(std::log2(static_cast<double>(n_steps)))) - 1;
    std::vector<double> out(n_steps + 1, 0.0);
    for (int j = 0; j <= j_max; ++j) {
        double a, b;
        rng::gaussian_pair(
            rng::key(seed, path_index, rng::Stream::probe, static_cast<std::uint64_t>(j)),
            &a, &b);
        const double amp = std::pow(2.0, -h * j);
        const double freq = kTwoPi * std::pow(2.0, j) / horizon;
        for (std::size_t i = 0; i <= n_steps; ++i) {
            const double t = horizon * static_cast<double>(i) / static_cast<double>(n_steps);
            out[i] += amp * (a * std::cos(freq * t) + b * std::sin(freq * t));
        }
    }
    return out;
}

RegularityReport trace_continuity_report(const SolutionPath& solution,
                                         const ProblemSpec& spec,
                                         const ContractionMargin& margin,
                                         std::span<const double> thetas,
                                         const Provenance& provenance) {
    RegularityReport rep;
    rep.scenario_id = provenance.scenario_id;
    rep.scenario_hash = provenance.scenario_hash;
    rep.seed = provenance.seed;
    rep.n_steps = solution.grid.n_steps;
    rep.horizon = solution.grid.horizon;
    rep.stopping_time = solution.stopping_time;
    rep.kstar = margin.kstar;
    rep.kdiamond = margin.kdiamond;
    rep.theta_margin = margin.theta;
    rep.kappa = solution.kappa_partition.size() >= 2
                    ? solution.kappa_partition[1] - solution.kappa_partition[0]
                    : solution.grid.horizon;

    TraceNormEvaluator ev(spec.op, 1.0 - 1.0 / spec.p, spec.p);
    double sup = 0.0, modulus = 0.0;
    double prev = -1.0;
    for (std::size_t j = 0; j < solution.states.size(); ++j) {
        const double tr = ev.norm(solution.states[j]);
        sup = std::max(sup, tr);
        if (j > 0) {
            StateVector d = solution.states[j];
            d -= solution.states[j - 1];
            modulus = std::max(modulus, ev.norm(d));
        }
        prev = tr;
    }
    (void)prev;
    rep.trace_sup = sup;
    rep.continuity_modulus = modulus;

    if (solution.states.size() >= 64) {
        for (double theta : thetas) {
            const auto est = holder_exponent(solution, spec.op, 1.0 - theta);
            rep.holder_table.emplace_back(theta, est.exponent);
        }
    }
    return rep;
}

}  // namespace mrl
