#include "maxreglab/maxreg.hpp"

#include <algorithm>
#include <cmath>

#include "maxreglab/errors.hpp"
#include "maxreglab/fft.hpp"
#include "maxreglab/parallel.hpp"
#include "maxreglab/rng.hpp"
#include "maxreglab/summation.hpp"

namespace mrl {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

StateVector random_probe_state(std::size_t K, std::uint64_t seed, std::uint64_t probe,
                               std::uint64_t step) {
    StateVector g(K);
    for (std::size_t k = 0; k < K; ++k) {
        double a, b;
        rng::gaussian_pair(rng::key(seed, probe, rng::Stream::probe, step, k), &a, &b);
        g[k] = Complex(a, b) / std::sqrt(2.0);
    }
    return g;
}
}  // namespace

SolutionPath det_convolution(const SpectralOperator& A, std::span<const StateVector> g_steps,
                             TimeGrid grid) {
    if (g_steps.size() != grid.n_steps)
        throw DimensionMismatch("one forcing value per grid step required");
    const std::size_t K = A.mode_count();
    const auto coeffs = ou_coeffs_all(A, grid.dt());
    SolutionPath sol;
    sol.grid = grid;
    sol.states.reserve(grid.n_steps + 1);
    sol.states.emplace_back(K);
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        if (g_steps[n].size() != K) throw DimensionMismatch("forcing size mismatch");
        StateVector next(K);
        const StateVector& u = sol.states.back();
        for (std::size_t k = 0; k < K; ++k) {
            next[k] = coeffs[k].decay * u[k] + coeffs[k].det_gain * g_steps[n][k];
        }
        sol.states.push_back(std::move(next));
    }
    return sol;
}

double det_energy_p2(const SpectralOperator& A, std::span<const StateVector> g_steps,
                     TimeGrid grid) {
    if (g_steps.size() != grid.n_steps)
        throw DimensionMismatch("one forcing value per grid step required");
    const std::size_t K = A.mode_count();
    const double dt = grid.dt();
    const auto coeffs = ou_coeffs_all(A, dt);
    std::vector<double> v(K);
    for (std::size_t k = 0; k < K; ++k) {
        v[k] = dt * expm1_ratio(2.0 * A.mu(k).real() * dt);  // int_0^dt e^{-2 Re mu s} ds
    }
    StateVector u(K);
    KahanSum energy;
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
            const Complex g = g_steps[n][k];
            const Complex r = A.mu(k) * u[k] - g;  // A u(s) = g + e^{-mu s} r on the step
            energy.add(std::norm(g) * dt);
            energy.add(2.0 * (std::conj(g) * r * coeffs[k].det_gain).real());
            energy.add(std::norm(r) * v[k]);
            u[k] = coeffs[k].decay * u[k] + coeffs[k].det_gain * g;
        }
    }
    for (std::size_t k = 0; k < K; ++k) {  // exact decay past the horizon
        energy.add(std::norm(A.mu(k) * u[k]) / (2.0 * A.mu(k).real()));
    }
    return energy.value();
}

double lp_time_norm(std::span<const double> node_values, double dt, double p) {
    KahanSum s;
    for (std::size_t n = 0; n + 1 < node_values.size(); ++n)
        s.add(std::pow(node_values[n], p) * dt);
    return std::pow(s.value(), 1.0 / p);
}

double det_ratio(const SpectralOperator& A, std::span<const StateVector> g_steps,
                 TimeGrid grid, double p, double* tail_fraction) {
    KahanSum den_p;
    for (const auto& g : g_steps) den_p.add(std::pow(norm_alpha(A, 0.0, g), p) * grid.dt());
    const double den = std::pow(den_p.value(), 1.0 / p);
    if (den <= 0.0) throw InsufficientSamples("degenerate forcing probe");

    double num_p, tail;
    if (p == 2.0) {
        num_p = det_energy_p2(A, g_steps, grid);
        tail = 0.0;  // already exact
    } else {
        auto sol = det_convolution(A, g_steps, grid);
        std::vector<double> au(sol.states.size());
        for (std::size_t n = 0; n < sol.states.size(); ++n)
            au[n] = norm_alpha(A, 1.0, sol.states[n]);
        KahanSum s;
        for (std::size_t n = 0; n + 1 < au.size(); ++n) s.add(std::pow(au[n], p) * grid.dt());
        tail = std::pow(au.back(), p) / (p * A.delta());
        num_p = s.value() + tail;
    }
    if (tail_fraction) *tail_fraction = num_p > 0.0 ? tail / num_p : 0.0;
    return std::pow(num_p, 1.0 / p) / den;
}

double plancherel_energy_p2(const SpectralOperator& A, std::span<const StateVector> g_steps,
                            TimeGrid grid, double rel_tol) {
    const std::size_t K = A.mode_count();
    const std::size_t N = grid.n_steps;
    const double dt = grid.dt();

    // zero-padded spectra of the coefficient sequences; P is periodic in
    // frequency with period 2*pi/dt, so one FFT serves every frequency index
    const std::size_t pad = std::max<std::size_t>(next_pow2(N) * 512, 4096);
    std::vector<std::vector<Complex>> spectra(K);
    std::vector<double> row_l1(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<Complex> seq(pad, Complex(0.0, 0.0));
        for (std::size_t n = 0; n < N; ++n) {
            seq[n] = g_steps[n][k];
            row_l1[k] += std::abs(g_steps[n][k]);
        }
        fft_pow2(seq);
        spectra[k] = std::move(seq);
    }

    const double dw = kTwoPi / (static_cast<double>(pad) * dt);
    auto q_sq = [&](double w) {
        if (w == 0.0) return dt * dt;
        return std::norm((1.0 - std::exp(Complex(0.0, -w * dt))) / Complex(0.0, w));
    };

    KahanSum acc;
    // j = 0 term: H(0) = mu (0 + mu)^{-1} = 1
    for (std::size_t k = 0; k < K; ++k) {
        acc.add(q_sq(0.0) * std::norm(spectra[k][0]) * dw / kTwoPi);
    }
    double energy = acc.value();
    std::size_t j = 1;
    const std::size_t j_cap = 400000000 / std::max<std::size_t>(K, 1);
    while (true) {
        const std::size_t block = 65536;
        for (std::size_t b = 0; b < block; ++b, ++j) {
            const double w = dw * static_cast<double>(j);
            const double qs = q_sq(w);
            const std::size_t jp = j % pad;
            const std::size_t jm = (pad - jp) % pad;
            for (std::size_t k = 0; k < K; ++k) {
                const double mu2 = std::norm(A.mu(k));
                const double hp = mu2 / std::norm(Complex(0.0, w) + A.mu(k));
                const double hm = mu2 / std::norm(Complex(0.0, -w) + A.mu(k));
                acc.add(qs * (hp * std::norm(spectra[k][jp]) + hm * std::norm(spectra[k][jm])) *
                        dw / kTwoPi);
            }
        }
        energy = acc.value();
        const double omega = dw * static_cast<double>(j);
        double tail = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            tail += (16.0 / M_PI) * row_l1[k] * row_l1[k] * std::norm(A.mu(k)) /
                    (3.0 * omega * omega * omega);
        }
        if (tail <= rel_tol * energy) break;
        if (j >= j_cap) throw QuadratureNotConverged("Plancherel frequency sum did not close");
    }
    return energy;
}

std::vector<double> default_s_grid(const SpectralOperator& A, std::size_t count) {
    std::vector<double> s;
    s.push_back(0.0);
    const double lo = A.delta() * 1e-3;
    const double hi = 1e3 * A.max_real();
    for (std::size_t i = 0; i < count; ++i) {
        const double x = lo * std::pow(hi / lo, static_cast<double>(i) /
                                                    static_cast<double>(count - 1));
        s.push_back(x);
        s.push_back(-x);
    }
    return s;
}

double resolvent_bound_check(const SpectralOperator& A, std::span<const double> s_grid) {
    for (std::size_t k = 0; k < A.mode_count(); ++k) {
        if (A.mu(k).imag() != 0.0)
            throw NotSelfAdjoint("resolvent bound check requires a real spectrum");
    }
    double sup = 0.0;
    for (double s : s_grid) {
        for (std::size_t k = 0; k < A.mode_count(); ++k) {
            const double mu = A.mu(k).real();
            sup = std::max(sup, mu / std::hypot(s, mu));
        }
    }
    return sup;
}

ConstantsEstimate estimate_kstar(const SpectralOperator& A, double p, TimeGrid grid,
                                 const KstarOptions& opts) {
    const std::size_t K = A.mode_count();
    ConstantsEstimate est;
    est.kind = ConstantKind::deterministic_star;
    est.p = p;
    est.shift = A.shift();
    est.sample_count = 1;

    auto consider = [&](std::span<const StateVector> g, const std::string& name) {
        double tail = 0.0;
        const double r = det_ratio(A, g, grid, p, &tail);
        ++est.probe_count;
        if (r > est.value) {
            est.value = r;
            est.achieving_probe = name;
            est.tail_fraction = tail;
        }
    };

    std::vector<StateVector> g(grid.n_steps);
    for (std::size_t probe = 0; probe < opts.random_probes; ++probe) {
        for (std::size_t n = 0; n < grid.n_steps; ++n)
            g[n] = random_probe_state(K, opts.seed, probe, n);
        consider(g, "random_step_" + std::to_string(probe));
    }

    if (opts.adversarial_probes) {
        for (std::size_t k = 0; k < K; ++k) {
            // constant single-mode forcing: ratio -> 1 as Re(mu) T -> inf
            for (std::size_t n = 0; n < grid.n_steps; ++n) {
                StateVector e(K);
                e[k] = 1.0;
                g[n] = std::move(e);
            }
            consider(g, "constant_mode_" + std::to_string(k));
            // matched-frequency oscillation
            const double w = std::abs(A.mu(k));
            for (std::size_t n = 0; n < grid.n_steps; ++n) {
                StateVector e(K);
                e[k] = std::exp(Complex(0.0, w * grid.t(n)));
                g[n] = std::move(e);
            }
            consider(g, "oscillatory_mode_" + std::to_string(k));
        }
    }
    return est;
}

DiamondProbeResult kdiamond_probe(const SpectralOperator& A, double p, TimeGrid grid,
                                  std::span<const NoiseOperator> g_steps, std::uint64_t seed,
                                  std::size_t n_paths, int threads) {
    if (g_steps.size() != grid.n_steps)
        throw DimensionMismatch("one step operator per grid step required");
    const std::size_t K = A.mode_count();
    const std::size_t M = g_steps.front().noise_dim();
    const double dt = grid.dt();

    KahanSum den_p;
    for (const auto& gn : g_steps) den_p.add(std::pow(gn.hs_norm(A, 0.0), p) * dt);
    const double den = std::pow(den_p.value(), 1.0 / p);
    if (!(den > 1e-14)) throw InsufficientSamples("degenerate probe: zero denominator");

    // restrict the simulation to modes the probe actually excites
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < K; ++k) {
        bool hit = false;
        for (std::size_t n = 0; n < g_steps.size() && !hit; ++n)
            for (std::size_t i = 0; i < M && !hit; ++i)
                if (g_steps[n].at(k, i) != Complex(0.0, 0.0)) hit = true;
        if (hit) active.push_back(k);
    }
    if (active.empty()) throw InsufficientSamples("degenerate probe: zero operator");

    std::vector<Complex> eigs;
    std::vector<long> waves;
    const bool has_waves = !A.wavenumbers().empty();
    for (std::size_t k : active) {
        eigs.push_back(A.eigenvalues()[k]);
        if (has_waves) waves.push_back(A.wavenumbers()[k]);
    }
    const SpectralOperator sub =
        SpectralOperator::make(std::move(eigs), A.shift(), A.basis(), std::move(waves));
    std::vector<NoiseOperator> sub_ops(g_steps.size(), NoiseOperator(active.size(), M));
    for (std::size_t n = 0; n < g_steps.size(); ++n)
        for (std::size_t k = 0; k < active.size(); ++k)
            for (std::size_t i = 0; i < M; ++i)
                sub_ops[n].at(k, i) = g_steps[n].at(active[k], i);

    const auto coeffs = ou_coeffs_all(sub, dt);
    std::vector<double> half_weight(active.size());
    std::vector<double> tail_weight(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
        half_weight[k] = std::abs(sub.mu(k));  // ||A^{1/2} u||^2 weight per |u_k|^2
        tail_weight[k] = half_weight[k] / (2.0 * sub.mu(k).real());
    }

    std::vector<double> num(n_paths);
    parallel_for(n_paths, threads, [&](std::size_t path) {
        DirectOuProvider noise(seed, path, grid, M);
        StateVector u(active.size());
        KahanSum acc;
        for (std::size_t n = 0; n < grid.n_steps; ++n) {
            double w2 = 0.0;
            for (std::size_t k = 0; k < active.size(); ++k)
                w2 += half_weight[k] * std::norm(u[k]);
            acc.add((p == 2.0 ? w2 : std::pow(w2, 0.5 * p)) * dt);
            u = ou_step(sub, coeffs, u, sub_ops[n], noise, n);
        }
        double w2 = 0.0, wt = 0.0;
        for (std::size_t k = 0; k < active.size(); ++k) {
            w2 += half_weight[k] * std::norm(u[k]);
            wt += tail_weight[k] * std::norm(u[k]);
        }
        // analytic continuation past the horizon: exact for p = 2, upper
        // bound otherwise
        acc.add(p == 2.0 ? wt : std::pow(w2, 0.5 * p) / (p * sub.delta()));
        num[path] = acc.value();
    });

    if (n_paths < 2) throw InsufficientSamples("at least two paths required");
    KahanSum mean_acc;
    for (double x : num) mean_acc.add(x);
    const double mean = mean_acc.value() / static_cast<double>(n_paths);
    KahanSum var_acc;
    for (double x : num) var_acc.add((x - mean) * (x - mean));
    const double se_mean =
        std::sqrt(var_acc.value() / static_cast<double>(n_paths - 1) /
                  static_cast<double>(n_paths));

    DiamondProbeResult r;
    r.denom = den;
    r.ratio = std::pow(mean, 1.0 / p) / den;
    r.standard_error = r.ratio * se_mean / (p * mean);
    if (r.standard_error > 0.1 * r.ratio)
        throw InsufficientSamples("Monte Carlo error above 10% of the estimate");
    return r;
}

ConstantsEstimate estimate_kdiamond(const SpectralOperator& A, double p, TimeGrid grid,
                                    const KdiamondOptions& opts) {
    const std::size_t K = A.mode_count();
    ConstantsEstimate est;
    est.kind = ConstantKind::stochastic_diamond;
    est.p = p;
    est.shift = A.shift();
    est.sample_count = opts.n_paths;

    auto consider = [&](std::span<const NoiseOperator> g, const std::string& name,
                        std::uint64_t probe_seed) {
        const auto r = kdiamond_probe(A, p, grid, g, probe_seed, opts.n_paths, opts.threads);
        ++est.probe_count;
        if (r.ratio > est.value) {
            est.value = r.ratio;
            est.standard_error = r.standard_error;
            est.achieving_probe = name;
        }
    };

    if (opts.per_mode_probes) {
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<NoiseOperator> g(grid.n_steps, NoiseOperator(K, 1));
            const double span = 1.0 / A.mu(k).real();
            for (std::size_t n = 0; n < grid.n_steps; ++n) {
                if (grid.t(n) < span) g[n].at(k, 0) = 1.0;
            }
            consider(g, "indicator_mode_" + std::to_string(k), opts.seed + 1000 + k);
        }
    }
    for (std::size_t probe = 0; probe < opts.random_probes; ++probe) {
        std::vector<NoiseOperator> g(grid.n_steps,
                                     NoiseOperator(K, opts.random_probe_noise_dim));
        for (std::size_t n = 0; n < grid.n_steps; ++n) {
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t i = 0; i < opts.random_probe_noise_dim; ++i) {
                    double a, b;
                    rng::gaussian_pair(
                        rng::key(opts.seed, probe, rng::Stream::probe, n, k, i + 1), &a, &b);
                    g[n].at(k, i) = Complex(a, b) / std::sqrt(2.0);
                }
            }
        }
        consider(g, "random_step_" + std::to_string(probe), opts.seed + 2000 + probe);
    }
    return est;
}

}  // namespace mrl
