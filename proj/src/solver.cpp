#include "maxreglab/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maxreglab/errors.hpp"
#include "maxreglab/rng.hpp"
#include "maxreglab/summation.hpp"

namespace mrl {

namespace {

// Effective problem a range solve works with: frozen operator, combined maps,
// combined constants. Pointers refer into the caller's ProblemSpec.
struct WorkingProblem {
    SpectralOperator A;
    DriftFn F;
    NoiseFn B;
    const std::vector<StateVector>* f_steps = nullptr;
    const std::vector<NoiseOperator>* b_steps = nullptr;
    LipschitzConstants fc, bc;
    double p = 2.0;
    std::size_t noise_dim = 1;

    bool has_drift() const { return static_cast<bool>(F) || (f_steps && !f_steps->empty()); }
    bool has_noise() const { return static_cast<bool>(B) || (b_steps && !b_steps->empty()); }
};

WorkingProblem make_working(const ProblemSpec& spec) {
    WorkingProblem w;
    w.A = spec.op;
    w.F = spec.F;
    w.B = spec.B;
    w.f_steps = &spec.f_steps;
    w.b_steps = &spec.b_steps;
    w.fc = spec.f_const;
    w.bc = spec.b_const;
    w.p = spec.p;
    w.noise_dim = spec.noise_dim;
    return w;
}

DriftFn combine_drift(DriftFn a, DriftFn b) {
    if (!a) return b;
    if (!b) return a;
    return [a = std::move(a), b = std::move(b)](double t, const StateVector& x) {
        StateVector r = a(t, x);
        r += b(t, x);
        return r;
    };
}

NoiseFn combine_noise(NoiseFn a, NoiseFn b) {
    if (!a) return b;
    if (!b) return a;
    return [a = std::move(a), b = std::move(b)](double t, const StateVector& x) {
        NoiseOperator r = a(t, x);
        r += b(t, x);
        return r;
    };
}

void eval_drift(const WorkingProblem& w, const TimeGrid& grid, std::size_t step,
                const StateVector& x, StateVector& out) {
    if (w.F) {
        out = w.F(grid.t(step), x);
        if (w.f_steps && !w.f_steps->empty()) out += (*w.f_steps)[step];
    } else if (w.f_steps && !w.f_steps->empty()) {
        out = (*w.f_steps)[step];
    } else {
        out = StateVector(w.A.mode_count());
    }
}

NoiseOperator eval_noise(const WorkingProblem& w, const TimeGrid& grid, std::size_t step,
                         const StateVector& x) {
    if (w.B) {
        NoiseOperator g = w.B(grid.t(step), x);
        if (w.b_steps && !w.b_steps->empty()) g += (*w.b_steps)[step];
        return g;
    }
    if (w.b_steps && !w.b_steps->empty()) return (*w.b_steps)[step];
    return NoiseOperator();
}

struct RangeNorms {
    double z1 = 0.0, z0 = 0.0;
};

// ||| . ||| ingredients of next - phi over nodes [0, len) (left-endpoint sums)
RangeNorms delta_norms(const WorkingProblem& w, std::span<const StateVector> phi,
                       std::span<const StateVector> next, double dt) {
    const std::size_t K = w.A.mode_count();
    const double p = w.p;
    KahanSum s1, s0;
    for (std::size_t j = 0; j + 1 < next.size(); ++j) {
        double a1 = 0.0, a0 = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double d2 = std::norm(next[j][k] - phi[j][k]);
            a0 += d2;
            a1 += std::norm(w.A.mu(k)) * d2;
        }
        if (p == 2.0) {
            s1.add(a1 * dt);
            s0.add(a0 * dt);
        } else {
            s1.add(std::pow(a1, 0.5 * p) * dt);
            s0.add(std::pow(a0, 0.5 * p) * dt);
        }
    }
    return {std::pow(s1.value(), 1.0 / p), std::pow(s0.value(), 1.0 / p)};
}

// One Picard solve on grid indices [i0, i1] with initial value u_init.
// Writes the iterate into `states` (length i1 - i0 + 1).
void picard_range(const WorkingProblem& w, const OuIntegralProvider& noise,
                  const TimeGrid& grid, std::size_t i0, std::size_t i1,
                  const StateVector& u_init, const ContractionMargin& margin,
                  const PicardOptions& opts, std::vector<StateVector>& states,
                  PieceStats* stats) {
    const std::size_t K = w.A.mode_count();
    const std::size_t len = i1 - i0;
    const double dt = grid.dt();
    const auto coeffs = ou_coeffs_all(w.A, dt);
    const bool drift = w.has_drift();
    const bool noisy = w.has_noise();
    const std::size_t M = w.noise_dim;

    std::vector<StateVector> phi(len + 1), next(len + 1, StateVector(K));
    phi[0] = u_init;
    for (std::size_t j = 1; j <= len; ++j) {
        if (opts.start_from_zero) {
            phi[j] = StateVector(K);
        } else {
            StateVector s(K);
            for (std::size_t k = 0; k < K; ++k) s[k] = coeffs[k].decay * phi[j - 1][k];
            phi[j] = std::move(s);
        }
    }

    PieceStats local;
    local.begin = i0;
    local.end = i1;
    double delta_ref = 0.0, prev_delta = 0.0;
    bool converged = false;
    const int cap = opts.fixed_iterations > 0 ? opts.fixed_iterations : opts.max_iter;

    StateVector g(K);
    for (int m = 1; m <= cap; ++m) {
        next[0] = u_init;
        for (std::size_t j = 0; j < len; ++j) {
            const std::size_t abs_step = i0 + j;
            StateVector& out = next[j + 1];
            if (out.size() != K) out = StateVector(K);
            if (drift) {
                eval_drift(w, grid, abs_step, phi[j], g);
                for (std::size_t k = 0; k < K; ++k)
                    out[k] = coeffs[k].decay * next[j][k] + coeffs[k].det_gain * g[k];
            } else {
                for (std::size_t k = 0; k < K; ++k) out[k] = coeffs[k].decay * next[j][k];
            }
            if (noisy) {
                const NoiseOperator gn = eval_noise(w, grid, abs_step, phi[j]);
                if (!gn.empty()) {
                    for (std::size_t k = 0; k < K; ++k) {
                        const std::uint64_t id = w.A.mode_id(k);
                        Complex acc = out[k];
                        for (std::size_t i = 0; i < M; ++i) {
                            const Complex gki = gn.at(k, i);
                            if (gki == Complex(0.0, 0.0)) continue;
                            acc += gki * noise.ou_integral(abs_step, id, i, coeffs[k]);
                        }
                        out[k] = acc;
                    }
                }
            }
        }

        const RangeNorms d = delta_norms(w, phi, next, dt);
        const double delta = d.z1 + margin.weight * d.z0;
        if (!std::isfinite(delta)) {
            throw NoConvergence("fixed-point iterate diverged", std::numeric_limits<double>::infinity());
        }
        local.iterations = m;
        local.deltas.push_back(delta);
        if (m > 1 && prev_delta > 0.0) local.ratios.push_back(delta / prev_delta);
        phi.swap(next);

        if (opts.fixed_iterations > 0) {
            prev_delta = delta;
            if (m == 1) delta_ref = delta;
            converged = delta <= opts.tol * delta_ref;
            continue;
        }
        if (m == 1) {
            delta_ref = delta;
            if (delta == 0.0) {
                converged = true;
                break;
            }
        } else {
            if (delta <= opts.tol * delta_ref) {
                converged = true;
                break;
            }
            if (m >= 4 && delta > 10.0 * delta_ref && delta > prev_delta) {
                throw NoConvergence("fixed-point iteration is expanding",
                                    delta / prev_delta);
            }
        }
        prev_delta = delta;
    }
    if (!converged && opts.fixed_iterations == 0) {
        throw NoConvergence("fixed-point iteration cap reached",
                            local.ratios.empty() ? 1.0 : local.ratios.back());
    }

    states = std::move(phi);
    if (stats) *stats = std::move(local);
}

// Probe pair trajectories for the contraction surrogate. Independent draws
// per node underestimate the convolution gain (random signs cancel), so the
// family also contains constant-in-time pairs and a pair concentrated on the
// slowest mode; the surrogate takes the sup over all of them.
StateVector surrogate_probe_node(const SpectralOperator& A, std::uint64_t seed,
                                 std::uint64_t pair, std::uint64_t side, std::size_t node) {
    const std::size_t K = A.mode_count();
    StateVector x(K);
    const std::uint64_t kind = pair % 3;
    const std::uint64_t draw_node = (kind == 0) ? node : 0;  // constant in time otherwise
    if (kind == 2) {
        double a, b;
        rng::gaussian_pair(
            rng::key(seed, pair * 2 + side, rng::Stream::probe, draw_node, A.mode_id(0)),
            &a, &b);
        x[0] = Complex(a, b) / (std::sqrt(2.0) * std::abs(A.mu(0)));
        return x;
    }
    for (std::size_t k = 0; k < K; ++k) {
        double a, b;
        rng::gaussian_pair(
            rng::key(seed, pair * 2 + side, rng::Stream::probe, draw_node, A.mode_id(k)), &a,
            &b);
        x[k] = Complex(a, b) / (std::sqrt(2.0) * std::abs(A.mu(k)));
    }
    return x;
}

// Cumulative surrogate c~ on (i0, i1]: per node index j the ratio
// ||L(phi1)-L(phi2)||_{Z0,[t_{i0},t_j]} / |||phi1-phi2|||_[t_{i0},t_j],
// maximized over probe pairs and averaged in L^p over a small path ensemble.
std::vector<double> surrogate_range(const WorkingProblem& w, const TimeGrid& grid,
                                    std::size_t i0, std::size_t i1,
                                    const ContractionMargin& margin,
                                    std::uint64_t probe_seed) {
    const std::size_t K = w.A.mode_count();
    const std::size_t len = i1 - i0;
    const double dt = grid.dt();
    const double p = w.p;
    const auto coeffs = ou_coeffs_all(w.A, dt);
    const std::size_t n_pairs = 6;
    const std::size_t n_paths = w.has_noise() ? 2 : 1;

    std::vector<double> cs(len + 1, 0.0);
    std::vector<std::unique_ptr<DirectOuProvider>> providers;
    if (w.has_noise()) {
        for (std::size_t e = 0; e < n_paths; ++e) {
            providers.push_back(
                std::make_unique<DirectOuProvider>(probe_seed, 1000 + e, grid, w.noise_dim));
        }
    }

    for (std::size_t pair = 0; pair < n_pairs; ++pair) {
        std::vector<StateVector> a(len), b(len);
        for (std::size_t j = 0; j < len; ++j) {
            a[j] = surrogate_probe_node(w.A, probe_seed, pair, 0, i0 + j);
            b[j] = surrogate_probe_node(w.A, probe_seed, pair, 1, i0 + j);
        }

        // denominators: prefix ||| a - b |||
        std::vector<double> den(len + 1, 0.0);
        {
            KahanSum s1, s0;
            for (std::size_t j = 0; j < len; ++j) {
                double d1 = 0.0, d0 = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    const double d2 = std::norm(a[j][k] - b[j][k]);
                    d0 += d2;
                    d1 += std::norm(w.A.mu(k)) * d2;
                }
                s1.add(std::pow(d1, 0.5 * p) * dt);
                s0.add(std::pow(d0, 0.5 * p) * dt);
                den[j + 1] = std::pow(s1.value(), 1.0 / p) +
                             margin.weight * std::pow(s0.value(), 1.0 / p);
            }
        }

        // drift difference contributes deterministically
        std::vector<StateVector> df(len, StateVector(K));
        if (w.F) {
            for (std::size_t j = 0; j < len; ++j) {
                df[j] = w.F(grid.t(i0 + j), a[j]);
                df[j] -= w.F(grid.t(i0 + j), b[j]);
            }
        }
        std::vector<NoiseOperator> db(len);
        if (w.B) {
            for (std::size_t j = 0; j < len; ++j) {
                db[j] = w.B(grid.t(i0 + j), a[j]);
                db[j] -= w.B(grid.t(i0 + j), b[j]);
            }
        }

        std::vector<double> num_p(len + 1, 0.0);
        for (std::size_t e = 0; e < n_paths; ++e) {
            StateVector u(K);
            KahanSum acc;
            std::vector<double> pref(len + 1, 0.0);
            for (std::size_t j = 0; j < len; ++j) {
                double d0 = 0.0;
                for (std::size_t k = 0; k < K; ++k) d0 += std::norm(u[k]);
                acc.add(std::pow(d0, 0.5 * p) * dt);
                pref[j + 1] = acc.value();
                // advance D = S*[dF] + S<>[dB]
                StateVector nextu(K);
                for (std::size_t k = 0; k < K; ++k) {
                    Complex v = coeffs[k].decay * u[k];
                    if (w.F) v += coeffs[k].det_gain * df[j][k];
                    if (w.B && !db[j].empty()) {
                        const std::uint64_t id = w.A.mode_id(k);
                        for (std::size_t i = 0; i < w.noise_dim; ++i) {
                            const Complex gki = db[j].at(k, i);
                            if (gki == Complex(0.0, 0.0)) continue;
                            v += gki * providers[e]->ou_integral(i0 + j, id, i, coeffs[k]);
                        }
                    }
                    nextu[k] = v;
                }
                u = std::move(nextu);
            }
            for (std::size_t j = 1; j <= len; ++j)
                num_p[j] += pref[j] / static_cast<double>(n_paths);
        }
        for (std::size_t j = 1; j <= len; ++j) {
            if (den[j] > 0.0) {
                cs[j] = std::max(cs[j], std::pow(num_p[j], 1.0 / p) / den[j]);
            }
        }
    }
    return cs;
}

std::vector<std::size_t> split_range(const WorkingProblem& w, const TimeGrid& grid,
                                     std::size_t i0, std::size_t i1,
                                     const ContractionMargin& margin,
                                     std::uint64_t probe_seed) {
    if (margin.weight == 0.0 || i1 - i0 <= 1) return {i0, i1};
    const auto cs = surrogate_range(w, grid, i0, i1, margin, probe_seed);
    std::size_t kappa_len = 1;
    for (std::size_t j = 1; j <= i1 - i0; ++j) {
        if (margin.weight * cs[j] < 0.5 * margin.theta) {
            kappa_len = j;
        } else {
            break;
        }
    }
    const std::size_t pieces =
        (i1 - i0 + kappa_len - 1) / kappa_len;  // ceil; each piece <= kappa
    std::vector<std::size_t> breaks;
    breaks.reserve(pieces + 1);
    for (std::size_t m = 0; m <= pieces; ++m) {
        breaks.push_back(i0 + (i1 - i0) * m / pieces);
    }
    breaks.front() = i0;
    breaks.back() = i1;
    return breaks;
}

// Adaptive segment solve: Picard on [i0, i1]; halve on failure to contract.
void solve_segment(const WorkingProblem& w, const OuIntegralProvider& noise,
                   const TimeGrid& grid, std::size_t i0, std::size_t i1,
                   const ContractionMargin& margin, const PicardOptions& opts,
                   std::vector<StateVector>& states, SolveReport* report, int depth,
                   int piece_index, SolutionPath& sol) {
    try {
        std::vector<StateVector> local;
        PieceStats st;
        picard_range(w, noise, grid, i0, i1, states[i0], margin, opts, local, &st);
        for (std::size_t j = 1; j <= i1 - i0; ++j) states[i0 + j] = std::move(local[j]);
        sol.iterations += st.iterations;
        for (double r : st.ratios) sol.contraction_ratios.push_back(r);
        if (report) {
            report->total_iterations += st.iterations;
            report->pieces.push_back(std::move(st));
        }
    } catch (const NoConvergence& e) {
        if (i1 - i0 < 2 || depth >= 40) {
            throw NoConvergence(std::string("fixed point failed on a subinterval: ") +
                                    e.what(),
                                e.last_ratio, piece_index);
        }
        const std::size_t mid = i0 + (i1 - i0) / 2;
        solve_segment(w, noise, grid, i0, mid, margin, opts, states, report, depth + 1,
                      piece_index, sol);
        solve_segment(w, noise, grid, mid, i1, margin, opts, states, report, depth + 1,
                      piece_index, sol);
    }
}

// kappa-split + adaptive solve over [i0, i1]; records breakpoints in sol.
void solve_with_splitting(const WorkingProblem& w, const OuIntegralProvider& noise,
                          const TimeGrid& grid, std::size_t i0, std::size_t i1,
                          const ContractionMargin& margin, const PicardOptions& opts,
                          std::vector<StateVector>& states, SolveReport* report,
                          SolutionPath& sol) {
    const bool reusable = opts.kappa_breaks && !opts.kappa_breaks->empty() &&
                          opts.kappa_breaks->front() == i0 && opts.kappa_breaks->back() == i1;
    const auto breaks =
        reusable ? *opts.kappa_breaks : split_range(w, grid, i0, i1, margin, opts.probe_seed);
    for (std::size_t b : breaks) {
        const double t = grid.t(b);
        if (sol.kappa_partition.empty() || sol.kappa_partition.back() != t)
            sol.kappa_partition.push_back(t);
    }
    for (std::size_t m = 0; m + 1 < breaks.size(); ++m) {
        solve_segment(w, noise, grid, breaks[m], breaks[m + 1], margin, opts, states, report,
                      0, static_cast<int>(m), sol);
    }
}

SolutionPath run_glue(const WorkingProblem& w, const ProblemSpec& spec,
                      const OuIntegralProvider& noise, TimeGrid grid,
                      const ContractionMargin& margin, const PicardOptions& opts,
                      SolveReport* report) {
    SolutionPath sol;
    sol.grid = grid;
    std::vector<StateVector> states(grid.n_steps + 1);
    states[0] = spec.u0;
    solve_with_splitting(w, noise, grid, 0, grid.n_steps, margin, opts, states, report, sol);
    sol.states = std::move(states);
    sol.converged = true;
    if (report) report->kappa_partition = sol.kappa_partition;
    return sol;
}

}  // namespace

ContractionMargin margin_from_constants(const LipschitzConstants& fc,
                                        const LipschitzConstants& bc, double kstar,
                                        double kdiamond) {
    ContractionMargin m;
    m.kstar = kstar;
    m.kdiamond = kdiamond;
    const double budget = kstar * fc.lip_x1 + kdiamond * bc.lip_x1;
    m.theta = 1.0 - budget;
    if (!(m.theta > 0.0)) {
        throw SmallnessViolated("smallness condition violated: K* L_F + K<> L_B = " +
                                    std::to_string(budget),
                                budget);
    }
    m.weight = budget > 0.0 ? (kstar * fc.lip_x0 + kdiamond * bc.lip_x0) / budget : 0.0;
    return m;
}

ContractionMargin contraction_margin(const ProblemSpec& spec, double kstar, double kdiamond) {
    return margin_from_constants(spec.f_const, spec.b_const, kstar, kdiamond);
}

std::vector<double> contraction_surrogate(const ProblemSpec& spec,
                                          const ContractionMargin& margin, TimeGrid grid,
                                          std::uint64_t probe_seed) {
    const WorkingProblem w = make_working(spec);
    return surrogate_range(w, grid, 0, grid.n_steps, margin, probe_seed);
}

std::vector<std::size_t> split_horizon(const ProblemSpec& spec,
                                       const ContractionMargin& margin, TimeGrid grid,
                                       std::uint64_t probe_seed) {
    const WorkingProblem w = make_working(spec);
    return split_range(w, grid, 0, grid.n_steps, margin, probe_seed);
}

SolutionPath picard_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                          TimeGrid grid, const ContractionMargin& margin,
                          const PicardOptions& opts, SolveReport* report) {
    const WorkingProblem w = make_working(spec);
    SolutionPath sol;
    sol.grid = grid;
    std::vector<StateVector> states;
    PieceStats st;
    picard_range(w, noise, grid, 0, grid.n_steps, spec.u0, margin, opts, states, &st);
    sol.states = std::move(states);
    sol.iterations = st.iterations;
    sol.contraction_ratios = st.ratios;
    sol.kappa_partition = {0.0, grid.horizon};
    sol.converged = true;
    if (report) {
        report->total_iterations = st.iterations;
        report->pieces.push_back(std::move(st));
        report->kappa_partition = sol.kappa_partition;
    }
    return sol;
}

SolutionPath glue_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                        TimeGrid grid, const ContractionMargin& margin,
                        const PicardOptions& opts, SolveReport* report) {
    const WorkingProblem w = make_working(spec);
    SolutionPath sol = run_glue(w, spec, noise, grid, margin, opts, report);
    sol.freeze_partition = {0.0, grid.horizon};
    if (report) report->freeze_partition = sol.freeze_partition;
    return sol;
}

SolutionPath freeze_timedep_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                                  TimeGrid grid, const ContractionMargin& margin,
                                  const PicardOptions& opts, SolveReport* report) {
    if (!spec.time_dependent || !spec.eigenvalues_at) {
        return glue_solve(spec, noise, grid, margin, opts, report);
    }
    const std::size_t K = spec.op.mode_count();
    const std::size_t n = grid.n_steps;

    std::vector<std::vector<Complex>> lam(n + 1);
    bool constant = true;
    for (std::size_t j = 0; j <= n; ++j) {
        lam[j] = spec.eigenvalues_at(grid.t(j));
        if (lam[j].size() != K)
            throw DimensionMismatch("time-dependent eigenvalue family has wrong size");
        for (std::size_t k = 0; k < K; ++k) {
            if (lam[j][k] != spec.op.eigenvalues()[k]) constant = false;
        }
    }
    if (constant) {
        // bitwise degeneracy to the autonomous path
        return glue_solve(spec, noise, grid, margin, opts, report);
    }

    // oscillation of a candidate partition, anchored at piece starts
    auto partition_eps = [&](const std::vector<std::size_t>& breaks) {
        double worst = 0.0;
        for (std::size_t m = 0; m + 1 < breaks.size(); ++m) {
            const auto& anchor = lam[breaks[m]];
            for (std::size_t j = breaks[m]; j <= breaks[m + 1]; ++j) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double dl = std::abs(lam[j][k] - anchor[k]);
                    const double scale = std::abs(anchor[k] + spec.op.shift());
                    worst = std::max(worst, dl / scale);
                }
            }
        }
        return worst;
    };
    auto uniform_breaks = [&](std::size_t pieces) {
        std::vector<std::size_t> b(pieces + 1);
        for (std::size_t m = 0; m <= pieces; ++m) b[m] = n * m / pieces;
        return b;
    };

    std::vector<std::size_t> breaks;
    double eps = 0.0;
    bool found = false;
    for (std::size_t pieces = std::max<std::size_t>(1, opts.min_freeze_pieces); pieces <= n;
         pieces *= 2) {
        breaks = uniform_breaks(pieces);
        eps = partition_eps(breaks);
        if (eps <= 0.5 * margin.theta) {
            found = true;
            break;
        }
    }
    if (!found) {
        throw FreezingFailed("relative oscillation exceeds theta/2 at grid resolution");
    }

    SolutionPath sol;
    sol.grid = grid;
    std::vector<StateVector> states(n + 1);
    states[0] = spec.u0;
    for (std::size_t b : breaks) sol.freeze_partition.push_back(grid.t(b));

    for (std::size_t m = 0; m + 1 < breaks.size(); ++m) {
        const std::size_t b0 = breaks[m], b1 = breaks[m + 1];
        WorkingProblem w = make_working(spec);
        w.A = spec.op.with_eigenvalues(lam[b0]);

        // move A(t) - A(s_m) into the drift when the piece is not constant
        double piece_osc = 0.0;
        for (std::size_t j = b0; j <= b1; ++j)
            for (std::size_t k = 0; k < K; ++k)
                piece_osc = std::max(piece_osc, std::abs(lam[j][k] - lam[b0][k]));
        if (piece_osc > 0.0) {
            const std::vector<Complex> anchor = lam[b0];
            const auto* lam_ptr = &lam;
            const double t0 = grid.t(0);
            const double dt = grid.dt();
            DriftFn correction = [anchor, lam_ptr, t0, dt](double t, const StateVector& x) {
                const std::size_t j = static_cast<std::size_t>(std::llround((t - t0) / dt));
                const auto& l = (*lam_ptr)[j];
                StateVector r(x.size());
                for (std::size_t k = 0; k < x.size(); ++k) r[k] = -(l[k] - anchor[k]) * x[k];
                return r;
            };
            w.F = combine_drift(w.F, std::move(correction));
            w.fc.lip_x1 += eps;
            w.fc.growth += eps;
        }
        const ContractionMargin piece_margin =
            margin_from_constants(w.fc, w.bc, margin.kstar, margin.kdiamond);
        solve_with_splitting(w, noise, grid, b0, b1, piece_margin, opts, states, report, sol);
    }
    sol.states = std::move(states);
    sol.converged = true;
    if (report) {
        report->kappa_partition = sol.kappa_partition;
        report->freeze_partition = sol.freeze_partition;
    }
    return sol;
}

double trace_embedding_constant(const SpectralOperator& A, double p) {
    TraceNormEvaluator ev(A, 1.0 - 1.0 / p, p);
    double worst = 0.0;
    for (std::size_t k = 0; k < A.mode_count(); ++k) {
        worst = std::max(worst, ev.evaluate(A.basis_vector(k)).seminorm);
    }
    return 1.0 + worst;
}

std::vector<double> trace_norms(const SolutionPath& solution, const SpectralOperator& A,
                                double p) {
    TraceNormEvaluator ev(A, 1.0 - 1.0 / p, p);
    std::vector<double> out(solution.states.size());
    for (std::size_t j = 0; j < solution.states.size(); ++j)
        out[j] = ev.norm(solution.states[j]);
    return out;
}

LocalSolveResult local_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                             TimeGrid grid, const ContractionMargin& margin,
                             const PicardOptions& opts, SolveReport* report) {
    if (!spec.has_local || (!spec.F2 && !spec.B2)) {
        return {glue_solve(spec, noise, grid, margin, opts, report), 0};
    }
    if (spec.time_dependent)
        throw Error("localization assumes an autonomous operator");
    const int n_max = spec.n_max > 0 ? spec.n_max : 1;
    const double p = spec.p;
    auto ev = std::make_shared<TraceNormEvaluator>(spec.op, 1.0 - 1.0 / p, p);
    const double c_emb = trace_embedding_constant(spec.op, p);

    const double tr_u0 = ev->norm(spec.u0);
    if (tr_u0 >= static_cast<double>(n_max)) {
        SolutionPath sol;
        sol.grid = grid;
        sol.states = {spec.u0};
        sol.stopping_time = 0.0;
        return {std::move(sol), n_max};
    }

    const int n_lo = std::max(1, static_cast<int>(std::floor(tr_u0)) + 1);
    for (int level = n_lo; level <= n_max; ++level) {
        const double radius = static_cast<double>(level);
        WorkingProblem w = make_working(spec);
        if (spec.F2) {
            DriftFn f2 = spec.F2;
            DriftFn clamped = [ev, radius, f2](double t, const StateVector& x) {
                const double tr = ev->norm(x);
                if (tr <= radius || tr == 0.0) return f2(t, x);
                StateVector y = x;
                y *= Complex(radius / tr, 0.0);
                return f2(t, y);
            };
            w.F = combine_drift(w.F, std::move(clamped));
            w.fc.lip_x0 += (spec.f2_lip ? spec.f2_lip(radius) : 0.0) * c_emb;
        }
        if (spec.B2) {
            NoiseFn b2 = spec.B2;
            NoiseFn clamped = [ev, radius, b2](double t, const StateVector& x) {
                const double tr = ev->norm(x);
                if (tr <= radius || tr == 0.0) return b2(t, x);
                StateVector y = x;
                y *= Complex(radius / tr, 0.0);
                return b2(t, y);
            };
            w.B = combine_noise(w.B, std::move(clamped));
            w.bc.lip_x0 += (spec.b2_lip ? spec.b2_lip(radius) : 0.0) * c_emb;
        }
        const ContractionMargin level_margin =
            margin_from_constants(w.fc, w.bc, margin.kstar, margin.kdiamond);

        SolveReport local_report;
        SolutionPath sol;
        sol.grid = grid;
        std::vector<StateVector> states(grid.n_steps + 1);
        states[0] = spec.u0;
        solve_with_splitting(w, noise, grid, 0, grid.n_steps, level_margin, opts, states,
                             &local_report, sol);
        sol.states = std::move(states);
        sol.converged = true;

        std::size_t hit = sol.states.size();
        for (std::size_t j = 0; j < sol.states.size(); ++j) {
            if (ev->norm(sol.states[j]) >= radius) {
                hit = j;
                break;
            }
        }
        if (report && (hit == sol.states.size() || level == n_max)) *report = local_report;
        if (hit == sol.states.size()) {
            return {std::move(sol), level};  // never reached the radius: global solve
        }
        if (level == n_max) {
            sol.stopping_time = grid.t(hit);
            sol.states.resize(hit + 1);
            return {std::move(sol), level};
        }
    }
    throw Error("unreachable: localization level loop");
}

double stopped_convolution_check(const SpectralOperator& A,
                                 std::span<const NoiseOperator> g_steps,
                                 const OuIntegralProvider& noise, std::size_t tau_index) {
    const TimeGrid& grid = noise.grid();
    if (tau_index > grid.n_steps) throw DimensionMismatch("stopping index beyond the grid");
    const SolutionPath full = stoch_convolution(A, g_steps, noise);
    std::vector<NoiseOperator> trunc(g_steps.begin(), g_steps.end());
    for (std::size_t m = tau_index; m < trunc.size(); ++m)
        trunc[m] = NoiseOperator(A.mode_count(), trunc[m].noise_dim());
    const SolutionPath stopped = stoch_convolution(A, trunc, noise);

    double worst = 0.0;
    for (std::size_t j = 0; j <= grid.n_steps; ++j) {
        const std::size_t jt = std::min(j, tau_index);
        StateVector d = full.states[jt];
        d -= stopped.states[jt];
        worst = std::max(worst, norm_alpha(A, 0.0, d));

        StateVector prop = semigroup_apply(A, grid.t(j) - grid.t(jt), full.states[jt]);
        prop -= stopped.states[j];
        worst = std::max(worst, norm_alpha(A, 0.0, prop));
    }
    return worst;
}

double strong_residual(const SolutionPath& solution, const ProblemSpec& spec,
                       const OuIntegralProvider& noise) {
    const std::size_t K = spec.op.mode_count();
    const double dt = solution.grid.dt();
    const std::size_t n_avail = solution.states.size() - 1;
    const std::size_t M = spec.noise_dim;

    DriftFn drift_total = combine_drift(spec.F, spec.F2);
    NoiseFn noise_total = combine_noise(spec.B, spec.B2);

    StateVector au_sum(K), f_sum(K), bdw_sum(K);
    double worst = 0.0;
    std::vector<double> dw(M);
    for (std::size_t j = 0; j <= n_avail; ++j) {
        const StateVector& u = solution.states[j];
        StateVector r = u;
        r += au_sum;
        r -= spec.u0;
        r -= f_sum;
        r -= bdw_sum;
        worst = std::max(worst, norm_alpha(spec.op, 0.0, r));
        if (j == n_avail) break;

        const double t = solution.grid.t(j);
        if (spec.time_dependent && spec.eigenvalues_at) {
            const auto l = spec.eigenvalues_at(t);
            for (std::size_t k = 0; k < K; ++k)
                au_sum[k] += (l[k] + spec.op.shift()) * u[k] * dt;
        } else {
            for (std::size_t k = 0; k < K; ++k) au_sum[k] += spec.op.mu(k) * u[k] * dt;
        }
        if (drift_total) {
            StateVector fv = drift_total(t, u);
            fv *= Complex(dt, 0.0);
            f_sum += fv;
        }
        if (!spec.f_steps.empty()) {
            StateVector fv = spec.f_steps[j];
            fv *= Complex(dt, 0.0);
            f_sum += fv;
        }
        for (std::size_t i = 0; i < M; ++i) dw[i] = noise.dW(j, i);
        if (noise_total) {
            bdw_sum += noise_total(t, u).apply(dw);
        }
        if (!spec.b_steps.empty()) {
            bdw_sum += spec.b_steps[j].apply(dw);
        }
    }
    return worst;
}

void validate_problem_spec(const ProblemSpec& spec, std::uint64_t seed, std::size_t trials) {
    const std::size_t K = spec.op.mode_count();
    const double slack = 1e-6;
    auto random_state = [&](std::uint64_t trial, std::uint64_t side, double scale) {
        StateVector x(K);
        for (std::size_t k = 0; k < K; ++k) {
            double a, b;
            rng::gaussian_pair(rng::key(seed, trial * 4 + side, rng::Stream::validate, k),
                               &a, &b);
            x[k] = Complex(a, b) * scale / (std::sqrt(2.0) * std::abs(spec.op.mu(k)));
        }
        return x;
    };

    for (std::size_t trial = 0; trial < trials; ++trial) {
        const double t =
            spec.horizon * rng::uniform(rng::key(seed, trial, rng::Stream::validate, 99));
        const double scale = std::pow(10.0, static_cast<double>(trial % 3) - 1.0);
        const StateVector x = random_state(trial, 0, scale);
        const StateVector y = random_state(trial, 1, scale);
        StateVector d = x;
        d -= y;
        const double d1 = norm_alpha(spec.op, 1.0, d);
        const double d0 = norm_alpha(spec.op, 0.0, d);

        if (spec.F) {
            StateVector fd = spec.F(t, x);
            fd -= spec.F(t, y);
            const double lhs = norm_alpha(spec.op, 0.0, fd);
            const double rhs = spec.f_const.lip_x1 * d1 + spec.f_const.lip_x0 * d0;
            if (lhs > rhs * (1.0 + slack) + 1e-12) {
                throw InvalidScenario("declared drift Lipschitz constants are violated");
            }
            const double growth = norm_alpha(spec.op, 0.0, spec.F(t, x));
            const double cap =
                spec.f_const.growth * (1.0 + norm_alpha(spec.op, 1.0, x));
            if (growth > cap * (1.0 + slack) + 1e-12) {
                throw InvalidScenario("declared drift growth constant is violated");
            }
        }
        if (spec.B) {
            NoiseOperator bd = spec.B(t, x);
            bd -= spec.B(t, y);
            const double lhs = bd.hs_norm(spec.op, 0.5);
            const double rhs = spec.b_const.lip_x1 * d1 + spec.b_const.lip_x0 * d0;
            if (lhs > rhs * (1.0 + slack) + 1e-12) {
                throw InvalidScenario("declared noise Lipschitz constants are violated");
            }
            const double growth = spec.B(t, x).hs_norm(spec.op, 0.5);
            const double cap =
                spec.b_const.growth * (1.0 + norm_alpha(spec.op, 1.0, x));
            if (growth > cap * (1.0 + slack) + 1e-12) {
                throw InvalidScenario("declared noise growth constant is violated");
            }
        }
    }

    if (spec.has_local && (spec.F2 || spec.B2)) {
        TraceNormEvaluator ev(spec.op, 1.0 - 1.0 / spec.p, spec.p);
        for (double radius : {1.0, std::max(1.0, static_cast<double>(spec.n_max))}) {
            for (std::size_t trial = 0; trial < trials / 2; ++trial) {
                const double t = spec.horizon *
                                 rng::uniform(rng::key(seed, trial, rng::Stream::validate, 7));
                StateVector x = random_state(trial, 2, 1.0);
                StateVector y = random_state(trial, 3, 1.0);
                const double tx = ev.norm(x), ty = ev.norm(y);
                if (tx > 0.0) x *= Complex(0.9 * radius / tx, 0.0);
                if (ty > 0.0) y *= Complex(0.9 * radius / ty, 0.0);
                StateVector d = x;
                d -= y;
                const double dtr = ev.norm(d);
                if (spec.F2 && spec.f2_lip) {
                    StateVector fd = spec.F2(t, x);
                    fd -= spec.F2(t, y);
                    const double lhs = norm_alpha(spec.op, 0.0, fd);
                    if (lhs > spec.f2_lip(radius) * dtr * (1.0 + slack) + 1e-12) {
                        throw InvalidScenario(
                            "declared local drift radius constants are violated");
                    }
                }
                if (spec.B2 && spec.b2_lip) {
                    NoiseOperator bd = spec.B2(t, x);
                    bd -= spec.B2(t, y);
                    const double lhs = bd.hs_norm(spec.op, 0.5);
                    if (lhs > spec.b2_lip(radius) * dtr * (1.0 + slack) + 1e-12) {
                        throw InvalidScenario(
                            "declared local noise radius constants are violated");
                    }
                }
            }
        }
    }
}

}  // namespace mrl
