#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "maxreglab/maxreg.hpp"
#include "maxreglab/solver.hpp"
#include "maxreglab/summation.hpp"

using namespace mrl;

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

ProblemSpec linear_operator_drift_spec(double c_x1, double c_x0, std::size_t K = 4) {
    // F(u) = c_x1 A u + c_x0 u on a self-adjoint dyadic spectrum
    ProblemSpec spec;
    std::vector<Complex> eigs;
    for (std::size_t k = 0; k < K; ++k) eigs.emplace_back(std::ldexp(1.0, static_cast<int>(k)), 0.0);
    spec.op = SpectralOperator::make(std::move(eigs), 0.0);
    if (c_x1 != 0.0 || c_x0 != 0.0) {
        const SpectralOperator A = spec.op;
        spec.F = [A, c_x1, c_x0](double, const StateVector& x) {
            StateVector r(x.size());
            for (std::size_t k = 0; k < x.size(); ++k)
                r[k] = (c_x1 * A.mu(k) + c_x0) * x[k];
            return r;
        };
        spec.f_const = {std::abs(c_x1), std::abs(c_x0),
                        std::abs(c_x1) + std::abs(c_x0) + 0.1};
    }
    spec.u0 = StateVector(spec.op.mode_count());
    for (std::size_t k = 0; k < spec.op.mode_count(); ++k)
        spec.u0[k] = 1.0 / std::pow(1.0 + static_cast<double>(k), 2.0);
    spec.horizon = 1.0;
    spec.p = 2.0;
    spec.noise_dim = 1;
    return spec;
}

NoiseFn halfpower_noise(const SpectralOperator& A, double c) {
    return [A, c](double, const StateVector& x) {
        NoiseOperator g(x.size(), 1);
        for (std::size_t k = 0; k < x.size(); ++k)
            g.at(k, 0) = c * std::sqrt(A.mu(k)) * x[k];
        return g;
    };
}

// discrete fixed point of the linear problem u' + A u = (c1 A + c0) u, computed
// directly from the one-step recursion
std::vector<StateVector> linear_recursion_oracle(const SpectralOperator& A,
                                                 const StateVector& u0, TimeGrid grid,
                                                 double c1, double c0) {
    const auto coeffs = ou_coeffs_all(A, grid.dt());
    std::vector<StateVector> states(grid.n_steps + 1);
    states[0] = u0;
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        StateVector next(u0.size());
        for (std::size_t k = 0; k < u0.size(); ++k) {
            const Complex gain = coeffs[k].det_gain * (c1 * A.mu(k) + c0);
            next[k] = (coeffs[k].decay + gain) * states[n][k];
        }
        states[n + 1] = std::move(next);
    }
    return states;
}

double max_x1_distance(const SolutionPath& a, const std::vector<StateVector>& b,
                       const SpectralOperator& A) {
    double worst = 0.0;
    for (std::size_t j = 0; j < a.states.size(); ++j) {
        StateVector d = a.states[j];
        d -= b[j];
        worst = std::max(worst, norm_alpha(A, 1.0, d));
    }
    return worst;
}

}  // namespace

TEST_CASE("contraction margin") {
    ProblemSpec spec = linear_operator_drift_spec(0.0, 0.0);
    auto m = contraction_margin(spec, 1.0, kInvSqrt2);
    CHECK(m.theta == doctest::Approx(1.0));
    CHECK(m.weight == 0.0);

    // sharp Hilbert condition L_F + L_B / sqrt(2) < 1
    LipschitzConstants fc{0.5, 0.0, 1.0};
    LipschitzConstants bc{0.7, 0.0, 1.0};
    auto m2 = margin_from_constants(fc, bc, 1.0, kInvSqrt2);
    CHECK(m2.theta == doctest::Approx(1.0 - (0.5 + 0.7 / std::sqrt(2.0))));

    LipschitzConstants fc_bad{0.9, 0.0, 1.0};
    LipschitzConstants bc_bad{0.3 * std::sqrt(2.0), 0.0, 1.0};
    CHECK_THROWS_AS(margin_from_constants(fc_bad, bc_bad, 1.0, kInvSqrt2),
                    SmallnessViolated);

    LipschitzConstants fc_w{0.2, 0.4, 1.0};
    auto m3 = margin_from_constants(fc_w, {}, 1.0, kInvSqrt2);
    CHECK(m3.weight == doctest::Approx(0.4 / 0.2));
}

TEST_CASE("trivial problem converges in one application") {
    ProblemSpec spec = linear_operator_drift_spec(0.0, 0.0);
    TimeGrid grid{1.0, 64};
    DirectOuProvider noise(1, 0, grid, 1);
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    auto sol = picard_solve(spec, noise, grid, margin);
    CHECK(sol.iterations == 1);
    CHECK(sol.converged);
    for (std::size_t j = 0; j <= grid.n_steps; ++j) {
        auto expected = semigroup_apply(spec.op, grid.t(j), spec.u0);
        StateVector d = sol.states[j];
        d -= expected;
        CHECK(norm_alpha(spec.op, 0.0, d) < 1e-12);
    }
}

TEST_CASE("linear drift: contraction rate and resolvent oracle") {
    const double c1 = 0.3;  // K* |c1| = 0.3
    ProblemSpec spec = linear_operator_drift_spec(c1, 0.0);
    TimeGrid grid{1.0, 256};
    DirectOuProvider noise(3, 0, grid, 1);
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    CHECK(margin.theta == doctest::Approx(0.7));

    PicardOptions opts;
    opts.tol = 1e-12;
    SolveReport report;
    auto sol = picard_solve(spec, noise, grid, margin, opts, &report);

    // asymptotic measured contraction ratio
    REQUIRE(sol.contraction_ratios.size() >= 3);
    double tail_ratio = 0.0;
    for (std::size_t i = sol.contraction_ratios.size() - 3; i < sol.contraction_ratios.size();
         ++i)
        tail_ratio = std::max(tail_ratio, sol.contraction_ratios[i]);
    CHECK(tail_ratio <= c1 + 0.05);

    // matches the closed-form discrete resolvent recursion
    auto oracle = linear_recursion_oracle(spec.op, spec.u0, grid, c1, 0.0);
    CHECK(max_x1_distance(sol, oracle, spec.op) < 1e-9);
}

TEST_CASE("multiplicative noise scenario with theta = 0.5") {
    // K* L_F + K<> L_B = 0.3 + 0.2 = 0.5; ensemble contraction ratios must
    // stay below 1 - theta/2 + 0.05 = 0.80
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.0);
    spec.B = halfpower_noise(spec.op, 0.2 * std::sqrt(2.0));
    spec.b_const = {0.2 * std::sqrt(2.0), 0.0, 0.4};
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    CHECK(margin.theta == doctest::Approx(0.5));

    TimeGrid grid{1.0, 128};
    PicardOptions opts;
    opts.fixed_iterations = 10;
    const std::size_t n_paths = 40;
    const int iters = 10;
    std::vector<std::vector<double>> deltas(n_paths);
    for (std::size_t path = 0; path < n_paths; ++path) {
        DirectOuProvider noise(17, path, grid, 1);
        SolveReport report;
        picard_solve(spec, noise, grid, margin, opts, &report);
        deltas[path] = report.pieces.front().deltas;
        REQUIRE(static_cast<int>(deltas[path].size()) == iters);
    }
    // ensemble L^p ratios across common iteration indices
    const double p = spec.p;
    std::vector<double> ens(iters);
    for (int m = 0; m < iters; ++m) {
        KahanSum s;
        for (std::size_t path = 0; path < n_paths; ++path)
            s.add(std::pow(deltas[path][m], p));
        ens[m] = std::pow(s.value() / static_cast<double>(n_paths), 1.0 / p);
    }
    for (int m = 1; m < iters; ++m) {
        if (ens[m - 1] > 1e-14) {
            CHECK(ens[m] / ens[m - 1] <= 1.0 - 0.5 * margin.theta + 0.05);
        }
    }

    // iteration count of the adaptive solve obeys the log bound
    PicardOptions adaptive;
    adaptive.tol = 1e-8;
    DirectOuProvider noise(17, 0, grid, 1);
    auto sol = picard_solve(spec, noise, grid, margin, adaptive);
    const int cap = static_cast<int>(
        std::ceil(std::log(adaptive.tol) / std::log(1.0 - 0.5 * margin.theta + 0.05)));
    CHECK(sol.iterations <= cap);
}

TEST_CASE("horizon splitting") {
    // weight 0: single interval
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.0);
    TimeGrid grid{1.0, 128};
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    auto breaks = split_horizon(spec, margin, grid);
    CHECK(breaks.size() == 2);
    CHECK(breaks.front() == 0);
    CHECK(breaks.back() == grid.n_steps);

    // large weight: partition shrinks but still covers [0, T]
    ProblemSpec heavy = linear_operator_drift_spec(0.2, 20.0);
    auto margin_h = contraction_margin(heavy, 1.0, kInvSqrt2);
    CHECK(margin_h.weight == doctest::Approx(100.0));
    auto breaks_h = split_horizon(heavy, margin_h, grid);
    CHECK(breaks_h.size() > 2);
    for (std::size_t m = 0; m + 1 < breaks_h.size(); ++m)
        CHECK(breaks_h[m] < breaks_h[m + 1]);
    CHECK(breaks_h.front() == 0);
    CHECK(breaks_h.back() == grid.n_steps);
    const std::size_t kappa_len = breaks_h[1] - breaks_h[0];
    for (std::size_t m = 0; m + 1 < breaks_h.size(); ++m)
        CHECK(breaks_h[m + 1] - breaks_h[m] <= kappa_len + 1);
}

TEST_CASE("glued solve equals the unsplit fixed point") {
    // stable linear problem with a lower-order term large enough to force
    // splitting (the weight only sees the magnitude of the constants)
    ProblemSpec spec = linear_operator_drift_spec(0.2, -20.0);
    TimeGrid grid{1.0, 256};
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);

    DirectOuProvider noise(29, 0, grid, 1);
    PicardOptions opts;
    opts.tol = 1e-12;
    SolveReport report;
    auto glued = glue_solve(spec, noise, grid, margin, opts, &report);
    CHECK(report.pieces.size() >= 2);

    auto oracle = linear_recursion_oracle(spec.op, spec.u0, grid, 0.2, -20.0);
    CHECK(max_x1_distance(glued, oracle, spec.op) < 1e-8);

    // measured ratios on every piece stay below 1 - theta/2 + 0.05
    for (const auto& piece : report.pieces) {
        for (double r : piece.ratios) CHECK(r <= 1.0 - 0.5 * margin.theta + 0.05);
    }
}

TEST_CASE("per-piece restart equals global recursion for pure decay") {
    ProblemSpec spec = linear_operator_drift_spec(0.0, 0.0);
    TimeGrid grid{2.0, 128};
    DirectOuProvider noise(5, 0, grid, 1);
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    auto a = glue_solve(spec, noise, grid, margin);
    auto b = picard_solve(spec, noise, grid, margin);
    for (std::size_t j = 0; j <= grid.n_steps; ++j) {
        for (std::size_t k = 0; k < spec.op.mode_count(); ++k) {
            CHECK(a.states[j][k] == b.states[j][k]);
        }
    }
}

TEST_CASE("a-priori bound: X1 norm controlled by the data") {
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.0);
    spec.B = halfpower_noise(spec.op, 0.2);
    spec.b_const = {0.2, 0.0, 0.4};
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    const double trace_u0 =
        interp_norm_real(spec.op, 1.0 - 1.0 / spec.p, spec.p, spec.u0).norm;

    for (std::size_t n_steps : {128u, 256u}) {
        TimeGrid grid{1.0, n_steps};
        KahanSum acc;
        const std::size_t n_paths = 24;
        for (std::size_t path = 0; path < n_paths; ++path) {
            DirectOuProvider noise(31, path, grid, 1);
            auto sol = glue_solve(spec, noise, grid, margin);
            std::vector<double> x1(sol.states.size());
            for (std::size_t j = 0; j < sol.states.size(); ++j)
                x1[j] = norm_alpha(spec.op, 1.0, sol.states[j]);
            const double norm = lp_time_norm(x1, grid.dt(), spec.p);
            acc.add(std::pow(norm, spec.p));
        }
        const double lp_ens =
            std::pow(acc.value() / static_cast<double>(n_paths), 1.0 / spec.p);
        const double c = lp_ens / (1.0 + trace_u0);
        CHECK(std::isfinite(c));
        CHECK(c < 10.0);
        MESSAGE("a-priori constant at n=", n_steps, ": ", c);
    }
}

TEST_CASE("freezing: constant family is bit-identical to the autonomous solver") {
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.0);
    spec.B = halfpower_noise(spec.op, 0.2);
    spec.b_const = {0.2, 0.0, 0.4};
    auto frozen_eigs = std::vector<Complex>(spec.op.eigenvalues().begin(),
                                            spec.op.eigenvalues().end());
    spec.time_dependent = true;
    spec.eigenvalues_at = [frozen_eigs](double) { return frozen_eigs; };

    TimeGrid grid{1.0, 128};
    DirectOuProvider noise(41, 2, grid, 1);
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    auto frozen = freeze_timedep_solve(spec, noise, grid, margin);

    ProblemSpec autonomous = spec;
    autonomous.time_dependent = false;
    autonomous.eigenvalues_at = nullptr;
    auto direct = glue_solve(autonomous, noise, grid, margin);

    REQUIRE(frozen.states.size() == direct.states.size());
    for (std::size_t j = 0; j < frozen.states.size(); ++j) {
        for (std::size_t k = 0; k < spec.op.mode_count(); ++k) {
            CHECK(frozen.states[j][k].real() == direct.states[j][k].real());
            CHECK(frozen.states[j][k].imag() == direct.states[j][k].imag());
        }
    }
}

TEST_CASE("freezing: ramped eigenvalues against the per-mode oracle") {
    // lambda_k(t) = lambda_k (1 + 0.2 t / T), f = B = 0: the exact solution is
    // u_k(t) = exp(-int_0^t mu_k(s) ds) u_k(0) with the closed-form integral
    ProblemSpec spec = linear_operator_drift_spec(0.0, 0.0);
    const auto base = std::vector<Complex>(spec.op.eigenvalues().begin(),
                                           spec.op.eigenvalues().end());
    const double T = 1.0;
    spec.time_dependent = true;
    spec.eigenvalues_at = [base, T](double t) {
        std::vector<Complex> l(base.size());
        for (std::size_t k = 0; k < base.size(); ++k)
            l[k] = base[k] * (1.0 + 0.2 * t / T);
        return l;
    };
    // the drift correction is Lipschitz in X1; declare its budget
    spec.F = nullptr;
    spec.f_const = {0.0, 0.0, 0.0};

    ContractionMargin margin;
    margin.theta = 0.5;  // freezing budget: oscillation must stay below 1/4
    margin.weight = 0.0;
    margin.kstar = 1.0;
    margin.kdiamond = kInvSqrt2;

    auto exact_at = [&](double t) {
        StateVector u(base.size());
        for (std::size_t k = 0; k < base.size(); ++k) {
            const Complex integral = base[k] * (t + 0.1 * t * t / T);
            u[k] = std::exp(-integral) * spec.u0[k];
        }
        return u;
    };

    // refine the partition together with the grid: the freezing pieces are
    // made of grid cells, so the natural refinement halves both
    double prev_err = std::numeric_limits<double>::infinity();
    std::vector<double> errors;
    for (int level = 0; level < 4; ++level) {
        const std::size_t pieces = std::size_t{1} << level;
        TimeGrid grid{T, 256u << level};
        DirectOuProvider noise(43, 0, grid, 1);
        PicardOptions opts;
        opts.min_freeze_pieces = pieces;
        SolveReport report;
        auto sol = freeze_timedep_solve(spec, noise, grid, margin, opts, &report);
        REQUIRE(report.freeze_partition.size() >= pieces + 1);
        double err = 0.0;
        for (std::size_t j = 0; j <= grid.n_steps; ++j) {
            StateVector d = sol.states[j];
            d -= exact_at(grid.t(j));
            err = std::max(err, norm_alpha(spec.op, 0.0, d));
        }
        errors.push_back(err);
        CHECK(err < prev_err);
        prev_err = err;
    }
    MESSAGE("freezing refinement errors: ", errors[0], " ", errors[1], " ", errors[2], " ",
            errors[3]);
    CHECK(errors.back() < 0.5 * errors.front());

    // partition oscillation check: measured eps on the chosen partition <= theta/2
    TimeGrid grid{T, 256};
    DirectOuProvider noise(43, 0, grid, 1);
    PicardOptions opts;
    SolveReport report;
    freeze_timedep_solve(spec, noise, grid, margin, opts, &report);
    const auto& parts = report.freeze_partition;
    double eps = 0.0;
    for (std::size_t m = 0; m + 1 < parts.size(); ++m) {
        const auto anchor = spec.eigenvalues_at(parts[m]);
        for (double t = parts[m]; t <= parts[m + 1] + 1e-12; t += grid.dt()) {
            const auto l = spec.eigenvalues_at(std::min(t, T));
            for (std::size_t k = 0; k < anchor.size(); ++k) {
                eps = std::max(eps, std::abs(l[k] - anchor[k]) / std::abs(anchor[k]));
            }
        }
    }
    CHECK(eps <= 0.5 * margin.theta + 1e-12);
}

TEST_CASE("localization: plain problem passes through") {
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.0);
    TimeGrid grid{1.0, 64};
    DirectOuProvider noise(51, 0, grid, 1);
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    auto local = local_solve(spec, noise, grid, margin);
    auto glued = glue_solve(spec, noise, grid, margin);
    CHECK_FALSE(local.path.stopping_time.has_value());
    for (std::size_t j = 0; j <= grid.n_steps; ++j)
        for (std::size_t k = 0; k < spec.op.mode_count(); ++k)
            CHECK(local.path.states[j][k] == glued.states[j][k]);
}

TEST_CASE("localization: quadratic blow-up at log 2") {
    // du = (-u + u^2) dt, u0 = 2: u(t) = 2 / (2 - e^t) explodes at t* = ln 2.
    // First re-derive the closed form with a fine explicit integrator.
    {
        double u = 2.0;
        const double h = 1e-6;
        double t = 0.0;
        while (u < 1e3) {
            const double k1 = -u + u * u;
            const double k2 = -(u + 0.5 * h * k1) + (u + 0.5 * h * k1) * (u + 0.5 * h * k1);
            u += h * k2;
            t += h;
            const double closed = 2.0 / (2.0 - std::exp(t));
            if (u < 500.0) CHECK(std::abs(u - closed) / closed < 1e-3);
        }
        CHECK(t == doctest::Approx(std::log(2.0)).epsilon(0.01));
    }

    ProblemSpec spec;
    spec.op = SpectralOperator::make({{1.0, 0.0}}, 0.0);
    spec.u0 = StateVector(1);
    spec.u0[0] = 2.0;
    spec.horizon = 0.78125;
    spec.p = 2.0;
    spec.noise_dim = 1;
    spec.has_local = true;
    spec.n_max = 100;
    spec.F2 = [](double, const StateVector& x) {
        StateVector r(1);
        r[0] = x[0] * x[0];
        return r;
    };
    const double tau1 = interp_norm_real(spec.op, 0.5, 2.0, spec.op.basis_vector(0)).norm;
    spec.f2_lip = [tau1](double radius) { return 2.0 * radius / (tau1 * tau1); };

    TimeGrid grid{spec.horizon, 4096};
    DirectOuProvider noise(61, 0, grid, 1);
    ContractionMargin margin;
    margin.kstar = 1.0;
    margin.kdiamond = kInvSqrt2;
    auto result = local_solve(spec, noise, grid, margin);
    REQUIRE(result.path.stopping_time.has_value());
    const double t_star = std::log(2.0);
    CHECK(std::abs(*result.path.stopping_time - t_star) / t_star < 0.05);
    MESSAGE("blow-up stop time: ", *result.path.stopping_time, " vs ln 2 = ", t_star);

    // states end at the stopping index
    CHECK(result.path.states.size() ==
          static_cast<std::size_t>(*result.path.stopping_time / grid.dt() + 1.5));
}

TEST_CASE("localization: linear growth runs to the horizon") {
    ProblemSpec spec;
    spec.op = SpectralOperator::make({{1.0, 0.0}}, 0.0);
    spec.u0 = StateVector(1);
    spec.u0[0] = 2.0;
    spec.horizon = 2.0;
    spec.p = 2.0;
    spec.noise_dim = 1;
    spec.has_local = true;
    spec.n_max = 50;
    const double tau1 = interp_norm_real(spec.op, 0.5, 2.0, spec.op.basis_vector(0)).norm;
    // saturated quadratic: linear growth in the trace norm
    spec.F2 = [tau1](double, const StateVector& x) {
        StateVector r(1);
        const double tr = std::abs(x[0]) * tau1;
        r[0] = x[0] * x[0] / (1.0 + tr);
        return r;
    };
    spec.f2_lip = [tau1](double radius) { return 3.0 * (1.0 + radius) / (tau1 * tau1); };

    TimeGrid grid{spec.horizon, 2048};
    DirectOuProvider noise(71, 0, grid, 1);
    ContractionMargin margin;
    margin.kstar = 1.0;
    margin.kdiamond = kInvSqrt2;
    auto result = local_solve(spec, noise, grid, margin);
    CHECK_FALSE(result.path.stopping_time.has_value());
    CHECK(result.path.states.size() == grid.n_steps + 1);
}

TEST_CASE("localization consistency with the clamped global solve") {
    // when the trace norm never reaches the final level, the local solution
    // coincides bitwise with the glued solve of the clamped problem
    ProblemSpec spec;
    spec.op = SpectralOperator::make({{1.0, 0.0}}, 0.0);
    spec.u0 = StateVector(1);
    spec.u0[0] = 0.25;
    spec.horizon = 1.0;
    spec.p = 2.0;
    spec.noise_dim = 1;
    spec.has_local = true;
    spec.n_max = 12;
    spec.F2 = [](double, const StateVector& x) {
        StateVector r(1);
        r[0] = x[0] * x[0];
        return r;
    };
    const double tau1 = interp_norm_real(spec.op, 0.5, 2.0, spec.op.basis_vector(0)).norm;
    spec.f2_lip = [tau1](double radius) { return 2.0 * radius / (tau1 * tau1); };

    TimeGrid grid{1.0, 256};
    DirectOuProvider noise(81, 0, grid, 1);
    ContractionMargin margin;
    margin.kstar = 1.0;
    margin.kdiamond = kInvSqrt2;
    auto result = local_solve(spec, noise, grid, margin);
    CHECK_FALSE(result.path.stopping_time.has_value());
    CHECK(result.path.states.size() == grid.n_steps + 1);
    // level reached is the first integer above the supremum of the trace norm
    auto traces = trace_norms(result.path, spec.op, spec.p);
    double sup = 0.0;
    for (double v : traces) sup = std::max(sup, v);
    CHECK(sup < result.level_reached);
}

TEST_CASE("stopped convolution identities") {
    auto A = SpectralOperator::make({{1, 0}, {4, 1}, {9, 0}}, 0.0);
    TimeGrid grid{1.0, 128};
    DirectOuProvider noise(91, 0, grid, 2);
    std::vector<NoiseOperator> ops(grid.n_steps, NoiseOperator(3, 2));
    for (std::size_t n = 0; n < grid.n_steps; ++n)
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t i = 0; i < 2; ++i)
                ops[n].at(k, i) = Complex(0.3 + 0.1 * static_cast<double>(k),
                                          0.05 * static_cast<double>(i));

    CHECK(stopped_convolution_check(A, ops, noise, grid.n_steps) <= 1e-12);
    CHECK(stopped_convolution_check(A, ops, noise, 0) <= 1e-12);

    // tau = first time the convolution norm reaches a threshold
    auto full = stoch_convolution(A, ops, noise);
    std::size_t tau = grid.n_steps;
    for (std::size_t j = 0; j <= grid.n_steps; ++j) {
        if (norm_alpha(A, 0.0, full.states[j]) >= 0.5) {
            tau = j;
            break;
        }
    }
    CHECK(stopped_convolution_check(A, ops, noise, tau) <= 1e-10);
}

TEST_CASE("strong residual: pure semigroup converges at first order") {
    ProblemSpec spec = linear_operator_drift_spec(0.0, 0.0);
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    double prev = 0.0;
    std::vector<double> residuals;
    for (std::size_t n : {128u, 256u, 512u}) {
        TimeGrid grid{1.0, n};
        DirectOuProvider noise(95, 0, grid, 1);
        auto sol = picard_solve(spec, noise, grid, margin);
        const double r = strong_residual(sol, spec, noise);
        residuals.push_back(r);
        if (prev > 0.0) {
            const double rate = std::log2(prev / r);
            CHECK(rate > 0.8);
        }
        prev = r;
    }

    // corrupted solution: residual bounded away from zero
    TimeGrid grid{1.0, 256};
    DirectOuProvider noise(95, 0, grid, 1);
    auto sol = picard_solve(spec, noise, grid, margin);
    for (auto& s : sol.states) s *= Complex(1.1, 0.0);
    const double bad = strong_residual(sol, spec, noise);
    CHECK(bad > 0.05 * norm_alpha(spec.op, 0.0, spec.u0));
    CHECK(bad > 20.0 * residuals.back());
}

TEST_CASE("uniqueness: different initial guesses land on the same fixed point") {
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.1);
    spec.B = halfpower_noise(spec.op, 0.2);
    spec.b_const = {0.2, 0.0, 0.4};
    TimeGrid grid{1.0, 128};
    DirectOuProvider noise(101, 0, grid, 1);
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    PicardOptions from_orbit;
    from_orbit.tol = 1e-11;
    PicardOptions from_zero = from_orbit;
    from_zero.start_from_zero = true;
    auto a = picard_solve(spec, noise, grid, margin, from_orbit);
    auto b = picard_solve(spec, noise, grid, margin, from_zero);
    std::vector<double> dx1(a.states.size(), 0.0);
    for (std::size_t j = 0; j < a.states.size(); ++j) {
        StateVector d = a.states[j];
        d -= b.states[j];
        dx1[j] = norm_alpha(spec.op, 1.0, d);
    }
    const double dist = lp_time_norm(dx1, grid.dt(), spec.p);
    CHECK(dist <= 10.0 * from_orbit.tol * 10.0);
}

TEST_CASE("adaptedness: future increments do not affect the past") {
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.0);
    spec.B = halfpower_noise(spec.op, 0.2);
    spec.b_const = {0.2, 0.0, 0.4};
    TimeGrid grid{1.0, 128};
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);

    BrownianPath base = BrownianPath::sample(111, 0, grid, 1);
    BrownianPath bumped = base;
    const std::size_t cut = 64;
    for (std::size_t n = cut; n < grid.n_steps; ++n) bumped.increment(n, 0) += 0.1;

    DirectOuProvider noise_a(std::move(base));
    DirectOuProvider noise_b(std::move(bumped));
    // equal iteration counts so the prefix recursions are bitwise comparable
    PicardOptions opts;
    opts.fixed_iterations = 12;
    auto a = picard_solve(spec, noise_a, grid, margin, opts);
    auto b = picard_solve(spec, noise_b, grid, margin, opts);
    for (std::size_t j = 0; j <= cut; ++j) {
        for (std::size_t k = 0; k < spec.op.mode_count(); ++k) {
            CHECK(a.states[j][k] == b.states[j][k]);
        }
    }
    // and the futures disagree
    StateVector d = a.states.back();
    d -= b.states.back();
    CHECK(norm_alpha(spec.op, 0.0, d) > 1e-6);
}

TEST_CASE("Lipschitz dependence on the initial value") {
    ProblemSpec spec = linear_operator_drift_spec(0.3, 0.0);
    spec.B = halfpower_noise(spec.op, 0.2);
    spec.b_const = {0.2, 0.0, 0.4};
    auto margin = contraction_margin(spec, 1.0, kInvSqrt2);
    const double eps = 1e-3;

    double prev_ratio = -1.0;
    for (std::size_t n : {128u, 256u}) {
        TimeGrid grid{1.0, n};
        KahanSum acc;
        const std::size_t n_paths = 16;
        for (std::size_t path = 0; path < n_paths; ++path) {
            DirectOuProvider noise(121, path, grid, 1);
            auto u = glue_solve(spec, noise, grid, margin);
            ProblemSpec spec2 = spec;
            spec2.u0[0] += eps;
            auto v = glue_solve(spec2, noise, grid, margin);
            std::vector<double> dx1(u.states.size());
            for (std::size_t j = 0; j < u.states.size(); ++j) {
                StateVector d = u.states[j];
                d -= v.states[j];
                dx1[j] = norm_alpha(spec.op, 1.0, d);
            }
            acc.add(std::pow(lp_time_norm(dx1, grid.dt(), spec.p), spec.p));
        }
        StateVector du(spec.op.mode_count());
        du[0] = eps;
        const double denom = interp_norm_real(spec.op, 0.5, 2.0, du).norm;
        const double ratio =
            std::pow(acc.value() / 16.0, 1.0 / spec.p) / denom;
        CHECK(std::isfinite(ratio));
        if (prev_ratio > 0.0) {
            CHECK(std::abs(ratio - prev_ratio) / prev_ratio < 0.2);
        }
        prev_ratio = ratio;
    }
}

TEST_CASE("problem validation flags wrong declared constants") {
    ProblemSpec good = linear_operator_drift_spec(0.3, 0.1);
    CHECK_NOTHROW(validate_problem_spec(good, 7, 100));

    ProblemSpec bad = linear_operator_drift_spec(0.3, 0.1);
    bad.f_const = {0.1, 0.0, 10.0};  // declares less than the actual slope
    CHECK_THROWS_AS(validate_problem_spec(bad, 7, 100), InvalidScenario);
}

TEST_CASE("trace embedding constant bounds the ratio on random states") {
    auto A = SpectralOperator::make({{1, 0}, {3, 0}, {9, 0}, {27, 0}}, 0.0);
    const double p = 4.0;
    const double c = trace_embedding_constant(A, p);
    TraceNormEvaluator ev(A, 1.0 - 1.0 / p, p);
    for (std::uint64_t trial = 0; trial < 30; ++trial) {
        StateVector x(A.mode_count());
        for (std::size_t k = 0; k < x.size(); ++k) {
            double g1, g2;
            rng::gaussian_pair(rng::key(5, trial, rng::Stream::probe, k), &g1, &g2);
            x[k] = Complex(g1, g2);
        }
        CHECK(ev.norm(x) <= c * norm_alpha(A, 0.0, x) * (1.0 + 1e-9));
    }
}
