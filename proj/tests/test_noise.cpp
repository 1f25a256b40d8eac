#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "maxreglab/noise.hpp"
#include "maxreglab/summation.hpp"

using namespace mrl;

namespace {

NoiseOperator random_noise_operator(std::size_t K, std::size_t M, std::uint64_t seed,
                                    std::uint64_t tag) {
    NoiseOperator g(K, M);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < M; ++i) {
            double a, b;
            rng::gaussian_pair(rng::key(seed, tag, rng::Stream::probe, k, i), &a, &b);
            g.at(k, i) = Complex(a, b) / std::sqrt(2.0);
        }
    }
    return g;
}

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;
    double se_mean = 0.0;
};

MeanVar sample_stats(const std::vector<double>& xs) {
    MeanVar s;
    KahanSum acc;
    for (double x : xs) acc.add(x);
    s.mean = acc.value() / static_cast<double>(xs.size());
    KahanSum sq;
    for (double x : xs) sq.add((x - s.mean) * (x - s.mean));
    s.var = sq.value() / static_cast<double>(xs.size() - 1);
    s.se_mean = std::sqrt(s.var / static_cast<double>(xs.size()));
    return s;
}

}  // namespace

TEST_CASE("path regeneration is bit-exact") {
    TimeGrid grid{1.0, 64};
    auto p1 = BrownianPath::sample(42, 7, grid, 3);
    auto p2 = BrownianPath::sample(42, 7, grid, 3);
    for (std::size_t n = 0; n < grid.n_steps; ++n)
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(p1.increment(n, i) == p2.increment(n, i));

    auto p3 = BrownianPath::sample(42, 8, grid, 3);
    bool all_same = true;
    for (std::size_t n = 0; n < grid.n_steps; ++n)
        for (std::size_t i = 0; i < 3; ++i)
            all_same = all_same && (p1.increment(n, i) == p3.increment(n, i));
    CHECK_FALSE(all_same);
}

TEST_CASE("increments have the N(0, dt) law at ensemble level") {
    TimeGrid grid{1.0, 16};
    const std::size_t n_paths = 10000;
    const double dt = grid.dt();
    std::vector<double> pool;
    pool.reserve(n_paths * grid.n_steps);
    for (std::size_t path = 0; path < n_paths; ++path) {
        auto p = BrownianPath::sample(1234, path, grid, 2);
        for (std::size_t n = 0; n < grid.n_steps; ++n) pool.push_back(p.increment(n, 1));
    }
    auto s = sample_stats(pool);
    const double N = static_cast<double>(pool.size());
    CHECK(std::abs(s.mean) <= 4.0 * std::sqrt(dt / N));
    CHECK(std::abs(s.var - dt) <= 4.0 * dt * std::sqrt(2.0 / N));
}

TEST_CASE("distinct path indices decorrelate") {
    TimeGrid grid{1.0, 64};
    const std::size_t M = 4;
    auto a = BrownianPath::sample(99, 0, grid, M);
    auto b = BrownianPath::sample(99, 1, grid, M);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    std::size_t N = 0;
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        for (std::size_t i = 0; i < M; ++i) {
            sxy += a.increment(n, i) * b.increment(n, i);
            sxx += a.increment(n, i) * a.increment(n, i);
            syy += b.increment(n, i) * b.increment(n, i);
            ++N;
        }
    }
    const double corr = sxy / std::sqrt(sxx * syy);
    CHECK(std::abs(corr) <= 4.0 / std::sqrt(static_cast<double>(N)));
}

TEST_CASE("dyadic refinement is consistent with coarser grids") {
    TimeGrid fine{2.0, 128};
    TimeGrid coarse{2.0, 64};
    auto pf = BrownianPath::sample(5, 3, fine, 2);
    auto pc = BrownianPath::sample(5, 3, coarse, 2);
    for (std::size_t m = 0; m < coarse.n_steps; ++m) {
        for (std::size_t i = 0; i < 2; ++i) {
            const double sum = pf.increment(2 * m, i) + pf.increment(2 * m + 1, i);
            CHECK(std::abs(sum - pc.increment(m, i)) <= 1e-12);
        }
    }
}

TEST_CASE("ito integral basics") {
    TimeGrid grid{1.0, 32};
    auto path = BrownianPath::sample(7, 0, grid, 1);

    std::vector<NoiseOperator> zeros(grid.n_steps, NoiseOperator(2, 1));
    auto z = ito_integral(zeros, path);
    CHECK(norm_alpha(SpectralOperator::make({{1, 0}, {2, 0}}, 0.0), 0.0, z) == 0.0);

    std::vector<NoiseOperator> bad(grid.n_steps - 1, NoiseOperator(2, 1));
    CHECK_THROWS_AS(ito_integral(bad, path), DimensionMismatch);
}

TEST_CASE("scalar Brownian motion at time one") {
    TimeGrid grid{1.0, 64};
    std::vector<NoiseOperator> ones(grid.n_steps, NoiseOperator(1, 1));
    for (auto& g : ones) g.at(0, 0) = 1.0;
    const std::size_t n_paths = 10000;
    std::vector<double> w1(n_paths);
    for (std::size_t path = 0; path < n_paths; ++path) {
        auto p = BrownianPath::sample(2024, path, grid, 1);
        w1[path] = ito_integral(ones, p)[0].real();
    }
    auto s = sample_stats(w1);
    const double N = static_cast<double>(n_paths);
    CHECK(std::abs(s.mean) <= 3.0 / std::sqrt(N));
    CHECK(std::abs(s.var - 1.0) <= 3.0 * std::sqrt(2.0 / N));
}

TEST_CASE("Ito isometry for random step processes") {
    TimeGrid grid{1.0, 32};
    const std::size_t K = 3, M = 2;
    std::vector<NoiseOperator> ops;
    double l2_sq = 0.0;
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        ops.push_back(random_noise_operator(K, M, 555, n));
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i = 0; i < M; ++i) l2_sq += std::norm(ops.back().at(k, i)) * grid.dt();
    }
    const std::size_t n_paths = 10000;
    std::vector<double> sq(n_paths);
    for (std::size_t path = 0; path < n_paths; ++path) {
        auto p = BrownianPath::sample(31337, path, grid, M);
        auto v = ito_integral(ops, p);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::norm(v[k]);
        sq[path] = s;
    }
    auto st = sample_stats(sq);
    CHECK(std::abs(st.mean - l2_sq) <= 3.0 * st.se_mean);
}

TEST_CASE("exact-variance coefficients: small-rate limit") {
    // Re(mu) -> 0 gives per-step variance dt (series fallback below 1e-6)
    for (double a : {1e-12, 1e-8, 1e-7}) {
        auto c = ou_coeffs(Complex(a, 0.0), 0.25);
        const double var =
            std::norm(c.gamma_over_dt) * 0.25 + c.chol_rr * c.chol_rr +
            c.chol_ir * c.chol_ir + c.chol_ii * c.chol_ii;
        CHECK(var == doctest::Approx(0.25).epsilon(1e-6));
    }
    // and matches (1 - e^{-2 a dt}) / (2 a) away from the limit
    auto c = ou_coeffs(Complex(2.0, 0.0), 0.5);
    const double var = std::norm(c.gamma_over_dt) * 0.5 + c.chol_rr * c.chol_rr +
                       c.chol_ir * c.chol_ir + c.chol_ii * c.chol_ii;
    CHECK(var == doctest::Approx((1.0 - std::exp(-2.0)) / 4.0).epsilon(1e-12));
}

TEST_CASE("pure semigroup step when G vanishes") {
    auto A = SpectralOperator::make({{1, 0.5}, {3, 0}}, 0.0);
    TimeGrid grid{1.0, 4};
    DirectOuProvider noise(9, 0, grid, 1);
    auto coeffs = ou_coeffs_all(A, grid.dt());
    StateVector u(2);
    u[0] = Complex(1.0, -0.5);
    u[1] = 2.0;
    NoiseOperator zero(2, 1);
    auto v = ou_step(A, coeffs, u, zero, noise, 0);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(std::abs(v[k] - std::exp(-grid.dt() * A.mu(k)) * u[k]) < 1e-15);
    }
}

TEST_CASE("Ornstein-Uhlenbeck stationary variance") {
    // d U = -U dt + dW has stationary variance 1/2
    auto A = SpectralOperator::make({{1, 0}}, 0.0);
    TimeGrid grid{30.0, 600};
    NoiseOperator g(1, 1);
    g.at(0, 0) = 1.0;
    std::vector<NoiseOperator> ops(grid.n_steps, g);
    const std::size_t n_paths = 4000;
    std::vector<double> avg(n_paths);
    for (std::size_t path = 0; path < n_paths; ++path) {
        DirectOuProvider noise(777, path, grid, 1);
        auto sol = stoch_convolution(A, ops, noise);
        KahanSum acc;
        std::size_t count = 0;
        for (std::size_t n = grid.n_steps / 2; n <= grid.n_steps; ++n) {
            acc.add(std::norm(sol.states[n][0]));
            ++count;
        }
        avg[path] = acc.value() / static_cast<double>(count);
    }
    auto st = sample_stats(avg);
    CHECK(std::abs(st.mean - 0.5) <= 3.0 * st.se_mean);
}

TEST_CASE("complex mode: exact second moments") {
    // additive convolution with rotating mode; Cholesky construction must
    // reproduce both E|U|^2 and the pseudo-moment E U^2
    const Complex mu(1.0, 2.0);
    auto A = SpectralOperator::make({mu}, 0.0);
    TimeGrid grid{1.0, 64};
    NoiseOperator g(1, 1);
    g.at(0, 0) = 1.0;
    std::vector<NoiseOperator> ops(grid.n_steps, g);
    const std::size_t n_paths = 20000;
    std::vector<double> abs2(n_paths), re2(n_paths), imre(n_paths);
    for (std::size_t path = 0; path < n_paths; ++path) {
        DirectOuProvider noise(4242, path, grid, 1);
        auto sol = stoch_convolution(A, ops, noise);
        const Complex u = sol.states.back()[0];
        abs2[path] = std::norm(u);
        const Complex u2 = u * u;
        re2[path] = u2.real();
        imre[path] = u2.imag();
    }
    const double T = grid.horizon;
    const double v_exact = (1.0 - std::exp(-2.0 * mu.real() * T)) / (2.0 * mu.real());
    const Complex c_exact = (1.0 - std::exp(-2.0 * mu * T)) / (2.0 * mu);
    auto sa = sample_stats(abs2);
    auto sr = sample_stats(re2);
    auto si = sample_stats(imre);
    CHECK(std::abs(sa.mean - v_exact) <= 3.0 * sa.se_mean);
    CHECK(std::abs(sr.mean - c_exact.real()) <= 3.0 * sr.se_mean);
    CHECK(std::abs(si.mean - c_exact.imag()) <= 3.0 * si.se_mean);
}

TEST_CASE("stochastic convolution: zero integrand, fixed-time variance") {
    auto A = SpectralOperator::make({{1, 0}, {4, 0}}, 0.0);
    TimeGrid grid{1.0, 32};
    DirectOuProvider noise(11, 0, grid, 2);
    std::vector<NoiseOperator> zeros(grid.n_steps, NoiseOperator(2, 2));
    auto sol = stoch_convolution(A, zeros, noise);
    for (const auto& s : sol.states) CHECK(norm_alpha(A, 0.0, s) == 0.0);

    // ensemble variance of one mode at fixed time vs the per-step Ito isometry
    std::vector<NoiseOperator> ops;
    for (std::size_t n = 0; n < grid.n_steps; ++n)
        ops.push_back(random_noise_operator(2, 2, 808, n));
    const std::size_t node = 24, mode = 1;
    const double expected = additive_convolution_variance(A, ops, grid, node, mode);
    const std::size_t n_paths = 10000;
    std::vector<double> sq(n_paths);
    for (std::size_t path = 0; path < n_paths; ++path) {
        DirectOuProvider pn(909, path, grid, 2);
        auto s = stoch_convolution(A, ops, pn);
        sq[path] = std::norm(s.states[node][mode]);
    }
    auto st = sample_stats(sq);
    CHECK(std::abs(st.mean - expected) <= 3.0 * st.se_mean);
}

TEST_CASE("scalar additive convolution: maximal-regularity energy 1/2") {
    // G = 1 on [0,1], zero afterwards: E int_0^inf lambda |U|^2 dt = 1/2
    const double lambda = 1.0;
    auto A = SpectralOperator::make({{lambda, 0}}, 0.0);
    TimeGrid grid{12.0, 1200};
    std::vector<NoiseOperator> ops(grid.n_steps, NoiseOperator(1, 1));
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        if (grid.t(n) < 1.0) ops[n].at(0, 0) = 1.0;
    }
    const std::size_t n_paths = 4000;
    std::vector<double> energy(n_paths);
    for (std::size_t path = 0; path < n_paths; ++path) {
        DirectOuProvider noise(321, path, grid, 1);
        auto sol = stoch_convolution(A, ops, noise);
        KahanSum acc;
        for (std::size_t n = 0; n < grid.n_steps; ++n)
            acc.add(lambda * std::norm(sol.states[n][0]) * grid.dt());
        acc.add(std::norm(sol.states.back()[0]) / 2.0);  // exact tail past the horizon
        energy[path] = acc.value();
    }
    auto st = sample_stats(energy);
    CHECK(std::abs(st.mean - 0.5) <= 3.0 * st.se_mean);
}

TEST_CASE("additive variance identity is grid-independent") {
    auto A = SpectralOperator::make({{2, 1}, {5, 0}}, 0.0);
    NoiseOperator g = random_noise_operator(2, 2, 66, 0);
    const double T = 1.0;
    for (std::size_t mode = 0; mode < 2; ++mode) {
        const double a = A.mu(mode).real();
        double row = 0.0;
        for (std::size_t i = 0; i < 2; ++i) row += std::norm(g.at(mode, i));
        const double closed = row * (1.0 - std::exp(-2.0 * a * T)) / (2.0 * a);
        for (std::size_t n : {64u, 128u, 512u}) {
            TimeGrid grid{T, n};
            std::vector<NoiseOperator> ops(n, g);
            const double v = additive_convolution_variance(A, ops, grid, n, mode);
            CHECK(v == doctest::Approx(closed).epsilon(1e-12));
        }
    }
}

TEST_CASE("composed provider reproduces the fine solution at common nodes") {
    auto A = SpectralOperator::make({{1, 0}, {3, 2}, {9, 0}}, 0.0);
    TimeGrid fine{2.0, 256};
    TimeGrid coarse{2.0, 64};
    NoiseOperator g = random_noise_operator(3, 2, 2468, 0);
    auto fine_noise = std::make_shared<DirectOuProvider>(13, 5, fine, 2);
    ComposedOuProvider coarse_noise(fine_noise, coarse);

    std::vector<NoiseOperator> ops_f(fine.n_steps, g);
    std::vector<NoiseOperator> ops_c(coarse.n_steps, g);
    auto sol_f = stoch_convolution(A, ops_f, *fine_noise);
    auto sol_c = stoch_convolution(A, ops_c, coarse_noise);

    const std::size_t r = fine.n_steps / coarse.n_steps;
    double worst = 0.0;
    for (std::size_t m = 0; m <= coarse.n_steps; ++m) {
        for (std::size_t k = 0; k < 3; ++k) {
            worst = std::max(worst, std::abs(sol_c.states[m][k] - sol_f.states[m * r][k]));
        }
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("declared anticipative sequences are rejected") {
    auto A = SpectralOperator::make({{1, 0}}, 0.0);
    TimeGrid grid{1.0, 8};
    DirectOuProvider noise(1, 0, grid, 1);
    StepOperators g;
    g.ops.assign(grid.n_steps, NoiseOperator(1, 1));
    g.declared_anticipative = true;
    CHECK_THROWS_AS(stoch_convolution(A, g, noise), AdaptednessViolation);
    g.declared_anticipative = false;
    CHECK_NOTHROW(stoch_convolution(A, g, noise));
}

TEST_CASE("type-2 estimate: endpoint moment controlled by the L2 norm") {
    auto A = SpectralOperator::make({{1, 0}, {2, 0}, {4, 0}, {8, 0}}, 0.0);
    TimeGrid grid{2.0, 128};
    const std::size_t n_paths = 2000;
    double worst_ratio = 0.0;
    for (std::uint64_t probe = 0; probe < 5; ++probe) {
        std::vector<NoiseOperator> ops;
        double l2_sq = 0.0;
        for (std::size_t n = 0; n < grid.n_steps; ++n) {
            ops.push_back(random_noise_operator(4, 2, 97 + probe, n));
            for (std::size_t k = 0; k < 4; ++k)
                for (std::size_t i = 0; i < 2; ++i)
                    l2_sq += std::norm(ops.back().at(k, i)) * grid.dt();
        }
        std::vector<double> endpoint(n_paths);
        for (std::size_t path = 0; path < n_paths; ++path) {
            DirectOuProvider noise(57 + probe, path, grid, 2);
            auto sol = stoch_convolution(A, ops, noise);
            double s = 0.0;
            for (std::size_t k = 0; k < 4; ++k) s += std::norm(sol.states.back()[k]);
            endpoint[path] = s;
        }
        worst_ratio = std::max(worst_ratio, sample_stats(endpoint).mean / l2_sq);
    }
    // reported constant; must stay bounded (here well below 1 since delta = 1)
    CHECK(worst_ratio < 2.0);
    MESSAGE("type-2 endpoint ratio over random probes: ", worst_ratio);
}
