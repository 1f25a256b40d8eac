#include "maxreglab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mrl {

namespace {
constexpr double kPi = 3.141592653589793238462643383279503;
constexpr double kTwoPi = 2.0 * kPi;
}  // namespace

std::string to_string(BasisKind kind) {
    switch (kind) {
        case BasisKind::abstract_modes: return "abstract";
        case BasisKind::fourier_torus: return "fourier_torus";
        case BasisKind::sine_interval: return "sine_interval";
    }
    return "unknown";
}

bool StateVector::all_finite() const {
    for (const Complex& z : c_) {
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    }
    return true;
}

StateVector& StateVector::operator+=(const StateVector& other) {
    if (other.size() != size()) throw DimensionMismatch("StateVector size mismatch in +=");
    for (std::size_t k = 0; k < c_.size(); ++k) c_[k] += other.c_[k];
    return *this;
}

StateVector& StateVector::operator-=(const StateVector& other) {
    if (other.size() != size()) throw DimensionMismatch("StateVector size mismatch in -=");
    for (std::size_t k = 0; k < c_.size(); ++k) c_[k] -= other.c_[k];
    return *this;
}

StateVector& StateVector::operator*=(Complex scale) {
    for (auto& z : c_) z *= scale;
    return *this;
}

SpectralOperator SpectralOperator::make(std::vector<Complex> eigenvalues, double shift,
                                        Basis basis, std::vector<long> wavenumbers) {
    if (eigenvalues.empty()) throw SectorialityViolation("empty eigenvalue list");
    if (!wavenumbers.empty() && wavenumbers.size() != eigenvalues.size())
        throw DimensionMismatch("wavenumber list does not match eigenvalue list");

    const std::size_t n = eigenvalues.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        return eigenvalues[a].real() < eigenvalues[b].real();
    });

    SpectralOperator op;
    op.basis_ = basis;
    op.shift_ = shift;
    op.eigs_.resize(n);
    op.mu_.resize(n);
    if (!wavenumbers.empty()) op.wavenumbers_.resize(n);

    double delta = std::numeric_limits<double>::infinity();
    double sigma = 0.0;
    double max_real = -std::numeric_limits<double>::infinity();
    bool self_adjoint = true;
    for (std::size_t k = 0; k < n; ++k) {
        const Complex lambda = eigenvalues[perm[k]];
        const Complex mu = lambda + shift;
        if (!(mu.real() > 0.0)) {
            throw SectorialityViolation(
                "eigenvalue with nonpositive shifted real part: Re(lambda + w) = " +
                std::to_string(mu.real()));
        }
        const double arg = std::abs(std::arg(mu));
        if (!(arg < kPi / 2.0)) {
            throw SectorialityViolation("eigenvalue outside the open right sector");
        }
        op.eigs_[k] = lambda;
        op.mu_[k] = mu;
        if (!wavenumbers.empty()) op.wavenumbers_[k] = wavenumbers[perm[k]];
        delta = std::min(delta, mu.real());
        sigma = std::max(sigma, arg);
        max_real = std::max(max_real, mu.real());
        if (mu.imag() != 0.0) self_adjoint = false;
    }
    op.delta_ = delta;
    op.sigma_ = sigma;
    op.max_real_ = max_real;
    op.self_adjoint_ = self_adjoint;
    return op;
}

SpectralOperator SpectralOperator::fourier_torus(int order, std::size_t mode_count,
                                                 double shift) {
    if (mode_count < 1) throw SectorialityViolation("mode_count must be positive");
    std::vector<Complex> eigs;
    std::vector<long> waves;
    eigs.reserve(mode_count);
    waves.reserve(mode_count);
    const long half = static_cast<long>(mode_count) / 2;
    for (long k = -half; k < static_cast<long>(mode_count) - half; ++k) {
        eigs.emplace_back(std::pow(std::abs(static_cast<double>(k)), order), 0.0);
        waves.push_back(k);
    }
    return make(std::move(eigs), shift, Basis{BasisKind::fourier_torus, 1, order},
                std::move(waves));
}

SpectralOperator SpectralOperator::sine_interval(int order, std::size_t mode_count,
                                                 double shift) {
    if (mode_count < 1) throw SectorialityViolation("mode_count must be positive");
    std::vector<Complex> eigs;
    std::vector<long> waves;
    for (long k = 1; k <= static_cast<long>(mode_count); ++k) {
        eigs.emplace_back(std::pow(static_cast<double>(k), order), 0.0);
        waves.push_back(k);
    }
    return make(std::move(eigs), shift, Basis{BasisKind::sine_interval, 1, order},
                std::move(waves));
}

std::uint64_t SpectralOperator::mode_id(std::size_t k) const {
    if (!wavenumbers_.empty()) {
        // offset keeps torus wavenumbers (which can be negative) positive
        return static_cast<std::uint64_t>(wavenumbers_[k] + (1L << 40));
    }
    return static_cast<std::uint64_t>(k);
}

SpectralOperator SpectralOperator::with_eigenvalues(std::vector<Complex> eigenvalues) const {
    if (eigenvalues.size() != mode_count())
        throw DimensionMismatch("eigenvalue count must match the operator");
    // keeps the existing mode order: states stay aligned even when
    // time-dependent eigenvalue curves cross
    SpectralOperator op;
    op.basis_ = basis_;
    op.shift_ = shift_;
    op.wavenumbers_ = wavenumbers_;
    op.eigs_ = std::move(eigenvalues);
    op.mu_.resize(op.eigs_.size());
    double delta = std::numeric_limits<double>::infinity();
    double sigma = 0.0;
    double max_real = -std::numeric_limits<double>::infinity();
    bool self_adjoint = true;
    for (std::size_t k = 0; k < op.eigs_.size(); ++k) {
        const Complex mu = op.eigs_[k] + shift_;
        if (!(mu.real() > 0.0))
            throw SectorialityViolation("frozen eigenvalue with nonpositive real part");
        const double arg = std::abs(std::arg(mu));
        if (!(arg < kPi / 2.0))
            throw SectorialityViolation("frozen eigenvalue outside the open right sector");
        op.mu_[k] = mu;
        delta = std::min(delta, mu.real());
        sigma = std::max(sigma, arg);
        max_real = std::max(max_real, mu.real());
        if (mu.imag() != 0.0) self_adjoint = false;
    }
    op.delta_ = delta;
    op.sigma_ = sigma;
    op.max_real_ = max_real;
    op.self_adjoint_ = self_adjoint;
    return op;
}

StateVector SpectralOperator::basis_vector(std::size_t k) const {
    StateVector e(mode_count());
    e[k] = Complex(1.0, 0.0);
    return e;
}

StateVector semigroup_apply(const SpectralOperator& A, double t, const StateVector& x) {
    if (t < 0.0) throw NegativeTime("semigroup time must be nonnegative");
    if (x.size() != A.mode_count()) throw DimensionMismatch("state/operator size mismatch");
    StateVector out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        out[k] = std::exp(-t * A.mu(k)) * x[k];
    }
    return out;
}

StateVector frac_power_apply(const SpectralOperator& A, double alpha, const StateVector& x) {
    if (!(alpha >= -1.0 && alpha <= 1.0)) throw Error("fractional power outside [-1, 1]");
    if (x.size() != A.mode_count()) throw DimensionMismatch("state/operator size mismatch");
    StateVector out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        out[k] = std::pow(A.mu(k), alpha) * x[k];
    }
    return out;
}

double norm_alpha(const SpectralOperator& A, double alpha, const StateVector& x) {
    if (x.size() != A.mode_count()) throw DimensionMismatch("state/operator size mismatch");
    double s = 0.0;
    if (alpha == 0.0) {
        for (std::size_t k = 0; k < x.size(); ++k) s += std::norm(x[k]);
    } else if (alpha == 1.0) {
        for (std::size_t k = 0; k < x.size(); ++k) s += std::norm(A.mu(k)) * std::norm(x[k]);
    } else {
        for (std::size_t k = 0; k < x.size(); ++k)
            s += std::pow(std::abs(A.mu(k)), 2.0 * alpha) * std::norm(x[k]);
    }
    return std::sqrt(s);
}

double resolvent_norm(const SpectralOperator& A, Complex z) {
    double worst = 0.0;
    for (std::size_t k = 0; k < A.mode_count(); ++k) {
        const double d = std::abs(z - A.mu(k));
        if (d == 0.0) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, std::abs(z) / d);
    }
    return worst;
}

namespace {

// Bound on int_{t0}^inf t^{a-1} e^{-q (t - t0)} dt.
double tail_integral_bound(double a, double q, double t0) {
    if (a <= 1.0) {
        return std::pow(t0, a - 1.0) / q;
    }
    return std::pow(2.0, a - 1.0) *
           (std::pow(t0, a - 1.0) / q + std::tgamma(a) / std::pow(q, a));
}

}  // namespace

TraceNormEvaluator::TraceNormEvaluator(const SpectralOperator& A, double theta, double p,
                                       const QuadratureSpec& quad)
    : theta_(theta), p_(p), a_((1.0 - theta) * p), rel_tol_(quad.rel_tol), modes_(A.mode_count()) {
    if (!(theta > 0.0 && theta < 1.0)) throw Error("theta must lie in (0,1)");
    if (!(p >= 1.0)) throw Error("p must be >= 1");

    t_min_ = quad.t_min_factor / A.max_real();
    const double delta = A.delta();

    // Pick t_max so that every single-mode tail is negligible against the
    // matching single-mode seminorm^p value; the slowest mode dominates.
    double t_max = std::max(4.0 / delta, 4.0 * t_min_);
    const double budget = 0.05 * rel_tol_;
    for (int iter = 0; iter < 200; ++iter) {
        double worst = 0.0;
        for (std::size_t k = 0; k < modes_; ++k) {
            const double re = A.mu(k).real();
            const double q = p * re;
            const double value = std::tgamma(a_) / std::pow(q, a_);
            const double tail = std::exp(-q * t_max) * tail_integral_bound(a_, q, t_max);
            worst = std::max(worst, tail / value);
        }
        if (worst <= budget) break;
        t_max *= 1.5;
    }
    t_max_ = t_max;
    tail_factor_ = tail_integral_bound(a_, p * delta, t_max_);

    const double span = std::log(t_max_ / t_min_);
    std::size_t n = static_cast<std::size_t>(std::ceil(span / quad.log_step)) + 1;
    n = std::max<std::size_t>(n, 8);
    if (n > quad.max_nodes) throw QuadratureNotConverged("orbit quadrature node budget exceeded");
    log_step_ = span / static_cast<double>(n - 1);

    t_.resize(n);
    w_.resize(n);
    decay_.resize(n * modes_);
    rate_.resize(modes_);
    mu_abs2_.resize(modes_);
    for (std::size_t k = 0; k < modes_; ++k) {
        rate_[k] = 2.0 * A.mu(k).real();
        mu_abs2_[k] = std::norm(A.mu(k));
    }
    const double log_t_min = std::log(t_min_);
    for (std::size_t j = 0; j < n; ++j) {
        const double t = std::exp(log_t_min + log_step_ * static_cast<double>(j));
        t_[j] = t;
        const double trap = (j == 0 || j + 1 == n) ? 0.5 * log_step_ : log_step_;
        w_[j] = trap * std::pow(t, a_);  // folds the t^a factor of the log integrand
        for (std::size_t k = 0; k < modes_; ++k) {
            decay_[j * modes_ + k] = mu_abs2_[k] * std::exp(-rate_[k] * t);
        }
    }
    if (modes_ == 1) {
        StateVector e(1);
        e[0] = Complex(1.0, 0.0);
        unit_ = evaluate_full(e);
        unit_ready_ = true;
    }
}

OrbitNormResult TraceNormEvaluator::evaluate(const StateVector& x) const {
    if (unit_ready_) {
        if (x.size() != 1) throw DimensionMismatch("state size does not match evaluator");
        const double amp = std::abs(x[0]);
        OrbitNormResult r;
        r.seminorm = amp * unit_.seminorm;
        r.norm = amp * unit_.norm;
        r.tail_bound = std::pow(amp, p_) * unit_.tail_bound;
        r.head = std::pow(amp, p_) * unit_.head;
        r.nodes = unit_.nodes;
        return r;
    }
    return evaluate_full(x);
}

OrbitNormResult TraceNormEvaluator::evaluate_full(const StateVector& x) const {
    if (x.size() != modes_) throw DimensionMismatch("state size does not match evaluator");
    OrbitNormResult r;
    const std::size_t n = t_.size();
    const double s = 0.5 * p_;

    double x0_sq = 0.0;
    std::vector<double> xa(modes_);
    for (std::size_t k = 0; k < modes_; ++k) {
        xa[k] = std::norm(x[k]);
        x0_sq += xa[k];
    }
    if (x0_sq == 0.0) return r;

    // head: series expansion of phi(t)^{p/2} around t = 0 on [0, t_min]
    double m0 = 0.0, m1 = 0.0, m2 = 0.0, m3 = 0.0;
    for (std::size_t k = 0; k < modes_; ++k) {
        const double d = mu_abs2_[k] * xa[k];
        m0 += d;
        m1 += d * rate_[k];
        m2 += d * rate_[k] * rate_[k];
        m3 += d * rate_[k] * rate_[k] * rate_[k];
    }
    const double b1 = -m1 / m0, b2 = 0.5 * m2 / m0, b3 = -m3 / (6.0 * m0);
    const double c1 = s * b1;
    const double c2 = s * b2 + 0.5 * s * (s - 1.0) * b1 * b1;
    const double c3 = s * b3 + s * (s - 1.0) * b1 * b2 +
                      s * (s - 1.0) * (s - 2.0) / 6.0 * b1 * b1 * b1;
    const double m0s = std::pow(m0, s);
    const double ta = std::pow(t_min_, a_);
    double head = m0s * ta *
                  (1.0 / a_ + c1 * t_min_ / (a_ + 1.0) + c2 * t_min_ * t_min_ / (a_ + 2.0) +
                   c3 * t_min_ * t_min_ * t_min_ / (a_ + 3.0));
    head = std::max(head, 0.0);

    // body: endpoint-corrected trapezoid in log t
    double body = 0.0;
    double phi_first = 0.0, phi_last = 0.0, dphi_first = 0.0, dphi_last = 0.0;
    const bool linear = (s == 1.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double* row = &decay_[j * modes_];
        double phi = 0.0;
        for (std::size_t k = 0; k < modes_; ++k) phi += row[k] * xa[k];
        body += w_[j] * (linear ? phi : std::pow(phi, s));
        if (j == 0 || j + 1 == n) {
            double dphi = 0.0;
            for (std::size_t k = 0; k < modes_; ++k) dphi -= rate_[k] * row[k] * xa[k];
            if (j == 0) { phi_first = phi; dphi_first = dphi; }
            else { phi_last = phi; dphi_last = dphi; }
        }
    }
    auto g_prime = [&](double t, double phi, double dphi) {
        if (phi <= 0.0) return 0.0;
        const double psi = linear ? phi : std::pow(phi, s);
        const double dpsi = linear ? dphi : s * std::pow(phi, s - 1.0) * dphi;
        return std::pow(t, a_) * (a_ * psi + t * dpsi);
    };
    body += log_step_ * log_step_ / 12.0 *
            (g_prime(t_[0], phi_first, dphi_first) - g_prime(t_[n - 1], phi_last, dphi_last));
    body = std::max(body, 0.0);

    // every mode decays at least at rate 2*delta beyond t_max
    const double tail_bound = (linear ? phi_last : std::pow(phi_last, s)) * tail_factor_;

    const double total_p = head + body + tail_bound;
    r.seminorm = std::pow(total_p, 1.0 / p_);
    r.norm = std::sqrt(x0_sq) + r.seminorm;
    r.tail_bound = tail_bound;
    r.head = head;
    r.nodes = n;
    if (!(tail_bound <= rel_tol_ * total_p) && total_p > 0.0) {
        throw QuadratureNotConverged("orbit-norm tail bound exceeds requested tolerance");
    }
    return r;
}

OrbitNormResult interp_norm_real(const SpectralOperator& A, double theta, double p,
                                 const StateVector& x, const QuadratureSpec& quad) {
    TraceNormEvaluator eval(A, theta, p, quad);
    return eval.evaluate(x);
}

std::vector<Complex> synthesize(const SpectralOperator& A, const StateVector& x,
                                std::size_t grid_size) {
    if (x.size() != A.mode_count()) throw DimensionMismatch("state/operator size mismatch");
    const auto& waves = A.wavenumbers();
    const std::size_t K = A.mode_count();
    std::vector<Complex> u(grid_size, Complex(0.0, 0.0));
    switch (A.basis().kind) {
        case BasisKind::fourier_torus: {
            for (std::size_t i = 0; i < grid_size; ++i) {
                const double xi = static_cast<double>(i) / static_cast<double>(grid_size);
                Complex acc(0.0, 0.0);
                for (std::size_t k = 0; k < K; ++k) {
                    const double phase = kTwoPi * static_cast<double>(waves[k]) * xi;
                    acc += x[k] * Complex(std::cos(phase), std::sin(phase));
                }
                u[i] = acc;
            }
            break;
        }
        case BasisKind::sine_interval: {
            const double scale = std::sqrt(2.0 / kPi);
            for (std::size_t i = 0; i < grid_size; ++i) {
                const double xi = (static_cast<double>(i) + 0.5) * kPi / static_cast<double>(grid_size);
                Complex acc(0.0, 0.0);
                for (std::size_t k = 0; k < K; ++k) {
                    acc += x[k] * (scale * std::sin(static_cast<double>(waves[k]) * xi));
                }
                u[i] = acc;
            }
            break;
        }
        default:
            throw Error("synthesis requires a fourier_torus or sine_interval basis");
    }
    return u;
}

StateVector analyze(const SpectralOperator& A, std::span<const Complex> samples) {
    const std::size_t K = A.mode_count();
    const std::size_t G = samples.size();
    const auto& waves = A.wavenumbers();
    StateVector x(K);
    switch (A.basis().kind) {
        case BasisKind::fourier_torus: {
            for (std::size_t k = 0; k < K; ++k) {
                Complex acc(0.0, 0.0);
                for (std::size_t i = 0; i < G; ++i) {
                    const double phase =
                        -kTwoPi * static_cast<double>(waves[k]) * static_cast<double>(i) /
                        static_cast<double>(G);
                    acc += samples[i] * Complex(std::cos(phase), std::sin(phase));
                }
                x[k] = acc / static_cast<double>(G);
            }
            break;
        }
        case BasisKind::sine_interval: {
            const double scale = std::sqrt(2.0 / kPi) * kPi / static_cast<double>(G);
            for (std::size_t k = 0; k < K; ++k) {
                Complex acc(0.0, 0.0);
                for (std::size_t i = 0; i < G; ++i) {
                    const double xi =
                        (static_cast<double>(i) + 0.5) * kPi / static_cast<double>(G);
                    acc += samples[i] * std::sin(static_cast<double>(waves[k]) * xi);
                }
                x[k] = acc * scale;
            }
            break;
        }
        default:
            throw Error("analysis requires a fourier_torus or sine_interval basis");
    }
    return x;
}

double grid_norm_lq(const SpectralOperator& A, const StateVector& x, double q,
                    std::size_t grid_size) {
    if (A.basis().kind == BasisKind::abstract_modes) {
        throw Error("grid norms require a fourier_torus or sine_interval basis");
    }
    if (grid_size < 2 * A.mode_count()) {
        throw AliasedGrid("grid_size must be at least twice the mode count");
    }
    if (!(q >= 1.0)) throw Error("L^q norm needs q >= 1");
    const std::vector<Complex> u = synthesize(A, x, grid_size);
    const double weight = (A.basis().kind == BasisKind::fourier_torus)
                              ? 1.0 / static_cast<double>(grid_size)
                              : kPi / static_cast<double>(grid_size);
    double acc = 0.0;
    for (const Complex& v : u) acc += std::pow(std::abs(v), q) * weight;
    return std::pow(acc, 1.0 / q);
}

}  // namespace mrl
