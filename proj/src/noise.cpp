#include "maxreglab/noise.hpp"

#include <cmath>

#include "maxreglab/errors.hpp"

namespace mrl {

BrownianPath BrownianPath::sample(std::uint64_t seed, std::uint64_t path_index,
                                  TimeGrid grid, std::size_t noise_dim) {
    if (grid.n_steps < 1 || noise_dim < 1) throw Error("empty Brownian path requested");
    BrownianPath p;
    p.grid_ = grid;
    p.noise_dim_ = noise_dim;
    p.seed_ = seed;
    p.path_index_ = path_index;
    p.inc_.resize(grid.n_steps * noise_dim);

    const std::size_t n = grid.n_steps;
    if (grid.dyadic()) {
        const int levels = grid.level();
        std::vector<double> work(n);
        for (std::size_t i = 0; i < noise_dim; ++i) {
            work[0] = rng::gaussian(rng::key(seed, path_index, rng::Stream::increments, 0, 0, i)) *
                      std::sqrt(grid.horizon);
            for (int l = 1; l <= levels; ++l) {
                const std::size_t parents = std::size_t{1} << (l - 1);
                const double h_parent = grid.horizon / static_cast<double>(parents);
                const double half_sd = 0.5 * std::sqrt(h_parent);
                for (std::size_t j = parents; j-- > 0;) {
                    const double d = work[j];
                    const double xi = rng::gaussian(rng::key(
                        seed, path_index, rng::Stream::bridge, static_cast<std::uint64_t>(l), j, i));
                    const double d1 = 0.5 * d + half_sd * xi;
                    work[2 * j] = d1;
                    work[2 * j + 1] = d - d1;
                }
            }
            for (std::size_t step = 0; step < n; ++step) p.inc_[step * noise_dim + i] = work[step];
        }
    } else {
        const double sd = std::sqrt(grid.dt());
        for (std::size_t step = 0; step < n; ++step) {
            for (std::size_t i = 0; i < noise_dim; ++i) {
                p.inc_[step * noise_dim + i] =
                    sd * rng::gaussian(rng::key(seed, path_index, rng::Stream::increments, step, 0, i));
            }
        }
    }
    return p;
}

StateVector NoiseOperator::apply(std::span<const double> dw) const {
    if (dw.size() != M_) throw DimensionMismatch("noise increment dimension mismatch");
    StateVector out(K_);
    for (std::size_t k = 0; k < K_; ++k) {
        Complex acc(0.0, 0.0);
        const Complex* r = &a_[k * M_];
        for (std::size_t i = 0; i < M_; ++i) acc += r[i] * dw[i];
        out[k] = acc;
    }
    return out;
}

double NoiseOperator::hs_norm(const SpectralOperator& A, double alpha) const {
    if (K_ != A.mode_count()) throw DimensionMismatch("noise operator / operator mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < K_; ++k) {
        const double w = (alpha == 0.0) ? 1.0 : std::pow(std::abs(A.mu(k)), 2.0 * alpha);
        for (std::size_t i = 0; i < M_; ++i) s += w * std::norm(a_[k * M_ + i]);
    }
    return std::sqrt(s);
}

NoiseOperator& NoiseOperator::operator-=(const NoiseOperator& other) {
    if (other.K_ != K_ || other.M_ != M_) throw DimensionMismatch("noise operator mismatch");
    for (std::size_t j = 0; j < a_.size(); ++j) a_[j] -= other.a_[j];
    return *this;
}

NoiseOperator& NoiseOperator::operator+=(const NoiseOperator& other) {
    if (other.K_ != K_ || other.M_ != M_) throw DimensionMismatch("noise operator mismatch");
    for (std::size_t j = 0; j < a_.size(); ++j) a_[j] += other.a_[j];
    return *this;
}

double expm1_ratio(double x) {
    if (std::abs(x) < 1e-6) return 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0;
    return -std::expm1(-x) / x;
}

Complex expm1_ratio(Complex z) {
    if (std::abs(z) < 1e-6) return 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
    return (1.0 - std::exp(-z)) / z;
}

OuModeCoeffs ou_coeffs(Complex mu, double dt) {
    OuModeCoeffs c;
    c.mu = mu;
    c.dt = dt;
    const Complex z = mu * dt;
    c.decay = std::exp(-z);
    const Complex gamma = dt * expm1_ratio(z);  // (1 - e^{-mu dt}) / mu
    c.det_gain = gamma;
    c.gamma_over_dt = gamma / dt;

    const double a = mu.real();
    const double v = dt * expm1_ratio(2.0 * a * dt);  // E |J|^2
    const Complex cc = dt * expm1_ratio(2.0 * z);     // E J^2
    const double vr = v - std::norm(gamma) / dt;      // residual E |eta|^2
    const Complex cr = cc - gamma * gamma / dt;       // residual E eta^2

    double s_rr = 0.5 * (vr + cr.real());
    double s_ii = 0.5 * (vr - cr.real());
    double s_ri = 0.5 * cr.imag();
    s_rr = std::max(s_rr, 0.0);
    s_ii = std::max(s_ii, 0.0);
    if (s_ri * s_ri > s_rr * s_ii) {
        s_ri = (s_ri >= 0.0 ? 1.0 : -1.0) * std::sqrt(s_rr * s_ii);
    }
    c.chol_rr = std::sqrt(s_rr);
    c.chol_ir = c.chol_rr > 0.0 ? s_ri / c.chol_rr : 0.0;
    const double rem = s_ii - c.chol_ir * c.chol_ir;
    c.chol_ii = rem > 0.0 ? std::sqrt(rem) : 0.0;
    return c;
}

std::vector<OuModeCoeffs> ou_coeffs_all(const SpectralOperator& A, double dt) {
    std::vector<OuModeCoeffs> out;
    out.reserve(A.mode_count());
    for (std::size_t k = 0; k < A.mode_count(); ++k) out.push_back(ou_coeffs(A.mu(k), dt));
    return out;
}

DirectOuProvider::DirectOuProvider(std::uint64_t seed, std::uint64_t path_index,
                                   TimeGrid grid, std::size_t noise_dim)
    : path_(BrownianPath::sample(seed, path_index, grid, noise_dim)) {}

DirectOuProvider::DirectOuProvider(BrownianPath path) : path_(std::move(path)) {}

Complex DirectOuProvider::ou_integral(std::size_t step, std::uint64_t mode_id,
                                      std::size_t comp, const OuModeCoeffs& coeffs) const {
    double x1, x2;
    rng::gaussian_pair(
        rng::key(path_.seed(), path_.path_index(), rng::Stream::ou, step, mode_id, comp), &x1,
        &x2);
    const double dw = path_.increment(step, comp);
    return coeffs.gamma_over_dt * dw +
           Complex(coeffs.chol_rr * x1, coeffs.chol_ir * x1 + coeffs.chol_ii * x2);
}

ComposedOuProvider::ComposedOuProvider(std::shared_ptr<const DirectOuProvider> fine,
                                       TimeGrid coarse)
    : fine_(std::move(fine)), coarse_(coarse) {
    const TimeGrid& fg = fine_->grid();
    if (fg.horizon != coarse.horizon || coarse.n_steps == 0 ||
        fg.n_steps % coarse.n_steps != 0) {
        throw DimensionMismatch("coarse grid does not divide the fine grid");
    }
    ratio_ = fg.n_steps / coarse.n_steps;
}

double ComposedOuProvider::dW(std::size_t step, std::size_t comp) const {
    double s = 0.0;
    for (std::size_t j = 0; j < ratio_; ++j) s += fine_->dW(step * ratio_ + j, comp);
    return s;
}

const ComposedOuProvider::ModeCache& ComposedOuProvider::cache_for(
    std::uint64_t mode_id, const OuModeCoeffs& coarse) const {
    auto it = cache_.find(mode_id);
    if (it != cache_.end()) {
        if (it->second.fine_coeffs.mu != coarse.mu) {
            throw Error("composed noise provider requires a fixed spectrum per mode");
        }
        return it->second;
    }
    ModeCache mc;
    const double dt_f = fine_->grid().dt();
    mc.fine_coeffs = ou_coeffs(coarse.mu, dt_f);
    mc.weights.resize(ratio_);
    for (std::size_t l = 0; l < ratio_; ++l) {
        mc.weights[l] = std::exp(-coarse.mu * (dt_f * static_cast<double>(ratio_ - 1 - l)));
    }
    return cache_.emplace(mode_id, std::move(mc)).first->second;
}

Complex ComposedOuProvider::ou_integral(std::size_t step, std::uint64_t mode_id,
                                        std::size_t comp, const OuModeCoeffs& coeffs) const {
    const ModeCache& mc = cache_for(mode_id, coeffs);
    Complex acc(0.0, 0.0);
    for (std::size_t l = 0; l < ratio_; ++l) {
        acc += mc.weights[l] *
               fine_->ou_integral(step * ratio_ + l, mode_id, comp, mc.fine_coeffs);
    }
    return acc;
}

StateVector ou_step(const SpectralOperator& A, std::span<const OuModeCoeffs> coeffs,
                    const StateVector& u, const NoiseOperator& g,
                    const OuIntegralProvider& noise, std::size_t step) {
    const std::size_t K = A.mode_count();
    if (u.size() != K || coeffs.size() != K) throw DimensionMismatch("ou_step size mismatch");
    const std::size_t M = noise.noise_dim();
    StateVector out(K);
    const bool pure = g.empty();
    for (std::size_t k = 0; k < K; ++k) {
        Complex acc = coeffs[k].decay * u[k];
        if (!pure) {
            const std::uint64_t id = A.mode_id(k);
            for (std::size_t i = 0; i < M; ++i) {
                const Complex gki = g.at(k, i);
                if (gki == Complex(0.0, 0.0)) continue;
                acc += gki * noise.ou_integral(step, id, i, coeffs[k]);
            }
        }
        out[k] = acc;
    }
    return out;
}

SolutionPath stoch_convolution(const SpectralOperator& A,
                               std::span<const NoiseOperator> g_steps,
                               const OuIntegralProvider& noise) {
    const TimeGrid& grid = noise.grid();
    if (g_steps.size() != grid.n_steps)
        throw DimensionMismatch("one step operator per grid step required");
    SolutionPath sol;
    sol.grid = grid;
    sol.states.reserve(grid.n_steps + 1);
    sol.states.emplace_back(A.mode_count());
    const auto coeffs = ou_coeffs_all(A, grid.dt());
    for (std::size_t n = 0; n < grid.n_steps; ++n) {
        sol.states.push_back(ou_step(A, coeffs, sol.states.back(), g_steps[n], noise, n));
    }
    return sol;
}

SolutionPath stoch_convolution(const SpectralOperator& A, const StepOperators& g,
                               const OuIntegralProvider& noise) {
    if (g.declared_anticipative) {
        throw AdaptednessViolation("step operators declared dependent on future increments");
    }
    return stoch_convolution(A, std::span<const NoiseOperator>(g.ops), noise);
}

StateVector ito_integral(std::span<const NoiseOperator> step_operators,
                         const BrownianPath& path) {
    if (step_operators.size() != path.grid().n_steps)
        throw DimensionMismatch("one step operator per grid step required");
    if (step_operators.empty()) throw DimensionMismatch("empty step process");
    const std::size_t K = step_operators.front().modes();
    const std::size_t M = path.noise_dim();
    StateVector out(K);
    for (std::size_t n = 0; n < step_operators.size(); ++n) {
        const NoiseOperator& g = step_operators[n];
        if (g.modes() != K || g.noise_dim() != M)
            throw DimensionMismatch("step operator dimensions vary along the grid");
        for (std::size_t k = 0; k < K; ++k) {
            Complex acc = out[k];
            for (std::size_t i = 0; i < M; ++i) acc += g.at(k, i) * path.increment(n, i);
            out[k] = acc;
        }
    }
    return out;
}

double additive_convolution_variance(const SpectralOperator& A,
                                     std::span<const NoiseOperator> g_steps,
                                     const TimeGrid& grid, std::size_t node,
                                     std::size_t mode) {
    const double dt = grid.dt();
    const double a = A.mu(mode).real();
    const double v = dt * expm1_ratio(2.0 * a * dt);
    double var = 0.0;
    for (std::size_t n = 0; n < node; ++n) {
        double row = 0.0;
        for (std::size_t i = 0; i < g_steps[n].noise_dim(); ++i)
            row += std::norm(g_steps[n].at(mode, i));
        var += row * v * std::exp(-2.0 * a * dt * static_cast<double>(node - 1 - n));
    }
    return var;
}

}  // namespace mrl
