#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "maxreglab/grid.hpp"
#include "maxreglab/rng.hpp"
#include "maxreglab/spectral.hpp"

namespace mrl {

/// Increments of an M-dimensional Brownian motion on a uniform grid.
/// Power-of-two grids are sampled through a dyadic midpoint-bridge tree keyed
/// by (seed, path_index, level, interval, component), so two dyadic grids over
/// the same horizon see consistent coarse increments. Other grids fall back to
/// independent per-step draws.
class BrownianPath {
  public:
    static BrownianPath sample(std::uint64_t seed, std::uint64_t path_index,
                               TimeGrid grid, std::size_t noise_dim);

    const TimeGrid& grid() const { return grid_; }
    std::size_t noise_dim() const { return noise_dim_; }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t path_index() const { return path_index_; }

    double increment(std::size_t step, std::size_t comp) const {
        return inc_[step * noise_dim_ + comp];
    }
    double& increment(std::size_t step, std::size_t comp) {
        return inc_[step * noise_dim_ + comp];
    }
    std::span<const double> increments() const { return inc_; }

  private:
    TimeGrid grid_;
    std::size_t noise_dim_ = 1;
    std::uint64_t seed_ = 0, path_index_ = 0;
    std::vector<double> inc_;  // n_steps x M, row-major
};

/// Finite-rank operator from the M-dimensional noise space into the state
/// space: column i is the image of the i-th noise direction.
class NoiseOperator {
  public:
    NoiseOperator() = default;
    NoiseOperator(std::size_t modes, std::size_t noise_dim)
        : K_(modes), M_(noise_dim), a_(modes * noise_dim) {}

    std::size_t modes() const { return K_; }
    std::size_t noise_dim() const { return M_; }
    bool empty() const { return a_.empty(); }

    Complex& at(std::size_t k, std::size_t i) { return a_[k * M_ + i]; }
    const Complex& at(std::size_t k, std::size_t i) const { return a_[k * M_ + i]; }

    /// Row of mode k (all noise directions).
    std::span<const Complex> row(std::size_t k) const { return {&a_[k * M_], M_}; }

    StateVector apply(std::span<const double> dw) const;

    /// Hilbert-Schmidt norm into the scale X_alpha: (sum_i ||A^alpha G e_i||^2)^{1/2}.
    double hs_norm(const SpectralOperator& A, double alpha) const;

    NoiseOperator& operator-=(const NoiseOperator& other);
    NoiseOperator& operator+=(const NoiseOperator& other);
    friend NoiseOperator operator-(NoiseOperator a, const NoiseOperator& b) { return a -= b; }
    friend NoiseOperator operator+(NoiseOperator a, const NoiseOperator& b) { return a += b; }

  private:
    std::size_t K_ = 0, M_ = 0;
    std::vector<Complex> a_;
};

/// Per-mode constants of the exact one-step Ornstein-Uhlenbeck update over a
/// step of length dt for the shifted eigenvalue mu:
///   decay          = exp(-mu dt)
///   det_gain       = (1 - exp(-mu dt)) / mu            (piecewise-constant drift)
///   gamma_over_dt  = det_gain / dt                      (coupling to the increment)
///   chol_*         = Cholesky factor of the residual Gaussian, chosen so the
///                    stochastic integral int e^{-mu(dt-s)} dw(s) has its exact
///                    joint law with the plain increment dw over the step.
struct OuModeCoeffs {
    Complex mu;
    double dt = 0.0;
    Complex decay;
    Complex det_gain;
    Complex gamma_over_dt;
    double chol_rr = 0.0, chol_ir = 0.0, chol_ii = 0.0;
};

OuModeCoeffs ou_coeffs(Complex mu, double dt);

/// (1 - exp(-z)) / z with a series fallback for small |z|.
Complex expm1_ratio(Complex z);
double expm1_ratio(double x);

/// Source of the exact per-step stochastic integrals
///   J(step, mode, comp) = int_{t_n}^{t_{n+1}} e^{-mu (t_{n+1} - s)} dw_comp(s)
/// realized as gamma/dt * dW + independent exact-variance residual. The
/// residual stream is disjoint from the increment stream by its tag.
class OuIntegralProvider {
  public:
    virtual ~OuIntegralProvider() = default;
    virtual const TimeGrid& grid() const = 0;
    virtual std::size_t noise_dim() const = 0;
    virtual double dW(std::size_t step, std::size_t comp) const = 0;
    virtual Complex ou_integral(std::size_t step, std::uint64_t mode_id, std::size_t comp,
                                const OuModeCoeffs& coeffs) const = 0;
};

/// Stand-alone provider for a single (seed, path_index) on one grid.
class DirectOuProvider final : public OuIntegralProvider {
  public:
    DirectOuProvider(std::uint64_t seed, std::uint64_t path_index, TimeGrid grid,
                     std::size_t noise_dim);
    /// Wraps an existing (possibly perturbed) path; residual draws still come
    /// from (seed, path_index).
    explicit DirectOuProvider(BrownianPath path);

    const TimeGrid& grid() const override { return path_.grid(); }
    std::size_t noise_dim() const override { return path_.noise_dim(); }
    double dW(std::size_t step, std::size_t comp) const override {
        return path_.increment(step, comp);
    }
    Complex ou_integral(std::size_t step, std::uint64_t mode_id, std::size_t comp,
                        const OuModeCoeffs& coeffs) const override;

    const BrownianPath& path() const { return path_; }
    BrownianPath& path() { return path_; }

  private:
    BrownianPath path_;
};

/// Provider for a coarse grid derived from a fine one over the same horizon:
/// coarse increments are sums of fine increments and coarse OU integrals are
/// the exact composition of the fine ones. With it, coupled solves across
/// grid refinements see the same underlying noise.
class ComposedOuProvider final : public OuIntegralProvider {
  public:
    ComposedOuProvider(std::shared_ptr<const DirectOuProvider> fine, TimeGrid coarse);

    const TimeGrid& grid() const override { return coarse_; }
    std::size_t noise_dim() const override { return fine_->noise_dim(); }
    double dW(std::size_t step, std::size_t comp) const override;
    Complex ou_integral(std::size_t step, std::uint64_t mode_id, std::size_t comp,
                        const OuModeCoeffs& coeffs) const override;

  private:
    struct ModeCache {
        OuModeCoeffs fine_coeffs;
        std::vector<Complex> weights;  // exp(-mu dt_f (r-1-l)), l = 0..r-1
    };
    const ModeCache& cache_for(std::uint64_t mode_id, const OuModeCoeffs& coarse) const;

    std::shared_ptr<const DirectOuProvider> fine_;
    TimeGrid coarse_;
    std::size_t ratio_ = 1;
    mutable std::unordered_map<std::uint64_t, ModeCache> cache_;
};

/// One exact Ornstein-Uhlenbeck step: U' = decay * U + G * (per-step integrals).
/// `coeffs` must hold one entry per mode, aligned with A's modes.
StateVector ou_step(const SpectralOperator& A, std::span<const OuModeCoeffs> coeffs,
                    const StateVector& u, const NoiseOperator& g,
                    const OuIntegralProvider& noise, std::size_t step);

std::vector<OuModeCoeffs> ou_coeffs_all(const SpectralOperator& A, double dt);

/// Trajectory of a solve or a stochastic convolution on a time grid, plus the
/// solver bookkeeping that travels with it.
struct SolutionPath {
    TimeGrid grid;
    std::vector<StateVector> states;  // grid.n_steps + 1 entries unless stopped
    bool converged = true;
    int iterations = 0;
    std::vector<double> contraction_ratios;
    std::vector<double> kappa_partition;   // breakpoints of the fixed-point splitting
    std::vector<double> freeze_partition;  // breakpoints of the operator freezing
    std::optional<double> stopping_time;
};

/// Adapted step operators for a stochastic convolution. The adaptedness
/// contract is enforced at the API level: a sequence explicitly declared
/// anticipative is rejected.
struct StepOperators {
    std::vector<NoiseOperator> ops;
    bool declared_anticipative = false;
};

/// S <> G: trajectory of int_0^t S(t-s) G(s) dW(s) built from exact per-mode
/// one-step updates, U(0) = 0.
SolutionPath stoch_convolution(const SpectralOperator& A,
                               std::span<const NoiseOperator> g_steps,
                               const OuIntegralProvider& noise);
SolutionPath stoch_convolution(const SpectralOperator& A, const StepOperators& g,
                               const OuIntegralProvider& noise);

/// Plain Ito integral sum_n G_n (W(t_{n+1}) - W(t_n)).
StateVector ito_integral(std::span<const NoiseOperator> step_operators,
                         const BrownianPath& path);

/// Analytic variance of mode k of an additive stochastic convolution at grid
/// node `node` (left-point step operators, exact per-step integration).
double additive_convolution_variance(const SpectralOperator& A,
                                     std::span<const NoiseOperator> g_steps,
                                     const TimeGrid& grid, std::size_t node,
                                     std::size_t mode);

}  // namespace mrl
