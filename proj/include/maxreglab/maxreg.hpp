#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maxreglab/grid.hpp"
#include "maxreglab/noise.hpp"
#include "maxreglab/spectral.hpp"

namespace mrl {

enum class ConstantKind { deterministic_star, stochastic_diamond };

/// Empirical estimate of K*_p or K<>_p. Deterministic estimates are maxima
/// over probe forcings (certified lower bounds on the operator norm);
/// stochastic estimates carry the Monte Carlo standard error of the winning
/// probe. `tail_fraction` reports how much of value^p came from the analytic
/// continuation past the grid horizon; `shift` records the w the constants
/// refer to.
struct ConstantsEstimate {
    ConstantKind kind = ConstantKind::deterministic_star;
    double p = 2.0;
    double value = 0.0;
    double standard_error = 0.0;
    std::size_t probe_count = 0;
    std::size_t sample_count = 0;
    std::string achieving_probe;
    double tail_fraction = 0.0;
    double shift = 0.0;
};

/// u' + A u = g with piecewise-constant g, integrated exactly per step:
/// u_{n+1} = e^{-mu dt} u_n + g_n (1 - e^{-mu dt}) / mu, u_0 = 0.
SolutionPath det_convolution(const SpectralOperator& A, std::span<const StateVector> g_steps,
                             TimeGrid grid);

/// Exact squared L^2(0,inf; X0) energy of A u for the convolution above,
/// including the closed-form decay beyond the grid horizon.
double det_energy_p2(const SpectralOperator& A, std::span<const StateVector> g_steps,
                     TimeGrid grid);

/// ||A u||_{L^p} / ||g||_{L^p} for a step forcing. p = 2 uses the exact
/// energy; other p use left-endpoint Riemann sums plus an analytic tail bound.
double det_ratio(const SpectralOperator& A, std::span<const StateVector> g_steps,
                 TimeGrid grid, double p, double* tail_fraction = nullptr);

/// Same energy through Plancherel: zero-padded FFT of the forcing, integrated
/// against the resolvent multiplier |mu|^2 / |i omega + mu|^2 in frequency.
double plancherel_energy_p2(const SpectralOperator& A, std::span<const StateVector> g_steps,
                            TimeGrid grid, double rel_tol = 1e-7);

/// Log-spaced frequencies including 0 spanning [delta*1e-3, 1e3*max Re mu].
std::vector<double> default_s_grid(const SpectralOperator& A, std::size_t count = 121);

/// sup over the grid and modes of |mu_k| / |i s + mu_k| for self-adjoint
/// positive A. Throws NotSelfAdjoint when the spectrum is not real.
double resolvent_bound_check(const SpectralOperator& A, std::span<const double> s_grid);

struct KstarOptions {
    std::size_t random_probes = 100;
    bool adversarial_probes = true;  // per-mode constant + matched-frequency probes
    std::uint64_t seed = 1;
};

ConstantsEstimate estimate_kstar(const SpectralOperator& A, double p, TimeGrid grid,
                                 const KstarOptions& opts = {});

struct KdiamondOptions {
    std::size_t random_probes = 3;
    bool per_mode_probes = true;  // G = indicator[0, 1/Re mu_k) on one mode
    std::size_t n_paths = 10000;
    std::size_t random_probe_noise_dim = 2;
    std::uint64_t seed = 1;
    int threads = 1;
};

ConstantsEstimate estimate_kdiamond(const SpectralOperator& A, double p, TimeGrid grid,
                                    const KdiamondOptions& opts = {});

struct DiamondProbeResult {
    double ratio = 0.0;
    double standard_error = 0.0;
    double denom = 0.0;
    double tail_fraction = 0.0;
};

/// Monte Carlo ratio ||A^{1/2} S<>G||_{L^p(Omega x (0,T); X0)} / ||G||_{L^p((0,T); HS)}
/// for one deterministic step-operator probe. Throws InsufficientSamples for a
/// degenerate denominator or when the standard error exceeds 10% of the value.
DiamondProbeResult kdiamond_probe(const SpectralOperator& A, double p, TimeGrid grid,
                                  std::span<const NoiseOperator> g_steps, std::uint64_t seed,
                                  std::size_t n_paths, int threads = 1);

/// Left-endpoint L^p time norm of per-node values (last node excluded).
double lp_time_norm(std::span<const double> node_values, double dt, double p);

}  // namespace mrl
