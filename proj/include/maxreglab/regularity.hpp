#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maxreglab/noise.hpp"
#include "maxreglab/solver.hpp"
#include "maxreglab/spectral.hpp"

namespace mrl {

inline constexpr const char* kCodeVersion = "maxreglab 0.1.0";

struct HolderEstimate {
    double exponent = 0.0;
    std::vector<double> lags;
    std::vector<double> max_increments;
};

/// Least-squares slope of log max-increment against log lag over dyadic lags
/// 2^j dt, j = 0..J with J = floor(log2 n_steps) - 2, in the X_alpha norm.
/// Throws InsufficientLevels when fewer than 5 dyadic levels fit.
HolderEstimate holder_exponent(const SolutionPath& solution, const SpectralOperator& A,
                               double alpha);

/// Same estimator for a scalar series sampled at uniform spacing dt.
HolderEstimate holder_exponent_series(std::span<const double> values, double dt);

double median(std::vector<double> values);

enum class DivergenceVerdict { diverges, bounded };

struct BesovCheck {
    std::vector<double> lags;         // coarse to fine
    std::vector<double> level_terms;  // lag^{-p/2} * mean |increment|^p, ensemble mean
    std::vector<double> partial_sums;
    double growth_rate = 0.0;  // mean log2 ratio of the last level terms
    DivergenceVerdict verdict = DivergenceVerdict::bounded;
};

/// Discrete surrogate of the H^{1/2,p} seminorm of scalar paths: dyadic-lag
/// blocks added from coarse to fine. The verdict is "diverges" when the
/// partial sums keep growing as finer scales enter (terms not dying out over
/// the last three levels and final/first >= 4).
BesovCheck bm_halfreg_check(std::span<const std::vector<double>> paths, double dt, double p,
                            int levels);

/// Weierstrass-type random series with Holder exponent h on [0, T]:
/// sum_j 2^{-j h} (a_j cos + b_j sin)(2 pi 2^j t / T).
std::vector<double> synthetic_holder_path(double h, std::size_t n_steps, double horizon,
                                          std::uint64_t seed, std::uint64_t path_index);

struct Provenance {
    std::string scenario_id;
    std::uint64_t scenario_hash = 0;
    std::uint64_t seed = 0;
};

struct RegularityReport {
    double trace_sup = 0.0;
    double continuity_modulus = 0.0;  // max ||U(t+dt) - U(t)||_trace over the grid
    std::vector<std::pair<double, double>> holder_table;  // (theta, exponent in X_{1-theta})
    double kstar = 0.0, kdiamond = 0.0, theta_margin = 0.0, kappa = 0.0;
    std::optional<double> stopping_time;
    std::string scenario_id;
    std::uint64_t scenario_hash = 0;
    std::uint64_t seed = 0;
    std::size_t n_steps = 0;
    double horizon = 0.0;
    std::string code_version = kCodeVersion;
};

/// Pathwise report: trace supremum and one-step continuity modulus in the
/// trace scale, Holder exponents for the requested theta values.
RegularityReport trace_continuity_report(const SolutionPath& solution,
                                         const ProblemSpec& spec,
                                         const ContractionMargin& margin,
                                         std::span<const double> thetas,
                                         const Provenance& provenance = {});

}  // namespace mrl
