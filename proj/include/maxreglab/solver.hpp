#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "maxreglab/grid.hpp"
#include "maxreglab/noise.hpp"
#include "maxreglab/spectral.hpp"

namespace mrl {

/// Lipschitz/growth data of a nonlinearity: ||N(x) - N(y)|| <=
/// lip_x1 ||x-y||_{X1} + lip_x0 ||x-y||_{X0}, ||N(x)|| <= growth (1 + ||x||_{X1}).
struct LipschitzConstants {
    double lip_x1 = 0.0;
    double lip_x0 = 0.0;
    double growth = 0.0;
};

using DriftFn = std::function<StateVector(double t, const StateVector&)>;
using NoiseFn = std::function<NoiseOperator(double t, const StateVector&)>;
using RadiusConstantFn = std::function<double(double radius)>;
using EigenvalueFn = std::function<std::vector<Complex>(double t)>;

/// Full data of the evolution problem
///   dU + A(t) U dt = [F(t,U) + f] dt + [B(t,U) + b] dW,  U(0) = u0
/// on the truncated eigenbasis. F maps X1 -> X0; B maps X1 into operators
/// valued in X_{1/2} (Hilbert-Schmidt columns). F2/B2 are locally Lipschitz
/// with respect to the trace norm with radius-indexed constants.
struct ProblemSpec {
    SpectralOperator op;
    EigenvalueFn eigenvalues_at;  // unshifted eigenvalues at time t
    bool time_dependent = false;

    DriftFn F;
    LipschitzConstants f_const;
    NoiseFn B;
    LipschitzConstants b_const;

    DriftFn F2;
    RadiusConstantFn f2_lip;
    NoiseFn B2;
    RadiusConstantFn b2_lip;
    bool has_local = false;
    int n_max = 0;

    std::vector<StateVector> f_steps;    // additive forcing, may be empty
    std::vector<NoiseOperator> b_steps;  // additive noise, may be empty

    StateVector u0;
    double horizon = 1.0;
    double p = 2.0;
    double q = 2.0;
    std::size_t noise_dim = 1;
};

/// Margin of the fixed-point smallness condition. theta = 1 - (K* L_F + K<> L_B),
/// weight = M of the equivalent norm |||phi||| = ||phi||_{Z1} + M ||phi||_{Z0}.
struct ContractionMargin {
    double theta = 1.0;
    double weight = 0.0;
    double kstar = 1.0;
    double kdiamond = 1.0;
};

/// Throws SmallnessViolated when K* L_F + K<> L_B >= 1. weight is defined as 0
/// when both X1-Lipschitz constants vanish.
ContractionMargin contraction_margin(const ProblemSpec& spec, double kstar, double kdiamond);
ContractionMargin margin_from_constants(const LipschitzConstants& fc,
                                        const LipschitzConstants& bc, double kstar,
                                        double kdiamond);

struct PicardOptions {
    double tol = 1e-10;
    int max_iter = 200;
    int fixed_iterations = 0;      // > 0: run exactly this many iterations
    bool start_from_zero = false;  // initial guess 0 instead of S(t) u0
    std::uint64_t probe_seed = 1007;  // seed of the splitting surrogate probes
    std::size_t min_freeze_pieces = 1;  // floor for the freezing partition (refinement studies)
    // precomputed full-horizon kappa partition (grid indices); the splitting
    // surrogate is path-independent, so ensembles compute it once and share it
    const std::vector<std::size_t>* kappa_breaks = nullptr;
};

struct PieceStats {
    std::size_t begin = 0, end = 0;  // grid index range
    int iterations = 0;
    std::vector<double> ratios;
    std::vector<double> deltas;  // per-iteration |||phi_{m+1} - phi_m|||
};

struct SolveReport {
    std::vector<PieceStats> pieces;
    std::vector<double> kappa_partition;
    std::vector<double> freeze_partition;
    int total_iterations = 0;
};

/// Empirical surrogate for the lower-order constant c~(t): cumulative ratio
/// sup over probe pairs of ||L(phi1)-L(phi2)||_{Z0,[0,t]} / |||phi1-phi2|||_[0,t].
/// Returned per grid node (index 0 unused).
std::vector<double> contraction_surrogate(const ProblemSpec& spec,
                                          const ContractionMargin& margin, TimeGrid grid,
                                          std::uint64_t probe_seed);

/// Splitting of [0, T] into intervals of length <= kappa, where kappa is the
/// first time the weighted surrogate M c~(t) reaches theta/2 (whole grid when
/// the weight vanishes). Returns grid indices 0 = i_0 < ... < i_m = n_steps.
std::vector<std::size_t> split_horizon(const ProblemSpec& spec,
                                       const ContractionMargin& margin, TimeGrid grid,
                                       std::uint64_t probe_seed = 1007);

/// Single-interval Picard iteration of the mild-solution map
///   L(phi)(t) = S(t) u0 + S*[F(.,phi)+f](t) + S<>[B(.,phi)+b](t)
/// in the weighted norm |||.|||. Throws NoConvergence at the iteration cap.
SolutionPath picard_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                          TimeGrid grid, const ContractionMargin& margin,
                          const PicardOptions& opts = {}, SolveReport* report = nullptr);

/// Picard on the kappa-partition with restarts from the trace-space value at
/// each breakpoint. Sub-intervals that still fail to contract are halved
/// adaptively before giving up.
SolutionPath glue_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                        TimeGrid grid, const ContractionMargin& margin,
                        const PicardOptions& opts = {}, SolveReport* report = nullptr);

/// Time-dependent operator family: freezes A at the left endpoint of each
/// piece of a partition whose relative oscillation stays below theta/2, moves
/// the difference into the drift, and glues. Constant families delegate to
/// glue_solve unchanged.
SolutionPath freeze_timedep_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                                  TimeGrid grid, const ContractionMargin& margin,
                                  const PicardOptions& opts = {},
                                  SolveReport* report = nullptr);

struct LocalSolveResult {
    SolutionPath path;
    int level_reached = 0;  // radius level of the returned solve
};

/// Localization over trace-norm radius levels n = 1..n_max with the clamped
/// extension of F2/B2 outside the ball of radius n. Sets stopping_time at the
/// first grid time the trace norm reaches n_max; truncation is reported, not
/// an error.
LocalSolveResult local_solve(const ProblemSpec& spec, const OuIntegralProvider& noise,
                             TimeGrid grid, const ContractionMargin& margin,
                             const PicardOptions& opts = {}, SolveReport* report = nullptr);

/// Discrete check of the stopped-convolution identities
///   I(G)(t ^ tau) = I_tau(G)(t ^ tau),
///   S(t - t ^ tau) I(G)(t ^ tau) = I_tau(G)(t)
/// for a grid-valued stopping index. Returns the max X0 deviation.
double stopped_convolution_check(const SpectralOperator& A,
                                 std::span<const NoiseOperator> g_steps,
                                 const OuIntegralProvider& noise, std::size_t tau_index);

/// Max over grid nodes of the X0 norm of the integrated-form residual
///   R(t) = U(t) + sum A(t_m) U_m dt - u0 - sum (F + f) dt - sum (B + b) dW.
double strong_residual(const SolutionPath& solution, const ProblemSpec& spec,
                       const OuIntegralProvider& noise);

/// Spot-checks the declared Lipschitz and growth constants on random pairs.
/// Throws InvalidScenario when a declared constant is violated.
void validate_problem_spec(const ProblemSpec& spec, std::uint64_t seed = 1,
                           std::size_t trials = 100);

/// 1 + max_k seminorm(e_k): rigorous bound on ||x||_trace / ||x||_{X0} on the
/// truncated spectrum (trace scale of exponent 1 - 1/p).
double trace_embedding_constant(const SpectralOperator& A, double p);

/// Trace norms of every node of a trajectory.
std::vector<double> trace_norms(const SolutionPath& solution, const SpectralOperator& A,
                                double p);

}  // namespace mrl
