#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maxreglab/maxreg.hpp"
#include "maxreglab/regularity.hpp"
#include "maxreglab/solver.hpp"

namespace mrl {

/// Operator block of a scenario file. `eigenvalues` is used verbatim for the
/// abstract basis; concrete bases build |k|^order (+shift) themselves.
struct OperatorSpec {
    std::string basis = "abstract";
    int dimension = 1;
    int order = 2;
    std::size_t mode_cutoff = 1;
    std::vector<Complex> eigenvalues;
    double shift = 0.0;
    double time_ramp = 0.0;  // lambda_k(t) = lambda_k (1 + ramp t / T)
};

struct FormSpec {
    std::string form = "zero";
    double coeff = 0.0;
};

/// A complete scenario: operator, Nemytskii forms with declared constants,
/// noise, initial value, exponents, grid, ensemble size, seed.
struct Scenario {
    int version = 1;
    std::string id;
    OperatorSpec op;

    FormSpec F;   // zero | linear_operator | linear_identity | sin_pointwise | gradient
    FormSpec B;   // zero | halfpower_linear | identity_halfscale
    FormSpec F2;  // zero | quadratic_pointwise | quadratic_saturated
    double f2_lip_per_radius = 0.0;
    int n_max = 0;

    std::size_t noise_dim = 1;
    FormSpec b;  // additive noise: zero | constant_diag | log_uniform_diag
    std::vector<double> b_amplitudes;

    FormSpec u0;  // coefficients | algebraic_decay
    std::vector<Complex> u0_values;
    double u0_amplitude = 1.0;
    double u0_decay = 2.0;

    LipschitzConstants f_const, b_const;
    double kstar = 0.0;     // 0: default/estimated
    double kdiamond = 0.0;  // 0: default/estimated

    double p = 2.0, q = 2.0, horizon = 1.0;
    std::size_t n_steps = 256;
    std::size_t n_paths = 100;
    std::uint64_t seed = 1;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);
std::string serialize_scenario(const Scenario& s);

/// FNV-1a hash of the canonical serialization.
std::uint64_t scenario_hash(const Scenario& s);

/// Realizes the scenario as a ProblemSpec: spectral operator from the basis
/// formula, Nemytskii maps evaluated pseudo-spectrally with 2/3-rule
/// dealiasing, declared constants attached. Throws UnknownForm for
/// unrecognized form names and InvalidScenario when the declared constants
/// fail their empirical spot check.
ProblemSpec build_problem(const Scenario& s);

/// K* / K<> for the scenario: declared values if present, the sharp
/// self-adjoint p=2 defaults otherwise, an estimate as a last resort.
ContractionMargin scenario_margin(const Scenario& s, const ProblemSpec& spec,
                                  int threads = 1);

const std::vector<Scenario>& builtin_scenarios();
const Scenario& builtin_scenario(const std::string& id);

struct MomentEstimate {
    double value = 0.0;
    double standard_error = 0.0;
};

struct RunReport {
    std::string scenario_id;
    std::uint64_t hash = 0;
    std::uint64_t seed = 0;
    std::size_t n_paths = 0;
    int threads = 1;
    MomentEstimate lp_x1;      // (E ||U||_{L^p(0,T;X1)}^p)^{1/p}
    MomentEstimate trace_sup;  // (E sup_t ||U||_trace^p)^{1/p}
    double apriori_ratio = 0.0;  // lp_x1 / (1 + ||u0||_trace)
    double theta = 0.0, weight = 0.0, kstar = 0.0, kdiamond = 0.0;
    std::size_t stopped_paths = 0;
    double median_holder_x0 = 0.0;
    double wall_seconds = 0.0;
};

/// Solves the scenario ensemble and writes report.json, norms.csv (first
/// paths), constants.csv into out_dir. CSV bytes are reproducible for a fixed
/// (scenario, seed) at any thread count.
RunReport run_scenario(const Scenario& s, const std::string& out_dir, int threads = 1);

/// Constants estimation entry point: writes constants.csv and report.json.
RunReport run_constants(const Scenario& s, const std::string& out_dir, int threads = 1);

struct ConvergenceRow {
    double dt = 0.0;
    std::size_t mode_cutoff = 0;
    double error = 0.0;
    double rate = 0.0;  // vs the previous row; 0 for the first
};

/// Coupled self-convergence in the time step against the finest grid in
/// `grids` (counts of steps; each must divide the finest).
std::vector<ConvergenceRow> convergence_study(const Scenario& s,
                                              std::span<const std::size_t> grids,
                                              int threads = 1,
                                              const std::string& out_dir = "");

/// Spatial cutoff study: solves with mode counts from `cutoffs` coupled by
/// shared mode identities, errors in the trace norm against the largest.
std::vector<ConvergenceRow> convergence_study_modes(const Scenario& s,
                                                    std::span<const std::size_t> cutoffs,
                                                    int threads = 1,
                                                    const std::string& out_dir = "");

struct EnsembleMoments {
    MomentEstimate lp_x1;
    MomentEstimate trace_sup;
    std::size_t stopped_paths = 0;
    std::vector<double> per_path_lp_x1;  // path-indexed, reduction order fixed
};

EnsembleMoments ensemble_run(const Scenario& s, std::size_t n_paths, std::uint64_t seed,
                             int threads);

/// Runs the built-in scenario battery and writes one directory per scenario.
/// quick mode shrinks path counts; the outputs stay byte-deterministic for
/// fixed seeds at any thread count. Returns 0 on success.
int run_suite(const std::string& out_dir, int threads, bool quick);

}  // namespace mrl
