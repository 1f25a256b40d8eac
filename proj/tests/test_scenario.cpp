#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "maxreglab/scenario.hpp"

using namespace mrl;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("maxreglab_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

Scenario pure_decay_scenario() {
    Scenario s;
    s.id = "unit_pure_decay";
    s.op.basis = "abstract";
    s.op.eigenvalues = {{1, 0}, {4, 0}, {9, 0}};
    s.op.mode_cutoff = 3;
    s.u0.form = "coefficients";
    s.u0_values = {Complex(1.0, 0.0), Complex(0.5, 0.0), Complex(0.25, 0.0)};
    s.kstar = 1.0;
    s.kdiamond = 1.0 / std::sqrt(2.0);
    s.horizon = 1.0;
    s.n_steps = 64;
    s.n_paths = 4;
    s.seed = 11;
    return s;
}

}  // namespace

TEST_CASE("scenario round trip") {
    for (const Scenario& s : builtin_scenarios()) {
        const std::string text = serialize_scenario(s);
        const Scenario back = parse_scenario(text);
        CHECK(serialize_scenario(back) == text);
        CHECK(scenario_hash(back) == scenario_hash(s));
    }
}

TEST_CASE("hash distinguishes scenarios") {
    Scenario a = builtin_scenario("heat_torus");
    Scenario b = a;
    b.seed += 1;
    CHECK(scenario_hash(a) != scenario_hash(b));
}

TEST_CASE("schema violations are rejected") {
    CHECK_THROWS_AS(parse_scenario("{not json"), InvalidScenario);
    CHECK_THROWS_AS(parse_scenario("{\"id\":\"x\"}"), InvalidScenario);  // no version
    CHECK_THROWS_AS(parse_scenario("{\"version\":1}"), InvalidScenario);  // no id

    Scenario s = builtin_scenario("heat_torus");
    s.F.form = "definitely_not_a_form";
    CHECK_THROWS_AS(build_problem(s), UnknownForm);

    Scenario s2 = builtin_scenario("heat_torus");
    s2.b.form = "mystery_noise";
    CHECK_THROWS_AS(build_problem(s2), UnknownForm);
}

TEST_CASE("operator formulas per basis") {
    Scenario heat = builtin_scenario("heat_torus");
    ProblemSpec spec = build_problem(heat);
    CHECK(spec.op.mode_count() == 64);
    // eigenvalues |k|^2, k = -32..31, sorted: 0, 1, 1, 4, 4, ...
    CHECK(spec.op.eigenvalues()[0].real() == 0.0);
    CHECK(spec.op.eigenvalues()[1].real() == 1.0);
    CHECK(spec.op.eigenvalues()[2].real() == 1.0);
    CHECK(spec.op.eigenvalues()[63].real() == 32.0 * 32.0);
    CHECK(spec.op.delta() == doctest::Approx(1.0));  // shift 1

    Scenario bi = builtin_scenario("biharmonic_torus");
    ProblemSpec bspec = build_problem(bi);
    CHECK(bspec.op.eigenvalues().back().real() == 16.0 * 16.0 * 16.0 * 16.0);

    Scenario diri = builtin_scenario("dirichlet_interval");
    ProblemSpec dspec = build_problem(diri);
    CHECK(dspec.op.eigenvalues()[0].real() == 1.0);
    CHECK(dspec.op.eigenvalues().back().real() == 32.0 * 32.0);
    // trace norm of the initial value through the orbit quadrature
    const double trace = interp_norm_real(dspec.op, 1.0 - 1.0 / diri.p, diri.p, dspec.u0).norm;
    CHECK(std::isfinite(trace));
    CHECK(trace > 0.0);
    // physical-space L^q norm at the scenario's q
    CHECK(grid_norm_lq(dspec.op, dspec.u0, diri.q, 4 * dspec.op.mode_count()) > 0.0);
}

TEST_CASE("builtin scenarios build and validate") {
    for (const Scenario& s : builtin_scenarios()) {
        CHECK_NOTHROW(build_problem(s));
    }
}

TEST_CASE("zero-noise scenario matches the closed form and reruns bit-equal") {
    Scenario s = pure_decay_scenario();
    const std::string dir = temp_dir("decay");
    auto rep = run_scenario(s, dir, 1);
    CHECK(rep.stopped_paths == 0);

    // norms.csv: normX0 must match the exact decay
    const std::string csv = slurp(dir + "/" + s.id + "/norms.csv");
    std::stringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "path,t,normX0,normX1,normTrace");
    std::string line;
    std::size_t checked = 0;
    while (std::getline(lines, line)) {
        std::stringstream row(line);
        std::string field;
        std::getline(row, field, ',');
        std::getline(row, field, ',');
        const double t = std::stod(field);
        std::getline(row, field, ',');
        const double x0 = std::stod(field);
        double expected = 0.0;
        const double coeffs[] = {1.0, 0.5, 0.25};
        const double lams[] = {1.0, 4.0, 9.0};
        for (int k = 0; k < 3; ++k)
            expected += coeffs[k] * coeffs[k] * std::exp(-2.0 * lams[k] * t);
        expected = std::sqrt(expected);
        CHECK(std::abs(x0 - expected) < 1e-10);
        ++checked;
    }
    CHECK(checked == 4 * 65);

    // byte-identical rerun, and thread count does not matter
    const std::string dir2 = temp_dir("decay2");
    run_scenario(s, dir2, 8);
    CHECK(slurp(dir + "/" + s.id + "/norms.csv") == slurp(dir2 + "/" + s.id + "/norms.csv"));
    CHECK(slurp(dir + "/" + s.id + "/constants.csv") ==
          slurp(dir2 + "/" + s.id + "/constants.csv"));
}

TEST_CASE("ensemble with one path equals the single solve") {
    Scenario s = builtin_scenario("heat_torus");
    s.n_paths = 1;
    s.n_steps = 64;
    auto one = ensemble_run(s, 1, s.seed, 1);
    auto again = ensemble_run(s, 1, s.seed, 4);
    REQUIRE(one.per_path_lp_x1.size() == 1);
    CHECK(one.per_path_lp_x1[0] == again.per_path_lp_x1[0]);
    CHECK(one.lp_x1.value == again.lp_x1.value);
}

TEST_CASE("thread count never changes ensemble estimates") {
    Scenario s = builtin_scenario("heat_torus");
    s.n_steps = 64;
    s.n_paths = 12;
    auto a = ensemble_run(s, 12, s.seed, 1);
    auto b = ensemble_run(s, 12, s.seed, 8);
    CHECK(a.lp_x1.value == b.lp_x1.value);
    CHECK(a.lp_x1.standard_error == b.lp_x1.standard_error);
    CHECK(a.trace_sup.value == b.trace_sup.value);
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(a.per_path_lp_x1[i] == b.per_path_lp_x1[i]);
}

TEST_CASE("temporal convergence: linear additive plateau at machine precision") {
    // pure decay + additive noise: the integrator is exact, so coupled grids
    // agree at common nodes up to rounding
    Scenario s = pure_decay_scenario();
    s.id = "unit_linear_additive";
    s.noise_dim = 2;
    s.b = {"constant_diag", 0.2};
    s.n_steps = 128;
    s.n_paths = 8;
    const std::size_t grids[] = {32, 64, 128};
    auto rows = convergence_study(s, grids, 2);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
        CHECK(r.error < 1e-12);
    }
}

TEST_CASE("temporal convergence: multiplicative noise has a strong rate") {
    Scenario s = builtin_scenario("heat_torus");
    s.op.mode_cutoff = 16;
    s.n_paths = 8;
    s.n_steps = 256;
    const std::size_t grids[] = {32, 64, 128, 256};
    auto rows = convergence_study(s, grids, 2);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].error < rows[i - 1].error);
        CHECK(rows[i].rate > 0.4);
    }
    MESSAGE("multiplicative rates: ", rows[1].rate, " ", rows[2].rate);
}

TEST_CASE("mode-cutoff study: trace error decreases in K") {
    Scenario s = builtin_scenario("heat_torus");
    s.n_steps = 64;
    s.n_paths = 6;
    const std::size_t cutoffs[] = {8, 16, 32, 64};
    auto rows = convergence_study_modes(s, cutoffs, 2);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].error < rows[i - 1].error);
    }
    MESSAGE("cutoff errors: ", rows[0].error, " ", rows[1].error, " ", rows[2].error);
}

TEST_CASE("scenario files shipped in the repository parse to the builtins") {
    const std::string root = std::filesystem::path(__FILE__).parent_path().parent_path();
    for (const Scenario& s : builtin_scenarios()) {
        const std::string path = root + "/scenarios/" + s.id + ".json";
        INFO("scenario file ", path);
        REQUIRE(std::filesystem::exists(path));
        const Scenario loaded = load_scenario(path);
        CHECK(serialize_scenario(loaded) == serialize_scenario(s));
    }
}

TEST_CASE("suite runs in quick mode and is thread-deterministic") {
    const std::string d1 = temp_dir("suite1");
    const std::string d2 = temp_dir("suite2");
    CHECK(run_suite(d1, 1, true) == 0);
    CHECK(run_suite(d2, 8, true) == 0);
    CHECK(slurp(d1 + "/suite_summary.csv") == slurp(d2 + "/suite_summary.csv"));
    for (const char* rel :
         {"hilbert_sharp/constants.csv", "heat_torus/norms.csv", "heat_torus/constants.csv",
          "heat_torus/convergence.csv", "local_quadratic/norms.csv"}) {
        INFO("comparing ", rel);
        CHECK(slurp(d1 + "/" + rel) == slurp(d2 + "/" + rel));
    }
}
