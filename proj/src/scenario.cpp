#include "maxreglab/scenario.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "maxreglab/errors.hpp"

namespace mrl {

using nlohmann::json;

namespace {

json complex_to_json(const Complex& z) {
    if (z.imag() == 0.0) return json(z.real());
    return json::array({z.real(), z.imag()});
}

Complex complex_from_json(const json& j) {
    if (j.is_number()) return Complex(j.get<double>(), 0.0);
    if (j.is_array() && j.size() == 2) return Complex(j[0].get<double>(), j[1].get<double>());
    throw InvalidScenario("complex numbers are a number or a [re, im] pair");
}

FormSpec form_from_json(const json& j) {
    FormSpec f;
    if (j.is_null()) return f;
    f.form = j.value("form", "zero");
    f.coeff = j.value("coeff", 0.0);
    return f;
}

json form_to_json(const FormSpec& f) {
    return json{{"form", f.form}, {"coeff", f.coeff}};
}

LipschitzConstants lip_from_json(const json& j, const char* l, const char* lt,
                                 const char* c) {
    LipschitzConstants out;
    out.lip_x1 = j.value(l, 0.0);
    out.lip_x0 = j.value(lt, 0.0);
    out.growth = j.value(c, 0.0);
    return out;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw InvalidScenario(std::string("scenario is not valid JSON: ") + e.what());
    }
    if (!j.contains("version")) throw InvalidScenario("scenario lacks the version field");
    Scenario s;
    s.version = j["version"].get<int>();
    if (s.version != 1) throw InvalidScenario("unsupported scenario version");
    s.id = j.value("id", "");
    if (s.id.empty()) throw InvalidScenario("scenario lacks an id");

    if (!j.contains("operator")) throw InvalidScenario("scenario lacks the operator block");
    const json& op = j["operator"];
    s.op.basis = op.value("basis", "abstract");
    s.op.dimension = op.value("dimension", 1);
    s.op.order = op.value("order", 2);
    s.op.mode_cutoff = op.value("mode_cutoff", std::size_t{1});
    s.op.shift = op.value("shift", 0.0);
    s.op.time_ramp = op.value("time_ramp", 0.0);
    if (op.contains("eigenvalues")) {
        for (const auto& e : op["eigenvalues"]) s.op.eigenvalues.push_back(complex_from_json(e));
        if (s.op.mode_cutoff <= 1) s.op.mode_cutoff = s.op.eigenvalues.size();
    }

    const json& nl = j.value("nonlinearity", json::object());
    s.F = form_from_json(nl.value("F", json()));
    s.B = form_from_json(nl.value("B", json()));

    const json& local = j.value("local", json::object());
    s.F2 = form_from_json(local.value("F2", json()));
    s.f2_lip_per_radius = local.value("lipschitz_per_radius", 0.0);
    s.n_max = local.value("n_max", 0);

    const json& noise = j.value("noise", json::object());
    s.noise_dim = noise.value("dimension", std::size_t{1});
    s.b = form_from_json(noise.value("b", json()));
    if (noise.contains("amplitudes")) {
        for (const auto& a : noise["amplitudes"]) s.b_amplitudes.push_back(a.get<double>());
    }

    const json& u0 = j.value("u0", json::object());
    s.u0.form = u0.value("form", "algebraic_decay");
    s.u0_amplitude = u0.value("amplitude", 1.0);
    s.u0_decay = u0.value("decay", 2.0);
    if (u0.contains("values")) {
        for (const auto& v : u0["values"]) s.u0_values.push_back(complex_from_json(v));
    }

    const json& cons = j.value("constants", json::object());
    s.f_const = lip_from_json(cons, "LF", "LFt", "CF");
    s.b_const = lip_from_json(cons, "LB", "LBt", "CB");
    s.kstar = cons.value("kstar", 0.0);
    s.kdiamond = cons.value("kdiamond", 0.0);

    s.p = j.value("p", 2.0);
    s.q = j.value("q", 2.0);
    s.horizon = j.value("T", 1.0);
    s.n_steps = j.value("n_steps", std::size_t{256});
    s.n_paths = j.value("n_paths", std::size_t{100});
    s.seed = j.value("seed", std::uint64_t{1});

    if (s.p < 2.0) throw InvalidScenario("p must be at least 2");
    if (s.horizon <= 0.0 || s.n_steps == 0) throw InvalidScenario("empty time grid");
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidScenario("cannot open scenario file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

std::string serialize_scenario(const Scenario& s) {
    json op{{"basis", s.op.basis},        {"dimension", s.op.dimension},
            {"order", s.op.order},        {"mode_cutoff", s.op.mode_cutoff},
            {"shift", s.op.shift},        {"time_ramp", s.op.time_ramp}};
    if (!s.op.eigenvalues.empty()) {
        json eigs = json::array();
        for (const auto& e : s.op.eigenvalues) eigs.push_back(complex_to_json(e));
        op["eigenvalues"] = eigs;
    }
    json u0{{"form", s.u0.form}, {"amplitude", s.u0_amplitude}, {"decay", s.u0_decay}};
    if (!s.u0_values.empty()) {
        json vals = json::array();
        for (const auto& v : s.u0_values) vals.push_back(complex_to_json(v));
        u0["values"] = vals;
    }
    json noise{{"dimension", s.noise_dim}, {"b", form_to_json(s.b)}};
    if (!s.b_amplitudes.empty()) noise["amplitudes"] = s.b_amplitudes;

    json cons{{"LF", s.f_const.lip_x1},  {"LFt", s.f_const.lip_x0},
              {"CF", s.f_const.growth},  {"LB", s.b_const.lip_x1},
              {"LBt", s.b_const.lip_x0}, {"CB", s.b_const.growth},
              {"kstar", s.kstar},        {"kdiamond", s.kdiamond}};

    json j{{"version", s.version},
           {"id", s.id},
           {"operator", op},
           {"nonlinearity", json{{"F", form_to_json(s.F)}, {"B", form_to_json(s.B)}}},
           {"noise", noise},
           {"u0", u0},
           {"constants", cons},
           {"p", s.p},
           {"q", s.q},
           {"T", s.horizon},
           {"n_steps", s.n_steps},
           {"n_paths", s.n_paths},
           {"seed", s.seed}};
    if (s.F2.form != "zero" || s.n_max > 0) {
        j["local"] = json{{"F2", form_to_json(s.F2)},
                          {"lipschitz_per_radius", s.f2_lip_per_radius},
                          {"n_max", s.n_max}};
    }
    return j.dump(2);
}

std::uint64_t scenario_hash(const Scenario& s) {
    const std::string text = serialize_scenario(s);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

SpectralOperator build_operator(const Scenario& s) {
    if (s.op.basis == "abstract") {
        if (s.op.eigenvalues.empty())
            throw InvalidScenario("abstract basis requires an eigenvalue list");
        return SpectralOperator::make(s.op.eigenvalues, s.op.shift);
    }
    if (s.op.basis == "fourier_torus") {
        return SpectralOperator::fourier_torus(s.op.order, s.op.mode_cutoff, s.op.shift);
    }
    if (s.op.basis == "sine_interval") {
        return SpectralOperator::sine_interval(s.op.order, s.op.mode_cutoff, s.op.shift);
    }
    throw UnknownForm("unknown basis: " + s.op.basis);
}

// pseudo-spectral pointwise map with 2/3-rule dealiasing; op must have a
// concrete basis. The pointwise function acts on real and imaginary parts
// separately, which keeps it globally Lipschitz on complex samples.
template <typename Pointwise>
StateVector nemytskii(const SpectralOperator& A, const StateVector& x, Pointwise fn) {
    const std::size_t K = A.mode_count();
    const std::size_t grid_size = 4 * K;
    const long k_max = [&] {
        long m = 0;
        for (long w : A.wavenumbers()) m = std::max(m, std::labs(w));
        return m;
    }();
    const long cutoff = (2 * k_max) / 3;
    StateVector trimmed = x;
    for (std::size_t k = 0; k < K; ++k) {
        if (std::labs(A.wavenumbers()[k]) > cutoff) trimmed[k] = Complex(0.0, 0.0);
    }
    std::vector<Complex> samples = synthesize(A, trimmed, grid_size);
    for (auto& v : samples) v = Complex(fn(v.real()), fn(v.imag()));
    StateVector out = analyze(A, samples);
    for (std::size_t k = 0; k < K; ++k) {
        if (std::labs(A.wavenumbers()[k]) > cutoff) out[k] = Complex(0.0, 0.0);
    }
    return out;
}

DriftFn build_drift(const Scenario& s, const SpectralOperator& A) {
    if (s.F.form == "zero") return nullptr;
    const double c = s.F.coeff;
    if (s.F.form == "linear_operator") {
        return [A, c](double, const StateVector& x) {
            StateVector r(x.size());
            for (std::size_t k = 0; k < x.size(); ++k) r[k] = c * A.mu(k) * x[k];
            return r;
        };
    }
    if (s.F.form == "linear_identity") {
        return [c](double, const StateVector& x) {
            StateVector r = x;
            r *= Complex(c, 0.0);
            return r;
        };
    }
    if (s.F.form == "sin_pointwise") {
        if (A.basis().kind == BasisKind::abstract_modes)
            throw UnknownForm("sin_pointwise needs a concrete basis");
        return [A, c](double, const StateVector& x) {
            StateVector r = nemytskii(A, x, [](double v) { return std::sin(v); });
            r *= Complex(c, 0.0);
            return r;
        };
    }
    if (s.F.form == "gradient") {
        if (A.basis().kind != BasisKind::fourier_torus)
            throw UnknownForm("gradient form needs the fourier_torus basis");
        return [A, c](double, const StateVector& x) {
            StateVector r(x.size());
            for (std::size_t k = 0; k < x.size(); ++k) {
                r[k] = c * Complex(0.0, static_cast<double>(A.wavenumbers()[k])) * x[k];
            }
            return r;
        };
    }
    throw UnknownForm("unknown drift form: " + s.F.form);
}

NoiseFn build_noise_map(const Scenario& s, const SpectralOperator& A) {
    if (s.B.form == "zero") return nullptr;
    const double c = s.B.coeff;
    const std::size_t M = s.noise_dim;
    const double col = c / std::sqrt(static_cast<double>(M));
    if (s.B.form == "halfpower_linear") {
        return [A, col, M](double, const StateVector& x) {
            NoiseOperator g(x.size(), M);
            for (std::size_t k = 0; k < x.size(); ++k) {
                const Complex v = col * std::sqrt(A.mu(k)) * x[k];
                for (std::size_t i = 0; i < M; ++i) g.at(k, i) = v;
            }
            return g;
        };
    }
    if (s.B.form == "identity_halfscale") {
        return [A, col, M](double, const StateVector& x) {
            NoiseOperator g(x.size(), M);
            for (std::size_t k = 0; k < x.size(); ++k) {
                const Complex v = col * x[k] / std::sqrt(A.mu(k));
                for (std::size_t i = 0; i < M; ++i) g.at(k, i) = v;
            }
            return g;
        };
    }
    throw UnknownForm("unknown noise form: " + s.B.form);
}

std::vector<NoiseOperator> build_additive_noise(const Scenario& s, const SpectralOperator& A) {
    if (s.b.form == "zero") return {};
    const std::size_t K = A.mode_count();
    const std::size_t M = s.noise_dim;
    NoiseOperator g(K, M);
    if (s.b.form == "constant_diag") {
        // column i feeds mode i with unit X_{1/2} energy per amplitude
        for (std::size_t i = 0; i < M && i < K; ++i) {
            const double amp = i < s.b_amplitudes.size() ? s.b_amplitudes[i] : s.b.coeff;
            g.at(i, i) = amp / std::sqrt(A.mu(i));
        }
    } else if (s.b.form == "log_uniform_diag") {
        // one column per mode, equal noise energy per mode in the X_{1/2} scale
        if (M != K) throw InvalidScenario("log_uniform_diag requires noise dimension K");
        for (std::size_t k = 0; k < K; ++k) {
            g.at(k, k) = s.b.coeff / std::sqrt(A.mu(k));
        }
    } else {
        throw UnknownForm("unknown additive noise form: " + s.b.form);
    }
    return std::vector<NoiseOperator>(s.n_steps, g);
}

StateVector build_u0(const Scenario& s, const SpectralOperator& A) {
    const std::size_t K = A.mode_count();
    StateVector x(K);
    if (s.u0.form == "coefficients") {
        if (s.u0_values.size() != K)
            throw InvalidScenario("u0 coefficient list does not match the mode count");
        for (std::size_t k = 0; k < K; ++k) x[k] = s.u0_values[k];
        return x;
    }
    if (s.u0.form == "algebraic_decay") {
        for (std::size_t k = 0; k < K; ++k) {
            x[k] = s.u0_amplitude / std::pow(1.0 + static_cast<double>(k), s.u0_decay);
        }
        return x;
    }
    throw UnknownForm("unknown u0 form: " + s.u0.form);
}

DriftFn build_local_drift(const Scenario& s, const SpectralOperator& A) {
    if (s.F2.form == "zero") return nullptr;
    const double c = s.F2.coeff;
    if (s.F2.form == "quadratic_pointwise") {
        if (A.basis().kind == BasisKind::abstract_modes) {
            if (A.mode_count() != 1)
                throw UnknownForm("quadratic_pointwise on the abstract basis is scalar only");
            return [c](double, const StateVector& x) {
                StateVector r(1);
                r[0] = c * x[0] * x[0];
                return r;
            };
        }
        return [A, c](double, const StateVector& x) {
            StateVector r = nemytskii(A, x, [](double v) { return v * v; });
            r *= Complex(c, 0.0);
            return r;
        };
    }
    if (s.F2.form == "quadratic_saturated") {
        // x^2 / (1 + ||x||_trace): locally Lipschitz with linear growth
        auto ev = std::make_shared<TraceNormEvaluator>(A, 1.0 - 1.0 / s.p, s.p);
        if (A.basis().kind == BasisKind::abstract_modes && A.mode_count() == 1) {
            return [c, ev](double, const StateVector& x) {
                StateVector r(1);
                r[0] = c * x[0] * x[0] / (1.0 + ev->norm(x));
                return r;
            };
        }
        return [A, c, ev](double, const StateVector& x) {
            StateVector r = nemytskii(A, x, [](double v) { return v * v; });
            r *= Complex(c / (1.0 + ev->norm(x)), 0.0);
            return r;
        };
    }
    throw UnknownForm("unknown local drift form: " + s.F2.form);
}

}  // namespace

ProblemSpec build_problem(const Scenario& s) {
    ProblemSpec spec;
    spec.op = build_operator(s);
    spec.F = build_drift(s, spec.op);
    spec.f_const = s.f_const;
    spec.B = build_noise_map(s, spec.op);
    spec.b_const = s.b_const;
    spec.b_steps = build_additive_noise(s, spec.op);
    spec.u0 = build_u0(s, spec.op);
    spec.horizon = s.horizon;
    spec.p = s.p;
    spec.q = s.q;
    spec.noise_dim = s.noise_dim;

    if (s.op.time_ramp != 0.0) {
        spec.time_dependent = true;
        const std::vector<Complex> base(spec.op.eigenvalues().begin(),
                                        spec.op.eigenvalues().end());
        const double ramp = s.op.time_ramp;
        const double T = s.horizon;
        spec.eigenvalues_at = [base, ramp, T](double t) {
            std::vector<Complex> l(base.size());
            for (std::size_t k = 0; k < base.size(); ++k)
                l[k] = base[k] * (1.0 + ramp * t / T);
            return l;
        };
    }

    spec.F2 = build_local_drift(s, spec.op);
    if (spec.F2) {
        spec.has_local = true;
        spec.n_max = s.n_max > 0 ? s.n_max : 100;
        const double per_radius = s.f2_lip_per_radius;
        spec.f2_lip = [per_radius](double radius) { return per_radius * radius; };
    }

    validate_problem_spec(spec, s.seed ^ 0x5eedULL, 100);
    return spec;
}

ContractionMargin scenario_margin(const Scenario& s, const ProblemSpec& spec, int threads) {
    double kstar = s.kstar;
    double kdiamond = s.kdiamond;
    if (kstar <= 0.0 || kdiamond <= 0.0) {
        if (spec.op.self_adjoint() && s.p == 2.0) {
            // sharp Hilbert-space values
            if (kstar <= 0.0) kstar = 1.0;
            if (kdiamond <= 0.0) kdiamond = 1.0 / std::sqrt(2.0);
        } else {
            TimeGrid grid{8.0 / spec.op.delta(), 1024};
            if (kstar <= 0.0) {
                KstarOptions opts;
                opts.random_probes = 40;
                opts.seed = s.seed ^ 0xabcdULL;
                kstar = estimate_kstar(spec.op, s.p, grid, opts).value * 1.05;
            }
            if (kdiamond <= 0.0) {
                KdiamondOptions opts;
                opts.n_paths = 2000;
                opts.random_probes = 2;
                opts.seed = s.seed ^ 0xd1a0ULL;
                opts.threads = threads;
                kdiamond = estimate_kdiamond(spec.op, s.p, grid, opts).value * 1.1;
            }
        }
    }
    return margin_from_constants(spec.f_const, spec.b_const, kstar, kdiamond);
}

namespace {

Scenario make_hilbert_sharp() {
    Scenario s;
    s.id = "hilbert_sharp";
    s.op.basis = "abstract";
    s.op.eigenvalues = {{1, 0}, {2, 0}, {4, 0}, {8, 0}, {16, 0}};
    s.op.mode_cutoff = 5;
    s.u0.form = "algebraic_decay";
    s.u0_amplitude = 1.0;
    s.u0_decay = 2.0;
    s.kstar = 1.0;
    s.kdiamond = 1.0 / std::sqrt(2.0);
    s.p = 2.0;
    s.q = 2.0;
    s.horizon = 10.0;
    s.n_steps = 2048;
    s.n_paths = 10000;
    s.seed = 42901;
    return s;
}

Scenario make_heat_torus() {
    Scenario s;
    s.id = "heat_torus";
    s.op.basis = "fourier_torus";
    s.op.order = 2;
    s.op.mode_cutoff = 64;
    s.op.shift = 1.0;
    s.F = {"sin_pointwise", 0.1};
    s.f_const = {0.0, 0.1, 0.2};
    s.B = {"halfpower_linear", 0.2};
    s.b_const = {0.2, 0.0, 0.4};
    s.noise_dim = 4;
    s.b = {"constant_diag", 0.05};
    s.u0.form = "algebraic_decay";
    s.u0_amplitude = 1.0;
    s.u0_decay = 2.0;
    s.kstar = 1.0;
    s.kdiamond = 1.0 / std::sqrt(2.0);
    s.p = 2.0;
    s.q = 2.0;
    s.horizon = 1.0;
    s.n_steps = 256;
    s.n_paths = 64;
    s.seed = 52901;
    return s;
}

Scenario make_biharmonic_torus() {
    Scenario s = make_heat_torus();
    s.id = "biharmonic_torus";
    s.op.order = 4;
    s.op.mode_cutoff = 32;
    s.n_steps = 256;
    s.seed = 62901;
    return s;
}

Scenario make_dirichlet_interval() {
    Scenario s;
    s.id = "dirichlet_interval";
    s.op.basis = "sine_interval";
    s.op.order = 2;
    s.op.mode_cutoff = 32;
    s.op.shift = 0.0;  // delta = 1 from the first sine mode
    s.F = {"sin_pointwise", 0.1};
    s.f_const = {0.0, 0.1, 0.2};
    s.B = {"identity_halfscale", 0.3};
    s.b_const = {0.0, 0.3, 0.6};
    s.noise_dim = 2;
    s.u0.form = "algebraic_decay";
    s.u0_amplitude = 1.0;
    s.u0_decay = 2.0;
    s.kstar = 1.0;
    s.kdiamond = 1.0 / std::sqrt(2.0);
    s.p = 2.0;
    s.q = 4.0;
    s.horizon = 1.0;
    s.n_steps = 256;
    s.n_paths = 64;
    s.seed = 72901;
    return s;
}

Scenario make_timedep_drift() {
    Scenario s;
    s.id = "timedep_drift";
    s.op.basis = "abstract";
    s.op.eigenvalues = {{1, 0}, {2, 0}, {4, 0}, {8, 0}};
    s.op.mode_cutoff = 4;
    s.op.time_ramp = 0.2;
    s.u0.form = "algebraic_decay";
    s.u0_amplitude = 1.0;
    s.u0_decay = 2.0;
    s.kstar = 1.0;
    s.kdiamond = 1.0 / std::sqrt(2.0);
    s.p = 2.0;
    s.q = 2.0;
    s.horizon = 1.0;
    s.n_steps = 256;
    s.n_paths = 16;
    s.seed = 82901;
    return s;
}

Scenario make_local_quadratic() {
    Scenario s;
    s.id = "local_quadratic";
    s.op.basis = "abstract";
    s.op.eigenvalues = {{1, 0}};
    s.op.mode_cutoff = 1;
    s.F2 = {"quadratic_pointwise", 1.0};
    s.n_max = 200;
    // trace norm of the single basis mode at p = 2: 1 + 1/sqrt(2)
    const double tau1 = 1.0 + 1.0 / std::sqrt(2.0);
    s.f2_lip_per_radius = 2.0 / (tau1 * tau1);
    s.u0.form = "coefficients";
    s.u0_values = {Complex(2.0, 0.0)};
    s.kstar = 1.0;
    s.kdiamond = 1.0 / std::sqrt(2.0);
    s.p = 2.0;
    s.q = 2.0;
    s.horizon = 0.8;
    s.n_steps = 8000;
    s.n_paths = 1;
    s.seed = 92901;
    return s;
}

}  // namespace

const std::vector<Scenario>& builtin_scenarios() {
    static const std::vector<Scenario> all = {
        make_hilbert_sharp(),     make_heat_torus(),    make_biharmonic_torus(),
        make_dirichlet_interval(), make_timedep_drift(), make_local_quadratic(),
    };
    return all;
}

const Scenario& builtin_scenario(const std::string& id) {
    for (const auto& s : builtin_scenarios()) {
        if (s.id == id) return s;
    }
    throw InvalidScenario("unknown builtin scenario: " + id);
}

}  // namespace mrl
