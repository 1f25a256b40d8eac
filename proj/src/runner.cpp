#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "maxreglab/errors.hpp"
#include "maxreglab/parallel.hpp"
#include "maxreglab/scenario.hpp"
#include "maxreglab/summation.hpp"

namespace mrl {

namespace {

using nlohmann::json;

struct PathSummary {
    double lp_x1_p = 0.0;      // ||U||_{L^p(0,T;X1)}^p
    double trace_sup = 0.0;
    double holder_x0 = 0.0;
    bool stopped = false;
    double stop_time = 0.0;
};

// shared per-ensemble state: the kappa partition is path-independent
struct SolvePlan {
    std::vector<std::size_t> breaks;

    SolvePlan(const ProblemSpec& spec, const ContractionMargin& margin, TimeGrid grid) {
        if (!spec.time_dependent && !spec.has_local) {
            breaks = split_horizon(spec, margin, grid);
        }
    }
};

SolutionPath solve_scenario_path(const ProblemSpec& spec, const ContractionMargin& margin,
                                 const OuIntegralProvider& noise, TimeGrid grid,
                                 const SolvePlan& plan) {
    PicardOptions opts;
    if (spec.time_dependent) {
        return freeze_timedep_solve(spec, noise, grid, margin, opts);
    }
    if (spec.has_local) {
        return local_solve(spec, noise, grid, margin, opts).path;
    }
    opts.kappa_breaks = &plan.breaks;
    return glue_solve(spec, noise, grid, margin, opts);
}

PathSummary summarize_path(const SolutionPath& sol, const ProblemSpec& spec,
                           const TraceNormEvaluator& ev) {
    PathSummary out;
    std::vector<double> x1(sol.states.size());
    for (std::size_t j = 0; j < sol.states.size(); ++j) {
        x1[j] = norm_alpha(spec.op, 1.0, sol.states[j]);
        out.trace_sup = std::max(out.trace_sup, ev.norm(sol.states[j]));
    }
    KahanSum acc;
    for (std::size_t j = 0; j + 1 < x1.size(); ++j)
        acc.add(std::pow(x1[j], spec.p) * sol.grid.dt());
    out.lp_x1_p = acc.value();
    if (sol.stopping_time) {
        out.stopped = true;
        out.stop_time = *sol.stopping_time;
    }
    if (sol.states.size() >= 64) {
        out.holder_x0 = holder_exponent(sol, spec.op, 0.0).exponent;
    }
    return out;
}

MomentEstimate bootstrap_mean(std::span<const double> values, std::uint64_t seed) {
    MomentEstimate est;
    const std::size_t n = values.size();
    if (n == 0) return est;
    est.value = compensated_mean(values);
    if (n < 2) return est;
    const std::size_t B = 200;
    std::vector<double> means(B);
    for (std::size_t b = 0; b < B; ++b) {
        KahanSum acc;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t pick =
                rng::mix(rng::key(seed, b, rng::Stream::bootstrap, i)) % n;
            acc.add(values[pick]);
        }
        means[b] = acc.value() / static_cast<double>(n);
    }
    const double m = compensated_mean(means);
    KahanSum var;
    for (double x : means) var.add((x - m) * (x - m));
    est.standard_error = std::sqrt(var.value() / static_cast<double>(B - 1));
    return est;
}

struct CsvFile {
    std::FILE* f = nullptr;
    explicit CsvFile(const std::string& path) { f = std::fopen(path.c_str(), "wb"); }
    ~CsvFile() {
        if (f) std::fclose(f);
    }
    bool ok() const { return f != nullptr; }
};

std::string ensure_dir(const std::string& out_dir, const std::string& scenario_id) {
    namespace fs = std::filesystem;
    fs::path p = fs::path(out_dir) / scenario_id;
    fs::create_directories(p);
    return p.string();
}

void write_norms_csv(const std::string& path, const Scenario& s, const ProblemSpec& spec,
                     const ContractionMargin& margin, const TraceNormEvaluator& ev,
                     const SolvePlan& plan, std::size_t max_paths) {
    CsvFile csv(path);
    if (!csv.ok()) throw Error("cannot write " + path);
    std::fprintf(csv.f, "path,t,normX0,normX1,normTrace\n");
    TimeGrid grid{s.horizon, s.n_steps};
    const std::size_t count = std::min<std::size_t>(max_paths, s.n_paths);
    for (std::size_t path_index = 0; path_index < count; ++path_index) {
        DirectOuProvider noise(s.seed, path_index, grid, s.noise_dim);
        auto sol = solve_scenario_path(spec, margin, noise, grid, plan);
        for (std::size_t j = 0; j < sol.states.size(); ++j) {
            std::fprintf(csv.f, "%zu,%.17g,%.17g,%.17g,%.17g\n", path_index, grid.t(j),
                         norm_alpha(spec.op, 0.0, sol.states[j]),
                         norm_alpha(spec.op, 1.0, sol.states[j]), ev.norm(sol.states[j]));
        }
    }
}

void write_constants_csv(const std::string& path,
                         std::span<const ConstantsEstimate> estimates,
                         std::span<const std::pair<std::string, double>> extra) {
    CsvFile csv(path);
    if (!csv.ok()) throw Error("cannot write " + path);
    std::fprintf(csv.f, "kind,p,value,stderr,probe,notes\n");
    for (const auto& e : estimates) {
        std::fprintf(csv.f, "%s,%.17g,%.17g,%.17g,%s,shift=%.17g tail_fraction=%.3g\n",
                     e.kind == ConstantKind::deterministic_star ? "kstar" : "kdiamond", e.p,
                     e.value, e.standard_error, e.achieving_probe.c_str(), e.shift,
                     e.tail_fraction);
    }
    for (const auto& [name, value] : extra) {
        std::fprintf(csv.f, "%s,,%.17g,0,,\n", name.c_str(), value);
    }
}

}  // namespace

EnsembleMoments ensemble_run(const Scenario& s, std::size_t n_paths, std::uint64_t seed,
                             int threads) {
    Scenario local = s;
    local.seed = seed;
    const ProblemSpec spec = build_problem(local);
    const ContractionMargin margin = scenario_margin(local, spec, threads);
    const TimeGrid grid{s.horizon, s.n_steps};
    const TraceNormEvaluator ev(spec.op, 1.0 - 1.0 / spec.p, spec.p);
    const SolvePlan plan(spec, margin, grid);

    std::vector<PathSummary> summaries(n_paths);
    parallel_for(n_paths, threads, [&](std::size_t path_index) {
        DirectOuProvider noise(seed, path_index, grid, s.noise_dim);
        auto sol = solve_scenario_path(spec, margin, noise, grid, plan);
        summaries[path_index] = summarize_path(sol, spec, ev);
    });

    EnsembleMoments out;
    std::vector<double> lp(n_paths), sup_p(n_paths);
    out.per_path_lp_x1.resize(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) {
        lp[i] = summaries[i].lp_x1_p;
        sup_p[i] = std::pow(summaries[i].trace_sup, s.p);
        out.per_path_lp_x1[i] = std::pow(summaries[i].lp_x1_p, 1.0 / s.p);
        if (summaries[i].stopped) ++out.stopped_paths;
    }
    auto lp_est = bootstrap_mean(lp, seed ^ 0xb001ULL);
    auto sup_est = bootstrap_mean(sup_p, seed ^ 0xb002ULL);
    // report the p-th roots; the error propagates through the chain rule
    out.lp_x1.value = std::pow(lp_est.value, 1.0 / s.p);
    out.lp_x1.standard_error =
        lp_est.value > 0.0 ? out.lp_x1.value * lp_est.standard_error / (s.p * lp_est.value)
                           : 0.0;
    out.trace_sup.value = std::pow(sup_est.value, 1.0 / s.p);
    out.trace_sup.standard_error =
        sup_est.value > 0.0
            ? out.trace_sup.value * sup_est.standard_error / (s.p * sup_est.value)
            : 0.0;
    return out;
}

RunReport run_scenario(const Scenario& s, const std::string& out_dir, int threads) {
    const auto t0 = std::chrono::steady_clock::now();
    const ProblemSpec spec = build_problem(s);
    const ContractionMargin margin = scenario_margin(s, spec, threads);
    const TraceNormEvaluator ev(spec.op, 1.0 - 1.0 / spec.p, spec.p);
    const TimeGrid grid{s.horizon, s.n_steps};
    const SolvePlan plan(spec, margin, grid);

    std::vector<PathSummary> summaries(s.n_paths);
    parallel_for(s.n_paths, threads, [&](std::size_t path_index) {
        DirectOuProvider noise(s.seed, path_index, grid, s.noise_dim);
        auto sol = solve_scenario_path(spec, margin, noise, grid, plan);
        summaries[path_index] = summarize_path(sol, spec, ev);
    });

    RunReport rep;
    rep.scenario_id = s.id;
    rep.hash = scenario_hash(s);
    rep.seed = s.seed;
    rep.n_paths = s.n_paths;
    rep.threads = threads;
    rep.theta = margin.theta;
    rep.weight = margin.weight;
    rep.kstar = margin.kstar;
    rep.kdiamond = margin.kdiamond;

    std::vector<double> lp(s.n_paths), sup_p(s.n_paths), holders;
    for (std::size_t i = 0; i < s.n_paths; ++i) {
        lp[i] = summaries[i].lp_x1_p;
        sup_p[i] = std::pow(summaries[i].trace_sup, s.p);
        if (summaries[i].holder_x0 != 0.0) holders.push_back(summaries[i].holder_x0);
        if (summaries[i].stopped) ++rep.stopped_paths;
    }
    auto lp_est = bootstrap_mean(lp, s.seed ^ 0xb001ULL);
    auto sup_est = bootstrap_mean(sup_p, s.seed ^ 0xb002ULL);
    rep.lp_x1.value = std::pow(lp_est.value, 1.0 / s.p);
    rep.lp_x1.standard_error =
        lp_est.value > 0.0 ? rep.lp_x1.value * lp_est.standard_error / (s.p * lp_est.value)
                           : 0.0;
    rep.trace_sup.value = std::pow(sup_est.value, 1.0 / s.p);
    rep.trace_sup.standard_error =
        sup_est.value > 0.0
            ? rep.trace_sup.value * sup_est.standard_error / (s.p * sup_est.value)
            : 0.0;
    const double trace_u0 = ev.norm(spec.u0);
    rep.apriori_ratio = rep.lp_x1.value / (1.0 + trace_u0);
    rep.median_holder_x0 = median(holders);

    const std::string dir = ensure_dir(out_dir, s.id);
    write_norms_csv(dir + "/norms.csv", s, spec, margin, ev, plan, 8);
    std::vector<std::pair<std::string, double>> extra{
        {"theta", margin.theta},   {"weight", margin.weight},
        {"kstar_used", margin.kstar}, {"kdiamond_used", margin.kdiamond},
        {"trace_u0", trace_u0},
    };
    write_constants_csv(dir + "/constants.csv", {}, extra);

    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    json jr{{"scenario", json::parse(serialize_scenario(s))},
            {"scenario_hash", rep.hash},
            {"seed", rep.seed},
            {"n_paths", rep.n_paths},
            {"threads", rep.threads},
            {"theta", rep.theta},
            {"weight", rep.weight},
            {"kstar", rep.kstar},
            {"kdiamond", rep.kdiamond},
            {"lp_x1", {{"value", rep.lp_x1.value}, {"stderr", rep.lp_x1.standard_error}}},
            {"trace_sup",
             {{"value", rep.trace_sup.value}, {"stderr", rep.trace_sup.standard_error}}},
            {"apriori_ratio", rep.apriori_ratio},
            {"stopped_paths", rep.stopped_paths},
            {"median_holder_x0", rep.median_holder_x0},
            {"wall_seconds", rep.wall_seconds},
            {"code_version", kCodeVersion},
            {"timestamp", static_cast<std::int64_t>(
                              std::chrono::duration_cast<std::chrono::seconds>(
                                  std::chrono::system_clock::now().time_since_epoch())
                                  .count())}};
    std::ofstream(dir + "/report.json") << jr.dump(2) << "\n";
    return rep;
}

RunReport run_constants(const Scenario& s, const std::string& out_dir, int threads) {
    const auto t0 = std::chrono::steady_clock::now();
    const ProblemSpec spec = build_problem(s);
    const TimeGrid grid{s.horizon, s.n_steps};

    KstarOptions kopts;
    kopts.random_probes = 100;
    kopts.seed = s.seed ^ 0x6a1fULL;
    auto kstar = estimate_kstar(spec.op, s.p, grid, kopts);

    KdiamondOptions dopts;
    dopts.n_paths = s.n_paths;
    dopts.random_probes = 3;
    dopts.seed = s.seed;
    dopts.threads = threads;
    auto kdiamond = estimate_kdiamond(spec.op, s.p, grid, dopts);

    std::vector<std::pair<std::string, double>> extra;
    if (spec.op.self_adjoint()) {
        const auto sgrid = default_s_grid(spec.op);
        extra.emplace_back("resolvent_sup", resolvent_bound_check(spec.op, sgrid));
    }

    const std::string dir = ensure_dir(out_dir, s.id);
    const ConstantsEstimate ests[] = {kstar, kdiamond};
    write_constants_csv(dir + "/constants.csv", ests, extra);

    RunReport rep;
    rep.scenario_id = s.id;
    rep.hash = scenario_hash(s);
    rep.seed = s.seed;
    rep.n_paths = s.n_paths;
    rep.threads = threads;
    rep.kstar = kstar.value;
    rep.kdiamond = kdiamond.value;
    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    json jr{{"scenario", json::parse(serialize_scenario(s))},
            {"scenario_hash", rep.hash},
            {"kstar",
             {{"value", kstar.value},
              {"stderr", kstar.standard_error},
              {"probe", kstar.achieving_probe},
              {"probes", kstar.probe_count}}},
            {"kdiamond",
             {{"value", kdiamond.value},
              {"stderr", kdiamond.standard_error},
              {"probe", kdiamond.achieving_probe},
              {"probes", kdiamond.probe_count},
              {"paths", kdiamond.sample_count}}},
            {"wall_seconds", rep.wall_seconds},
            {"code_version", kCodeVersion},
            {"timestamp", static_cast<std::int64_t>(
                              std::chrono::duration_cast<std::chrono::seconds>(
                                  std::chrono::system_clock::now().time_since_epoch())
                                  .count())}};
    for (const auto& [name, value] : extra) jr[name] = value;
    std::ofstream(dir + "/report.json") << jr.dump(2) << "\n";
    return rep;
}

std::vector<ConvergenceRow> convergence_study(const Scenario& s,
                                              std::span<const std::size_t> grids,
                                              int threads, const std::string& out_dir) {
    if (grids.size() < 2) throw InvalidScenario("convergence study needs at least 2 grids");
    std::vector<std::size_t> sorted(grids.begin(), grids.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t finest = sorted.back();
    for (std::size_t g : sorted) {
        if (finest % g != 0) throw InvalidScenario("every grid must divide the finest");
    }

    // one problem per grid (forcing vectors depend on the step count)
    std::vector<Scenario> per_grid;
    std::vector<ProblemSpec> specs;
    for (std::size_t g : sorted) {
        Scenario sg = s;
        sg.n_steps = g;
        per_grid.push_back(sg);
        specs.push_back(build_problem(per_grid.back()));
    }
    const ContractionMargin margin = scenario_margin(s, specs.back(), threads);
    std::vector<std::unique_ptr<SolvePlan>> plans;
    for (std::size_t gi = 0; gi < sorted.size(); ++gi) {
        plans.push_back(std::make_unique<SolvePlan>(
            specs[gi], margin, TimeGrid{s.horizon, sorted[gi]}));
    }

    const std::size_t n_paths = std::min<std::size_t>(s.n_paths, 64);
    const std::size_t n_grids = sorted.size();
    // errors vs the finest grid, coupled through composed noise
    std::vector<std::vector<double>> err(n_grids - 1, std::vector<double>(n_paths, 0.0));
    parallel_for(n_paths, threads, [&](std::size_t path_index) {
        TimeGrid fine_grid{s.horizon, finest};
        auto fine_noise =
            std::make_shared<DirectOuProvider>(s.seed, path_index, fine_grid, s.noise_dim);
        auto fine_sol =
            solve_scenario_path(specs.back(), margin, *fine_noise, fine_grid, *plans.back());
        for (std::size_t gi = 0; gi + 1 < n_grids; ++gi) {
            TimeGrid grid{s.horizon, sorted[gi]};
            ComposedOuProvider noise(fine_noise, grid);
            auto sol = solve_scenario_path(specs[gi], margin, noise, grid, *plans[gi]);
            const std::size_t r = finest / sorted[gi];
            double worst = 0.0;
            const std::size_t nodes =
                std::min(sol.states.size(), (fine_sol.states.size() - 1) / r + 1);
            for (std::size_t m = 0; m < nodes; ++m) {
                StateVector d = sol.states[m];
                d -= fine_sol.states[m * r];
                worst = std::max(worst, norm_alpha(specs[gi].op, 0.0, d));
            }
            err[gi][path_index] = worst;
        }
    });

    std::vector<ConvergenceRow> rows;
    double prev_rms = 0.0, prev_dt = 0.0;
    for (std::size_t gi = 0; gi + 1 < n_grids; ++gi) {
        KahanSum acc;
        for (double e : err[gi]) acc.add(e * e);
        const double rms = std::sqrt(acc.value() / static_cast<double>(n_paths));
        ConvergenceRow row;
        row.dt = s.horizon / static_cast<double>(sorted[gi]);
        row.mode_cutoff = specs[gi].op.mode_count();
        row.error = rms;
        if (gi > 0 && prev_rms > 0.0 && rms > 0.0) {
            row.rate = std::log(prev_rms / rms) / std::log(prev_dt / row.dt);
        }
        rows.push_back(row);
        prev_rms = rms;
        prev_dt = row.dt;
    }

    if (!out_dir.empty()) {
        const std::string dir = ensure_dir(out_dir, s.id);
        CsvFile csv(dir + "/convergence.csv");
        if (!csv.ok()) throw Error("cannot write convergence.csv");
        std::fprintf(csv.f, "dt,K,error,rate\n");
        for (const auto& r : rows) {
            std::fprintf(csv.f, "%.17g,%zu,%.17g,%.17g\n", r.dt, r.mode_cutoff, r.error,
                         r.rate);
        }
    }
    return rows;
}

std::vector<ConvergenceRow> convergence_study_modes(const Scenario& s,
                                                    std::span<const std::size_t> cutoffs,
                                                    int threads, const std::string& out_dir) {
    if (cutoffs.size() < 2) throw InvalidScenario("mode study needs at least 2 cutoffs");
    std::vector<std::size_t> sorted(cutoffs.begin(), cutoffs.end());
    std::sort(sorted.begin(), sorted.end());

    std::vector<Scenario> per_k;
    std::vector<ProblemSpec> specs;
    for (std::size_t K : sorted) {
        Scenario sk = s;
        sk.op.mode_cutoff = K;
        if (sk.op.basis == "abstract")
            throw InvalidScenario("mode-cutoff study needs a concrete basis");
        if (sk.b.form == "log_uniform_diag") sk.noise_dim = K;
        per_k.push_back(sk);
        specs.push_back(build_problem(per_k.back()));
    }
    const ContractionMargin margin = scenario_margin(s, specs.back(), threads);
    const TimeGrid grid{s.horizon, s.n_steps};
    std::vector<std::unique_ptr<SolvePlan>> plans;
    for (std::size_t ki = 0; ki < sorted.size(); ++ki) {
        plans.push_back(std::make_unique<SolvePlan>(specs[ki], margin, grid));
    }
    const std::size_t n_paths = std::min<std::size_t>(s.n_paths, 32);
    const std::size_t n_k = sorted.size();

    // reference on the largest cutoff; smaller solves embed by wavenumber
    const auto& ref_spec = specs.back();
    const TraceNormEvaluator ev(ref_spec.op, 1.0 - 1.0 / s.p, s.p);

    std::vector<std::vector<double>> err(n_k - 1, std::vector<double>(n_paths, 0.0));
    parallel_for(n_paths, threads, [&](std::size_t path_index) {
        DirectOuProvider noise(s.seed, path_index, grid, ref_spec.noise_dim);
        auto ref = solve_scenario_path(ref_spec, margin, noise, grid, *plans.back());
        for (std::size_t ki = 0; ki + 1 < n_k; ++ki) {
            DirectOuProvider sub_noise(s.seed, path_index, grid, specs[ki].noise_dim);
            auto sol = solve_scenario_path(specs[ki], margin, sub_noise, grid, *plans[ki]);
            // embed by wavenumber into the reference mode set
            double worst = 0.0;
            for (std::size_t m = 0; m < sol.states.size(); ++m) {
                StateVector d = ref.states[m];
                for (std::size_t k = 0; k < specs[ki].op.mode_count(); ++k) {
                    const long w = specs[ki].op.wavenumbers()[k];
                    for (std::size_t kk = 0; kk < ref_spec.op.mode_count(); ++kk) {
                        if (ref_spec.op.wavenumbers()[kk] == w) {
                            d[kk] -= sol.states[m][k];
                            break;
                        }
                    }
                }
                worst = std::max(worst, ev.norm(d));
            }
            err[ki][path_index] = worst;
        }
    });

    std::vector<ConvergenceRow> rows;
    double prev_rms = 0.0;
    double prev_k = 0.0;
    for (std::size_t ki = 0; ki + 1 < n_k; ++ki) {
        KahanSum acc;
        for (double e : err[ki]) acc.add(e * e);
        const double rms = std::sqrt(acc.value() / static_cast<double>(n_paths));
        ConvergenceRow row;
        row.dt = s.horizon / static_cast<double>(s.n_steps);
        row.mode_cutoff = sorted[ki];
        row.error = rms;
        if (ki > 0 && prev_rms > 0.0 && rms > 0.0) {
            row.rate = std::log(prev_rms / rms) /
                       std::log(static_cast<double>(sorted[ki]) / prev_k);
        }
        rows.push_back(row);
        prev_rms = rms;
        prev_k = static_cast<double>(sorted[ki]);
    }

    if (!out_dir.empty()) {
        const std::string dir = ensure_dir(out_dir, s.id);
        CsvFile csv(dir + "/convergence_modes.csv");
        if (!csv.ok()) throw Error("cannot write convergence_modes.csv");
        std::fprintf(csv.f, "dt,K,error,rate\n");
        for (const auto& r : rows) {
            std::fprintf(csv.f, "%.17g,%zu,%.17g,%.17g\n", r.dt, r.mode_cutoff, r.error,
                         r.rate);
        }
    }
    return rows;
}

int run_suite(const std::string& out_dir, int threads, bool quick) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    CsvFile summary(out_dir + "/suite_summary.csv");
    if (!summary.ok()) throw Error("cannot write suite_summary.csv");
    std::fprintf(summary.f, "scenario,hash,kind,value,stderr,notes\n");

    for (const Scenario& base : builtin_scenarios()) {
        Scenario s = base;
        if (quick) {
            s.n_paths = std::min<std::size_t>(s.n_paths, s.id == "hilbert_sharp" ? 500 : 8);
            if (s.id == "hilbert_sharp") s.n_steps = 512;
            if (s.id == "local_quadratic") {
                s.n_steps = 2000;
                s.n_max = 100;
            }
        }
        if (s.id == "hilbert_sharp") {
            auto rep = run_constants(s, out_dir, threads);
            std::fprintf(summary.f, "%s,%llu,kstar,%.17g,0,\n", s.id.c_str(),
                         static_cast<unsigned long long>(rep.hash), rep.kstar);
            std::fprintf(summary.f, "%s,%llu,kdiamond,%.17g,0,paths=%zu\n", s.id.c_str(),
                         static_cast<unsigned long long>(rep.hash), rep.kdiamond,
                         s.n_paths);
        } else {
            auto rep = run_scenario(s, out_dir, threads);
            std::fprintf(summary.f, "%s,%llu,lp_x1,%.17g,%.17g,\n", s.id.c_str(),
                         static_cast<unsigned long long>(rep.hash), rep.lp_x1.value,
                         rep.lp_x1.standard_error);
            std::fprintf(summary.f, "%s,%llu,trace_sup,%.17g,%.17g,stopped=%zu\n",
                         s.id.c_str(), static_cast<unsigned long long>(rep.hash),
                         rep.trace_sup.value, rep.trace_sup.standard_error,
                         rep.stopped_paths);
        }
        if (s.id == "heat_torus") {
            const std::size_t grids[] = {64, 128, 256};
            Scenario cs = s;
            cs.n_paths = quick ? 4 : 16;
            auto rows = convergence_study(cs, grids, threads, out_dir);
            for (const auto& r : rows) {
                std::fprintf(summary.f, "%s,%llu,convergence_error_dt=%.6g,%.17g,0,rate=%.4f\n",
                             s.id.c_str(),
                             static_cast<unsigned long long>(scenario_hash(cs)), r.dt,
                             r.error, r.rate);
            }
        }
    }
    return 0;
}

}  // namespace mrl
