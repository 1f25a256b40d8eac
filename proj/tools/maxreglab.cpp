// Command-line front end: scenario runs, constants estimation, regularity
// reports, convergence studies, and the built-in suite.
//
// Exit codes: 0 ok, 2 smallness condition violated, 3 fixed point did not
// converge, 4 invalid scenario or unknown form.

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maxreglab/errors.hpp"
#include "maxreglab/regularity.hpp"
#include "maxreglab/scenario.hpp"

namespace {

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const mrl::SmallnessViolated& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mrl::NoConvergence& e) {
        std::fprintf(stderr, "error: %s (last ratio %.4f, piece %d)\n", e.what(),
                     e.last_ratio, e.subinterval);
        return 3;
    } catch (const mrl::InvalidScenario& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const mrl::UnknownForm& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const mrl::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

mrl::Scenario load(const std::string& path, std::size_t paths_override,
                   std::uint64_t seed_override) {
    mrl::Scenario s = mrl::load_scenario(path);
    if (paths_override > 0) s.n_paths = paths_override;
    if (seed_override > 0) s.seed = seed_override;
    return s;
}

std::vector<std::size_t> parse_grids(const std::string& csv) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t next = csv.find(',', pos);
        if (next == std::string::npos) next = csv.size();
        out.push_back(static_cast<std::size_t>(std::stoull(csv.substr(pos, next - pos))));
        pos = next + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"maxreglab: maximal-regularity laboratory for parabolic"
                 " stochastic evolution equations"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir = "out", grids_csv, modes_csv;
    std::size_t paths_override = 0;
    std::uint64_t seed_override = 0;
    int threads = 1;
    bool quick = false;

    auto add_common = [&](CLI::App* cmd, bool needs_scenario) {
        if (needs_scenario)
            cmd->add_option("scenario", scenario_path, "scenario JSON file")->required();
        cmd->add_option("--paths", paths_override, "override the ensemble size");
        cmd->add_option("--seed", seed_override, "override the seed");
        cmd->add_option("--threads", threads, "worker threads (numerics unaffected)");
        cmd->add_option("--out", out_dir, "output directory");
    };

    auto* constants = app.add_subcommand("constants", "estimate K*_p and K<>_p");
    add_common(constants, true);

    auto* solve = app.add_subcommand("solve", "solve the scenario ensemble");
    add_common(solve, true);

    auto* regularity = app.add_subcommand("regularity", "pathwise regularity report");
    add_common(regularity, true);

    auto* converge = app.add_subcommand("converge", "coupled convergence study");
    add_common(converge, true);
    converge->add_option("--grids", grids_csv, "comma-separated step counts");
    converge->add_option("--modes", modes_csv, "comma-separated mode cutoffs");

    auto* suite = app.add_subcommand("suite", "run the built-in scenario battery");
    add_common(suite, false);
    suite->add_flag("--quick", quick, "reduced path counts");

    CLI11_PARSE(app, argc, argv);

    if (constants->parsed()) {
        return guarded([&] {
            auto s = load(scenario_path, paths_override, seed_override);
            auto rep = mrl::run_constants(s, out_dir, threads);
            std::printf("K*_%g = %.6f   K<>_%g = %.6f   (%.2f s)\n", s.p, rep.kstar, s.p,
                        rep.kdiamond, rep.wall_seconds);
            return 0;
        });
    }
    if (solve->parsed()) {
        return guarded([&] {
            auto s = load(scenario_path, paths_override, seed_override);
            auto rep = mrl::run_scenario(s, out_dir, threads);
            std::printf("%s: ||U||_{Lp(X1)} = %.6g +- %.2g, sup trace = %.6g +- %.2g, "
                        "stopped %zu/%zu, %.2f s\n",
                        s.id.c_str(), rep.lp_x1.value, rep.lp_x1.standard_error,
                        rep.trace_sup.value, rep.trace_sup.standard_error,
                        rep.stopped_paths, rep.n_paths, rep.wall_seconds);
            return 0;
        });
    }
    if (regularity->parsed()) {
        return guarded([&] {
            auto s = load(scenario_path, paths_override, seed_override);
            auto rep = mrl::run_scenario(s, out_dir, threads);
            std::printf("%s: median Holder exponent in X0 = %.4f, trace_sup = %.6g "
                        "(per-path norms in norms.csv)\n",
                        s.id.c_str(), rep.median_holder_x0, rep.trace_sup.value);
            return 0;
        });
    }
    if (converge->parsed()) {
        return guarded([&] {
            auto s = load(scenario_path, paths_override, seed_override);
            if (!grids_csv.empty()) {
                auto grids = parse_grids(grids_csv);
                auto rows = mrl::convergence_study(s, grids, threads, out_dir);
                for (const auto& r : rows)
                    std::printf("dt=%.6g K=%zu error=%.6g rate=%.4f\n", r.dt, r.mode_cutoff,
                                r.error, r.rate);
            }
            if (!modes_csv.empty()) {
                auto modes = parse_grids(modes_csv);
                auto rows = mrl::convergence_study_modes(s, modes, threads, out_dir);
                for (const auto& r : rows)
                    std::printf("K=%zu error=%.6g rate=%.4f\n", r.mode_cutoff, r.error,
                                r.rate);
            }
            if (grids_csv.empty() && modes_csv.empty()) {
                throw mrl::InvalidScenario("converge needs --grids or --modes");
            }
            return 0;
        });
    }
    if (suite->parsed()) {
        return guarded([&] { return mrl::run_suite(out_dir, threads, quick); });
    }
    return 0;
}
