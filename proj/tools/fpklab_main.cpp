#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fpklab/coeffs.hpp"
#include "fpklab/scenario.hpp"

namespace {

using fpklab::json;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::string format = "json";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
};

json load_config_json(const CommonOpts& opts) {
    std::ifstream in(opts.config_path);
    if (!in) throw fpklab::IoFailure("cannot open config " + opts.config_path);
    json j = json::parse(in, nullptr, true, true);
    if (opts.seed_set) j["ensemble"]["seed"] = opts.seed;
    if (opts.threads >= 0) j["ensemble"]["threads"] = opts.threads;
    return j;
}

int run_and_emit(const json& config_json, const CommonOpts& opts) {
    const fpklab::ScenarioConfig config = fpklab::parse_scenario(config_json);
    const fpklab::VerificationReport report = fpklab::run_scenario(config);
    fpklab::emit_report(report, opts.format, opts.out_dir);
    int failures = 0;
    for (const auto& c : report.checks) {
        std::printf("[%s] %-60s stat=%.6g bound=%.6g\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.statistic, c.bound_or_tol);
        if (!c.pass) ++failures;
    }
    if (!report.checks.empty())
        std::printf("%d/%zu checks passed\n", static_cast<int>(report.checks.size()) - failures,
                    report.checks.size());
    std::printf("report written to %s\n", opts.out_dir.c_str());
    return failures == 0 ? 0 : 2;
}

void add_common(CLI::App* cmd, CommonOpts* opts, bool needs_config = true) {
    auto* c = cmd->add_option("--config", opts->config_path, "scenario config (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--out", opts->out_dir, "output directory");
    cmd->add_option("--format", opts->format, "json|csv|plot")
        ->check(CLI::IsMember({"json", "csv", "plot"}));
    cmd->add_option("--seed", opts->seed, "override ensemble seed")
        ->each([opts](const std::string&) { opts->seed_set = true; });
    cmd->add_option("--threads", opts->threads, "worker threads (0 = auto)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical lab for Fokker-Planck-Kolmogorov probability solutions and their "
                 "path-space representations"};
    app.require_subcommand(1);

    CommonOpts opts;

    auto* cmd_verify = app.add_subcommand("verify", "solve, simulate and run all checks");
    add_common(cmd_verify, &opts);

    auto* cmd_solve = app.add_subcommand("solve-fpk", "solve the Cauchy problem and export the flow");
    add_common(cmd_solve, &opts);

    auto* cmd_sim = app.add_subcommand("simulate", "sample the path ensemble and export it");
    add_common(cmd_sim, &opts);

    auto* cmd_moll = app.add_subcommand("mollify", "run the smoothing study");
    add_common(cmd_moll, &opts);

    auto* cmd_cond = app.add_subcommand("condition", "integrability condition report");
    add_common(cmd_cond, &opts);

    auto* cmd_lyap = app.add_subcommand("lyapunov-report", "a-priori bound certificates");
    add_common(cmd_lyap, &opts);

    auto* cmd_ex32 = app.add_subcommand("example32", "polar-vortex integrability study");
    add_common(cmd_ex32, &opts, false);
    int ex32_nmax = 12;
    double ex32_step = 1e-3;
    cmd_ex32->add_option("--n-max", ex32_nmax, "number of annular bands");
    cmd_ex32->add_option("--quad-step", ex32_step, "radial quadrature step");

    auto* cmd_list = app.add_subcommand("list-builtins", "list registries");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_list->parsed()) {
            std::cout << fpklab::list_builtins().dump(2) << "\n";
            return 0;
        }
        if (cmd_ex32->parsed()) {
            const fpklab::PolarVortexIntegrals out =
                fpklab::polar_vortex_integrals(ex32_nmax, fpklab::BumpProfile{}, ex32_step);
            std::filesystem::create_directories(opts.out_dir);
            std::ofstream csv(std::filesystem::path(opts.out_dir) / "example32_partials.csv");
            csv << "k,angular_partial,lower_bound,ratio_to_previous\n";
            for (std::size_t k = 0; k < out.angular_partials.size(); ++k) {
                const double ratio =
                    k > 0 ? out.angular_partials[k] / out.angular_partials[k - 1] : 0.0;
                char line[160];
                std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g\n", k + 1,
                              out.angular_partials[k], out.lower_bounds[k], ratio);
                csv << line;
            }
            json j;
            j["c_psi"] = out.c_psi;
            j["radial_integral"] = out.radial_integral;
            j["angular_partials"] = out.angular_partials;
            j["lower_bounds"] = out.lower_bounds;
            std::ofstream js(std::filesystem::path(opts.out_dir) / "example32.json");
            js << j.dump(2) << "\n";
            std::printf("radial integral %.6g, largest angular partial %.6g\n",
                        out.radial_integral, out.angular_partials.back());
            return 0;
        }

        json config = load_config_json(opts);
        if (cmd_solve->parsed()) {
            config.erase("ensemble");
            config.erase("checks");
            config.erase("mollify");
            const auto scenario = fpklab::parse_scenario(config);
            const auto report = fpklab::run_scenario(scenario);
            fpklab::emit_report(report, opts.format, opts.out_dir);
            const fpklab::MarginalFlow flow = fpklab::scenario_solve(scenario);
            fpklab::save_flow(flow, (std::filesystem::path(opts.out_dir) / "flow").string());
            std::printf("weak residual max %.3g; flow written to %s/flow\n",
                        report.weak_residual_max, opts.out_dir.c_str());
            return 0;
        }
        if (cmd_sim->parsed()) {
            config.erase("checks");
            config.erase("mollify");
            config.erase("condition");
            config.erase("grid");
            const auto scenario = fpklab::parse_scenario(config);
            const fpklab::PathEnsemble ens = fpklab::scenario_simulate(scenario);
            std::filesystem::create_directories(opts.out_dir);
            const std::string path =
                (std::filesystem::path(opts.out_dir) / "ensemble.bin").string();
            fpklab::save_ensemble(ens, path);
            const auto law = fpklab::scenario_initial_law(scenario);
            const auto check = fpklab::initial_law_check(ens, law);
            std::printf("[%s] %s stat=%.6g bound=%.6g\n", check.pass ? "PASS" : "FAIL",
                        check.name.c_str(), check.statistic, check.bound_or_tol);
            std::printf("ensemble (%d paths, %zu nodes) written to %s\n", ens.n_paths,
                        ens.n_nodes(), path.c_str());
            return check.pass ? 0 : 2;
        }
        if (cmd_moll->parsed()) {
            config.erase("checks");
            config.erase("ensemble");
            return run_and_emit(config, opts);
        }
        if (cmd_cond->parsed()) {
            config.erase("checks");
            config.erase("ensemble");
            config.erase("mollify");
            return run_and_emit(config, opts);
        }
        if (cmd_lyap->parsed()) {
            config.erase("checks");
            config.erase("ensemble");
            config.erase("mollify");
            config.erase("condition");
            return run_and_emit(config, opts);
        }
        return run_and_emit(config, opts);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
