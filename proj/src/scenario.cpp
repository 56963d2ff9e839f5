#include "fpklab/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fpklab {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

Vec to_vec(const std::vector<double>& v) {
    Vec out(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<int>(i)) = v[i];
    return out;
}

}  // namespace

std::string library_version() { return "fpklab 0.1.0"; }

ScenarioConfig parse_scenario(const json& j) {
    if (!j.is_object()) throw ConfigInvalidError("scenario must be a JSON object");
    if (j.value("schema_version", 0) != 1)
        throw ConfigInvalidError("unsupported schema_version");
    ScenarioConfig c;
    c.raw = j;
    c.name = j.value("name", std::string("scenario"));

    const auto& field = j.at("field");
    c.field_name = field.at("name").get<std::string>();
    if (field.contains("params"))
        for (const auto& [key, value] : field.at("params").items())
            c.field_params[key] = value.get<double>();
    // validate eagerly so bad names fail at parse time
    (void)builtin_field(c.field_name, c.field_params);

    if (j.contains("initial")) {
        const auto& init = j.at("initial");
        c.initial_kind = init.value("kind", std::string("gaussian"));
        if (c.initial_kind == "gaussian") {
            c.initial_mean = init.value("mean", std::vector<double>{0.0});
            c.initial_variance = init.value("variance", 1.0);
            if (c.initial_variance <= 0.0) throw ConfigInvalidError("initial variance <= 0");
        } else if (c.initial_kind == "delta") {
            c.initial_point = init.at("point").get<std::vector<double>>();
        } else if (c.initial_kind == "grid-file") {
            c.initial_grid_file = init.at("path").get<std::string>();
        } else if (c.initial_kind == "builtin-stationary") {
            // stationary density of the builtin itself (oscillatory-1d)
        } else {
            throw ConfigInvalidError("unknown initial kind " + c.initial_kind);
        }
    }

    if (j.contains("grid")) {
        Grid g;
        const auto& jg = j.at("grid");
        g.dim = builtin_field(c.field_name, c.field_params).dim;
        g.r_dom = jg.at("r_dom").get<double>();
        g.n_cells = jg.at("n_cells").get<int>();
        g.boundary = boundary_from_string(jg.value("boundary", std::string("reflecting")));
        g.validate();
        c.grid = g;
    }

    c.horizon = j.value("horizon", 1.0);
    if (c.horizon <= 0.0) throw ConfigInvalidError("horizon must be positive");
    if (j.contains("solver")) {
        c.cfl_safety = j.at("solver").value("cfl_safety", 0.9);
        c.output_nodes = j.at("solver").value("output_nodes", 81);
        if (c.cfl_safety <= 0.0 || c.cfl_safety > 1.0)
            throw ConfigInvalidError("cfl_safety out of (0, 1]");
        if (c.output_nodes < 2) throw ConfigInvalidError("need at least 2 output nodes");
    }

    if (j.contains("ensemble")) {
        c.has_ensemble = true;
        const auto& e = j.at("ensemble");
        c.n_paths = e.at("n_paths").get<int>();
        c.ensemble_dt = e.at("dt").get<double>();
        c.seed = e.value("seed", 1ull);
        c.record_stride = e.value("record_stride", 1);
        c.threads = e.value("threads", 0);
        if (c.ensemble_dt > c.horizon) throw ConfigInvalidError("ensemble dt exceeds horizon");
    }

    if (j.contains("checks")) {
        for (const auto& jc : j.at("checks")) {
            ScenarioConfig::CheckSpec spec;
            spec.type = jc.at("type").get<std::string>();
            spec.times = jc.value("times", std::vector<double>{});
            spec.q_values = jc.value("q", std::vector<double>{});
            spec.tolerance = jc.value("tolerance", 0.0);
            spec.negative_control_shift = jc.value("negative_control_shift", 0.0);
            if (jc.contains("windows"))
                spec.windows = jc.at("windows").get<std::vector<std::vector<double>>>();
            if (spec.tolerance < 0.0) throw ConfigInvalidError("check tolerance < 0");
            c.checks.push_back(std::move(spec));
        }
    }

    if (j.contains("mollify")) {
        c.has_mollify = true;
        c.mollify_epsilons = j.at("mollify").at("epsilons").get<std::vector<double>>();
        c.mollify_delta = j.at("mollify").at("delta").get<double>();
        if (c.mollify_epsilons.empty()) throw ConfigInvalidError("mollify needs epsilons");
        for (double e : c.mollify_epsilons)
            if (e >= c.mollify_delta / 4.0)
                throw ConfigInvalidError("mollify needs eps < delta/4");
    }

    if (j.contains("lyapunov")) {
        c.lyapunov_family = j.at("lyapunov").value("family", std::string("log"));
        c.growth_c_override = j.at("lyapunov").value("growth_c", 0.0);
    }

    if (j.contains("condition")) {
        c.condition_variants =
            j.at("condition").value("variants", std::vector<std::string>{"trevisan", "new"});
        c.condition_cutoffs = j.at("condition").value("cutoffs", std::vector<double>{});
        c.condition_quad_step = j.at("condition").value("quad_step", 2e-4);
        for (const std::string& v : c.condition_variants) (void)condition_variant_from_string(v);
    }
    return c;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open scenario " + path);
    json j = json::parse(in, nullptr, true, true);
    return parse_scenario(j);
}

namespace {

InitialLaw build_initial_law(const ScenarioConfig& c, const CoefficientField& field,
                             const std::optional<Grid>& grid) {
    if (c.initial_kind == "gaussian") {
        Vec mean = to_vec(c.initial_mean);
        if (mean.size() != field.dim)
            throw ConfigInvalidError("initial mean dimension mismatch");
        return gaussian_law(mean, c.initial_variance);
    }
    if (c.initial_kind == "delta") return delta_law(to_vec(c.initial_point));
    if (c.initial_kind == "grid-file") {
        MarginalFlow f = load_flow(c.initial_grid_file);
        return grid_law(f.grid, f.densities.at(0));
    }
    if (c.initial_kind == "builtin-stationary") {
        if (!grid) throw ConfigInvalidError("builtin-stationary initial needs a grid");
        if (field.label == "oscillatory-1d") {
            std::vector<double> density(static_cast<std::size_t>(grid->total_cells()));
            for (int i = 0; i < grid->total_cells(); ++i)
                density[static_cast<std::size_t>(i)] =
                    oscillatory_density(grid->cell_center(i)(0));
            const double mass = grid_mass(*grid, density);
            for (double& v : density) v /= mass;
            return grid_law(*grid, std::move(density));
        }
        if (field.label == "ou" || field.label == "gaussian-rotation-2d" ||
            field.label == "gradient-drift")
            return gaussian_law(Vec::Zero(field.dim), 1.0);
        throw ConfigInvalidError("no builtin stationary law for " + field.label);
    }
    throw ConfigInvalidError("bad initial kind");
}

std::vector<double> initial_density_on(const Grid& grid, const InitialLaw& nu) {
    switch (nu.kind) {
        case InitialLaw::Kind::kGaussian:
            return gaussian_density_on_grid(grid, nu.mean, nu.var);
        case InitialLaw::Kind::kDelta:
            return delta_density_on_grid(grid, nu.point);
        case InitialLaw::Kind::kGridDensity: {
            if (nu.grid.dim != grid.dim || nu.grid.n_cells != grid.n_cells ||
                nu.grid.r_dom != grid.r_dom)
                throw ConfigInvalidError("grid initial law does not match scenario grid");
            return nu.density;
        }
    }
    throw ConfigInvalidError("bad initial law");
}

}  // namespace

CoefficientField scenario_field(const ScenarioConfig& config) {
    return builtin_field(config.field_name, config.field_params);
}

InitialLaw scenario_initial_law(const ScenarioConfig& config) {
    const CoefficientField field = scenario_field(config);
    return build_initial_law(config, field, config.grid);
}

MarginalFlow scenario_solve(const ScenarioConfig& config) {
    if (!config.grid) throw ConfigInvalidError("scenario has no grid");
    const CoefficientField field = scenario_field(config);
    const InitialLaw nu = scenario_initial_law(config);
    const double flow_horizon =
        config.horizon + (config.has_mollify ? 2.0 * config.mollify_delta : 0.0);
    int nodes = config.output_nodes;
    if (config.has_mollify) {
        // the kernel time-convolution needs dense nodes on the eps scale
        double eps_min = config.mollify_epsilons.front();
        for (double e : config.mollify_epsilons) eps_min = std::min(eps_min, e);
        const int dense = static_cast<int>(std::ceil(flow_horizon / (eps_min / 8.0))) + 1;
        nodes = std::max(nodes, dense);
    }
    SolveOptions opts;
    opts.cfl_safety = config.cfl_safety;
    const std::vector<double> init = initial_density_on(*config.grid, nu);
    return solve_cauchy(field, init, *config.grid, linspace(0.0, flow_horizon, nodes), opts);
}

PathEnsemble scenario_simulate(const ScenarioConfig& config) {
    if (!config.has_ensemble) throw ConfigInvalidError("scenario has no ensemble");
    const CoefficientField field = scenario_field(config);
    const InitialLaw nu = scenario_initial_law(config);
    SimulateOptions opts;
    opts.record_stride = config.record_stride;
    opts.n_threads = config.threads;
    return simulate(field, nu, config.n_paths, config.ensemble_dt, config.horizon, config.seed,
                    opts);
}

VerificationReport run_scenario(const ScenarioConfig& config) {
    VerificationReport report;
    report.scenario = config.raw;
    report.seed = config.seed;
    report.version = library_version();

    const CoefficientField field = builtin_field(config.field_name, config.field_params);
    const InitialLaw nu = build_initial_law(config, field, config.grid);
    const LyapunovSpec lyap = lyapunov_family(config.lyapunov_family, field.dim);

    // --- solve the Cauchy problem ------------------------------------------
    std::optional<MarginalFlow> flow;
    double t0 = now_seconds();
    if (config.grid) {
        flow = scenario_solve(config);
        report.runtimes["solve"] = now_seconds() - t0;

        t0 = now_seconds();
        const WeakResidualReport wr = weak_residual(*flow, field, bump_registry(field.dim));
        report.weak_residual_max = wr.max_abs;
        report.runtimes["weak_residual"] = now_seconds() - t0;
    }

    // --- simulate the ensemble ---------------------------------------------
    std::optional<PathEnsemble> ensemble;
    if (config.has_ensemble) {
        t0 = now_seconds();
        ensemble = scenario_simulate(config);
        report.runtimes["simulate"] = now_seconds() - t0;
    }

    // --- checks --------------------------------------------------------------
    t0 = now_seconds();
    for (const auto& spec : config.checks) {
        if (spec.type == "initial-law") {
            if (!ensemble) throw ConfigInvalidError("initial-law check needs an ensemble");
            report.checks.push_back(initial_law_check(*ensemble, nu));
            if (spec.negative_control_shift != 0.0) {
                // draw a shifted sample and require the test to reject it
                InitialLaw shifted = nu;
                if (shifted.kind == InitialLaw::Kind::kGaussian)
                    shifted.mean.array() += spec.negative_control_shift;
                else
                    throw ConfigInvalidError("negative control needs a gaussian initial law");
                PathEnsemble control;
                control.n_paths = ensemble->n_paths;
                control.dim = field.dim;
                control.dt = config.ensemble_dt;
                control.record_stride = 1;
                control.seed = config.seed + 1;
                control.times = {0.0};
                control.states.resize(static_cast<std::size_t>(control.n_paths) * field.dim);
                for (int p = 0; p < control.n_paths; ++p) {
                    PhiloxStream stream(control.seed, static_cast<std::uint64_t>(p), -1);
                    const Vec x = shifted.sample(stream);
                    for (int i = 0; i < field.dim; ++i)
                        control.states[static_cast<std::size_t>(p) * field.dim + i] = x(i);
                }
                CheckReport rejected = initial_law_check(control, nu);
                CheckReport out;
                out.name = "initial-law-negative-control";
                out.statistic = rejected.statistic;
                out.bound_or_tol = rejected.bound_or_tol;
                out.stderr_est = rejected.stderr_est;
                out.n_effective = rejected.n_effective;
                out.sided = "ge";  // the shifted sample must be rejected
                out.pass = rejected.statistic > rejected.bound_or_tol;
                report.checks.push_back(std::move(out));
            }
        } else if (spec.type == "marginal") {
            if (!ensemble || !flow)
                throw ConfigInvalidError("marginal check needs ensemble and grid");
            std::vector<double> w1_times, w1_values;
            for (double t : spec.times) {
                CheckReport r = marginal_check(*ensemble, *flow, t, spec.tolerance);
                w1_times.push_back(t);
                w1_values.push_back(r.statistic);
                report.checks.push_back(std::move(r));
            }
            report.w1_series["times"] = w1_times;
            report.w1_series["values"] = w1_values;
        } else if (spec.type == "martingale") {
            if (!ensemble) throw ConfigInvalidError("martingale check needs an ensemble");
            std::vector<MartingaleWindow> windows;
            for (const auto& w : spec.windows) {
                if (w.size() != 2) throw ConfigInvalidError("martingale window needs [s, t]");
                windows.push_back({w[0], w[1]});
            }
            const auto reports = martingale_suite(*ensemble, field, bump_registry(field.dim),
                                                  g_registry(field.dim), windows, config.threads);
            report.checks.insert(report.checks.end(), reports.begin(), reports.end());
        } else if (spec.type == "doob") {
            if (!ensemble || !flow) throw ConfigInvalidError("doob check needs ensemble and grid");
            double nu_int = 0.0;
            const std::vector<double>& mu0 = flow->densities.front();
            for (int c = 0; c < flow->grid.total_cells(); ++c)
                nu_int += lyap.value(flow->grid.cell_center(c)) * mu0[static_cast<std::size_t>(c)];
            nu_int *= flow->grid.cell_volume();
            const double dirichlet = flow_integral(*flow, [&](double t, const Vec& x) {
                return carre_du_champ(field, lyap, t, x) + std::abs(apply_L(field, lyap, t, x));
            });
            for (double q : spec.q_values)
                report.checks.push_back(
                    doob_empirical(*ensemble, lyap, q, doob_bound(nu_int, dirichlet, q)));
        } else if (spec.type == "ek1") {
            if (!ensemble || !flow) throw ConfigInvalidError("ek1 check needs ensemble and grid");
            const auto bumps = bump_registry(field.dim);
            const auto gs = g_registry(field.dim);
            for (double t : spec.times)
                report.checks.push_back(
                    lemma_ek1_check(*ensemble, *flow, bumps.front(), gs.front(), t));
        } else {
            throw ConfigInvalidError("unknown check type " + spec.type);
        }
    }
    report.runtimes["checks"] = now_seconds() - t0;

    // --- Lyapunov certificate -------------------------------------------------
    if (flow) {
        t0 = now_seconds();
        double c1 = config.growth_c_override;
        if (c1 <= 0.0)
            c1 = fit_log_domination(field, {0.5, 1.0, 2.0, 4.0, flow->grid.r_dom * 0.9}, {0.0},
                                    16);
        if (c1 > 0.0) {
            double nu_int = 0.0;
            const std::vector<double>& mu0 = flow->densities.front();
            for (int c = 0; c < flow->grid.total_cells(); ++c) {
                const LyapunovSpec logv = lyapunov_family("log", field.dim);
                nu_int += logv.value(flow->grid.cell_center(c)) * mu0[static_cast<std::size_t>(c)];
            }
            nu_int *= flow->grid.cell_volume();
            // W == C1 constant dominator from the dyadic fit
            const double w_int =
                c1 * flow_integral(*flow, [](double, const Vec&) { return 1.0; });
            report.certificate = build_certificate(nu_int, w_int, c1, flow->horizon());

            const LyapunovSpec logv = lyapunov_family("log", field.dim);
            double min_slack = 1.0;
            for (std::size_t k = 0; k < flow->times.size(); ++k) {
                double vint = 0.0;
                for (int c = 0; c < flow->grid.total_cells(); ++c)
                    vint += logv.value(flow->grid.cell_center(c)) *
                            flow->densities[k][static_cast<std::size_t>(c)];
                vint *= flow->grid.cell_volume();
                const double bound =
                    gronwall_bound(nu_int, w_int, c1, flow->times[k]);
                min_slack = std::min(min_slack, 1.0 - vint / bound);
            }
            report.gronwall_min_slack = min_slack;
            report.lv_integral = flow_integral(*flow, [&](double t, const Vec& x) {
                return std::abs(apply_L(field, logv, t, x));
            });
            report.lv_bound_slack = 1.0 - report.lv_integral / report.certificate->lv_bound;
        }
        report.runtimes["certificate"] = now_seconds() - t0;
    }

    // --- condition integrals ---------------------------------------------------
    if (!config.condition_variants.empty() && flow) {
        t0 = now_seconds();
        for (const std::string& name : config.condition_variants) {
            const ConditionVariant variant = condition_variant_from_string(name);
            const SmoothFn* profile = variant == ConditionVariant::kGeneralized
                                          ? &lyap.profile
                                          : nullptr;
            report.condition_integrals[name] =
                condition_integral(field, *flow, variant, profile);
        }
        if (!config.condition_cutoffs.empty()) {
            if (field.label != "oscillatory-1d")
                throw ConfigInvalidError("condition cutoffs need the oscillatory-1d field");
            report.condition_cutoffs = config.condition_cutoffs;
            report.condition_truncations["trevisan"] = condition_profile_1d(
                field, oscillatory_density, config.horizon, config.condition_cutoffs,
                ConditionVariant::kTrevisan, config.condition_quad_step);
            report.condition_truncations["new"] = condition_profile_1d(
                field, oscillatory_density, config.horizon, config.condition_cutoffs,
                ConditionVariant::kNew, config.condition_quad_step);
        }
        report.runtimes["condition"] = now_seconds() - t0;
    }

    // --- mollification study -----------------------------------------------------
    if (config.has_mollify && flow) {
        t0 = now_seconds();
        const auto bumps = bump_registry(field.dim);
        const std::vector<double> check_times = {0.0, 0.5 * config.horizon, config.horizon};
        for (double eps : config.mollify_epsilons) {
            MollifyEpsilonReport mr;
            mr.epsilon = eps;
            mr.check_times = check_times;
            const MollifierKernel kernel = make_kernel(eps, field.dim);
            const MollifiedSystem system =
                mollified_coeffs(field, *flow, config.mollify_delta, kernel);
            const MollifyResidualReport rr =
                verify_mollified(system, flow->grid, bumps, check_times, eps / 6.0);
            mr.max_residual = rr.max_abs;

            // weak distance to the shifted marginals, and floor/PSD audits
            const Grid& grid = flow->grid;
            const double vol = grid.cell_volume();
            double floor_ratio = 1e300;
            bool psd_ok = true;
            for (double t : check_times) {
                const std::vector<double> mu_delta =
                    flow->density_at(t + config.mollify_delta);
                double worst = 0.0;
                for (const TestFunction& f : bumps) {
                    double moll = 0.0, ref = 0.0;
                    for (int c = 0; c < grid.total_cells(); ++c) {
                        const Vec x = grid.cell_center(c);
                        const double fv = f.value(x);
                        if (fv == 0.0) continue;
                        moll += fv * system.eval(t, x).sigma;
                        ref += fv * mu_delta[static_cast<std::size_t>(c)];
                    }
                    worst = std::max(worst, std::abs(moll - ref) * vol);
                }
                mr.weak_distances.push_back(worst);
                // sampled floor and PSD audits
                for (int c = 0; c < grid.total_cells(); c += std::max(1, grid.total_cells() / 64)) {
                    const Vec x = grid.cell_center(c);
                    const MollifiedPoint p = system.eval(t, x);
                    const double gamma_floor = eps * gaussian_density(x);
                    if (gamma_floor > 0.0)
                        floor_ratio = std::min(floor_ratio, p.sigma / gamma_floor);
                    try {
                        (void)system.effective_diffusion(t, x);
                    } catch (const NotPsdError&) {
                        psd_ok = false;
                    }
                }
            }
            mr.min_sigma_floor_ratio = floor_ratio;
            mr.psd_ok = psd_ok;
            report.mollify.push_back(std::move(mr));
        }
        report.runtimes["mollify"] = now_seconds() - t0;
    }

    return report;
}

// ---------------------------------------------------------------------------
// report emission

namespace {

json check_to_json(const CheckReport& c) {
    return json{{"name", c.name},         {"statistic", c.statistic},
                {"stderr", c.stderr_est}, {"bound_or_tol", c.bound_or_tol},
                {"pass", c.pass},         {"n_effective", c.n_effective},
                {"sided", c.sided}};
}

}  // namespace

json VerificationReport::to_json(bool include_volatile) const {
    json j;
    j["schema_version"] = 1;
    j["scenario"] = scenario;
    j["seed"] = seed;
    j["version"] = version;
    j["checks"] = json::array();
    for (const CheckReport& c : checks) j["checks"].push_back(check_to_json(c));
    if (!condition_integrals.empty()) j["condition_integrals"] = condition_integrals;
    if (!condition_truncations.empty()) {
        j["condition_truncations"] = condition_truncations;
        j["condition_cutoffs"] = condition_cutoffs;
    }
    if (certificate) {
        j["certificate"] = {{"nu_integral", certificate->nu_integral},
                            {"w_integral", certificate->w_integral},
                            {"growth_c", certificate->growth_c},
                            {"horizon_tau", certificate->horizon_tau},
                            {"sup_bound", certificate->sup_bound},
                            {"lv_bound", certificate->lv_bound}};
        j["gronwall_min_slack"] = gronwall_min_slack;
        j["lv_integral"] = lv_integral;
        j["lv_bound_slack"] = lv_bound_slack;
    }
    j["weak_residual_max"] = weak_residual_max;
    if (!mollify.empty()) {
        j["mollify"] = json::array();
        for (const MollifyEpsilonReport& m : mollify)
            j["mollify"].push_back({{"epsilon", m.epsilon},
                                    {"max_residual", m.max_residual},
                                    {"check_times", m.check_times},
                                    {"weak_distances", m.weak_distances},
                                    {"min_sigma_floor_ratio", m.min_sigma_floor_ratio},
                                    {"psd_ok", m.psd_ok}});
    }
    if (!w1_series.empty()) j["w1_series"] = w1_series;
    if (include_volatile) j["volatile"] = {{"runtimes", runtimes}};
    return j;
}

bool VerificationReport::all_checks_pass() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const CheckReport& c) { return c.pass; });
}

void emit_report(const VerificationReport& report, const std::string& format,
                 const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoFailure("emit_report: cannot create " + out_dir);

    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream out(fs::path(out_dir) / name);
        if (!out) throw IoFailure("emit_report: " + name);
        out << text;
        if (!out.good()) throw IoFailure("emit_report: short write " + name);
    };

    if (format == "json") {
        write("report.json", report.canonical_string() + "\n");
        write("report.meta.json", report.to_json(true)["volatile"].dump(2) + "\n");
        return;
    }
    if (format == "csv") {
        std::string checks = "name,statistic,stderr,bound_or_tol,sided,pass,n_effective\n";
        for (const CheckReport& c : report.checks) {
            char line[512];
            std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%s,%d,%ld\n", c.name.c_str(),
                          c.statistic, c.stderr_est, c.bound_or_tol, c.sided.c_str(),
                          c.pass ? 1 : 0, c.n_effective);
            checks += line;
        }
        write("checks.csv", checks);
        std::string cond = "variant,value\n";
        for (const auto& [k, v] : report.condition_integrals) {
            char line[128];
            std::snprintf(line, sizeof(line), "%s,%.17g\n", k.c_str(), v);
            cond += line;
        }
        write("condition.csv", cond);
        return;
    }
    if (format == "plot") {
        if (!report.w1_series.empty()) {
            std::string s = "t,w1\n";
            const auto& ts = report.w1_series.at("times");
            const auto& vs = report.w1_series.at("values");
            for (std::size_t i = 0; i < ts.size(); ++i) {
                char line[96];
                std::snprintf(line, sizeof(line), "%.17g,%.17g\n", ts[i], vs[i]);
                s += line;
            }
            write("w1_series.csv", s);
        }
        if (!report.mollify.empty()) {
            std::string s = "epsilon,max_weak_distance,max_residual\n";
            for (const auto& m : report.mollify) {
                double wd = 0.0;
                for (double v : m.weak_distances) wd = std::max(wd, v);
                char line[128];
                std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g\n", m.epsilon, wd,
                              m.max_residual);
                s += line;
            }
            write("mollify_distance.csv", s);
        }
        if (!report.condition_truncations.empty()) {
            std::string s = "cutoff,trevisan,new\n";
            const auto& tr = report.condition_truncations.at("trevisan");
            const auto& nw = report.condition_truncations.at("new");
            for (std::size_t i = 0; i < report.condition_cutoffs.size(); ++i) {
                char line[160];
                std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g\n",
                              report.condition_cutoffs[i], tr[i], nw[i]);
                s += line;
            }
            write("condition_truncations.csv", s);
        }
        return;
    }
    throw ConfigInvalidError("emit_report: unknown format " + format);
}

json list_builtins() {
    json j;
    j["fields"] = builtin_field_names();  // already lexicographic
    j["lyapunov_families"] = {"custom", "log", "loglog"};
    std::vector<std::string> bumps;
    for (const TestFunction& f : bump_registry(1)) bumps.push_back(f.name);
    std::sort(bumps.begin(), bumps.end());
    j["test_functions"] = bumps;
    std::vector<std::string> gs;
    for (const GFunctional& g : g_registry(1)) gs.push_back(g.name);
    std::sort(gs.begin(), gs.end());
    j["g_functionals"] = gs;
    return j;
}

}  // namespace fpklab
