#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpklab/coeffs.hpp"
#include "fpklab/common.hpp"
#include "fpklab/fpk.hpp"
#include "fpklab/lyapunov.hpp"
#include "fpklab/mollify.hpp"
#include "fpklab/paths.hpp"

namespace fpklab {

using json = nlohmann::json;

/// Parsed scenario. The raw JSON is kept for the report echo.
struct ScenarioConfig {
    json raw;
    std::string name = "scenario";

    std::string field_name;
    std::map<std::string, double> field_params;

    // initial law
    std::string initial_kind = "gaussian";  // gaussian | delta | grid-file
    std::vector<double> initial_mean;
    double initial_variance = 1.0;
    std::vector<double> initial_point;
    std::string initial_grid_file;

    std::optional<Grid> grid;
    double horizon = 1.0;
    double cfl_safety = 0.9;
    int output_nodes = 81;

    bool has_ensemble = false;
    int n_paths = 1000;
    double ensemble_dt = 1e-3;
    std::uint64_t seed = 1;
    int record_stride = 1;
    int threads = 0;

    struct CheckSpec {
        std::string type;  // initial-law | marginal | martingale | doob | ek1
        std::vector<double> times;
        std::vector<std::vector<double>> windows;  // martingale (s, t) pairs
        std::vector<double> q_values;
        double tolerance = 0.0;
        double negative_control_shift = 0.0;  // initial-law only
    };
    std::vector<CheckSpec> checks;

    bool has_mollify = false;
    std::vector<double> mollify_epsilons;
    double mollify_delta = 0.5;

    std::string lyapunov_family = "log";
    double growth_c_override = 0.0;  // 0 = fit from the Example-2.1 style ladder

    std::vector<std::string> condition_variants;
    std::vector<double> condition_cutoffs;
    double condition_quad_step = 2e-4;
};

ScenarioConfig parse_scenario(const json& j);
ScenarioConfig load_scenario(const std::string& path);

struct MollifyEpsilonReport {
    double epsilon = 0.0;
    double max_residual = 0.0;
    std::vector<double> check_times;
    std::vector<double> weak_distances;  // max over bumps, per check time
    double min_sigma_floor_ratio = 0.0;  // min sigma / (eps gamma) sampled
    bool psd_ok = false;
};

struct VerificationReport {
    json scenario;
    std::vector<CheckReport> checks;
    std::map<std::string, double> condition_integrals;
    std::vector<double> condition_cutoffs;
    std::map<std::string, std::vector<double>> condition_truncations;
    std::optional<BoundCertificate> certificate;
    double gronwall_min_slack = 0.0;   // min over t of 1 - int V dmu_t / bound
    double lv_integral = 0.0;
    double lv_bound_slack = 0.0;
    double weak_residual_max = 0.0;
    std::vector<MollifyEpsilonReport> mollify;
    std::map<std::string, std::vector<double>> w1_series;  // "times" and "values"
    std::uint64_t seed = 0;
    std::string version;
    std::map<std::string, double> runtimes;  // volatile, excluded from canonical form

    /// Canonical JSON: everything except volatile fields; byte-stable
    /// across repeated runs with identical config and seed.
    json to_json(bool include_volatile) const;
    std::string canonical_string() const { return to_json(false).dump(2); }
    /// True when every check passed.
    bool all_checks_pass() const;
};

VerificationReport run_scenario(const ScenarioConfig& config);

/// Pieces of the pipeline reused by CLI subcommands.
CoefficientField scenario_field(const ScenarioConfig& config);
InitialLaw scenario_initial_law(const ScenarioConfig& config);
/// Cauchy solve over the configured horizon (extended when mollification
/// is requested, so the smoothing windows stay inside the flow).
MarginalFlow scenario_solve(const ScenarioConfig& config);
PathEnsemble scenario_simulate(const ScenarioConfig& config);

/// json: report.json (canonical) + report.meta.json (volatile);
/// csv-tables: checks.csv, condition.csv; plot-data: series CSVs.
void emit_report(const VerificationReport& report, const std::string& format,
                 const std::string& out_dir);

/// Registry listing (lexicographic): builtin fields, Lyapunov families,
/// test functions, g functionals.
json list_builtins();

std::string library_version();

}  // namespace fpklab
