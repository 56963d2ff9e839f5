#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fpklab/coeffs.hpp"
#include "fpklab/common.hpp"
#include "fpklab/fpk.hpp"
#include "fpklab/lyapunov.hpp"
#include "fpklab/rng.hpp"
#include "fpklab/testfns.hpp"

namespace fpklab {

/// Initial law nu: Gaussian, point mass, or a grid density (sampled by
/// inverse CDF with uniform placement within cells).
struct InitialLaw {
    enum class Kind { kGaussian, kDelta, kGridDensity };
    Kind kind = Kind::kGaussian;
    Vec mean;      // gaussian
    double var = 1.0;
    Vec point;     // delta
    Grid grid;     // grid density
    std::vector<double> density;

    int dim() const;
    Vec sample(PhiloxStream& stream) const;
    /// CDF for d=1 laws (KS checks).
    double cdf(double x) const;
    /// Expectation of f by quadrature (bump comparisons, any dim).
    double expectation(const std::function<double(const Vec&)>& f) const;
};

InitialLaw gaussian_law(const Vec& mean, double var);
InitialLaw delta_law(const Vec& point);
InitialLaw grid_law(const Grid& grid, std::vector<double> density);

/// Euler-Maruyama ensemble on a uniform time grid. states is
/// n_paths x n_nodes x dim, row-major; node k sits at time
/// k * record_stride * dt. Bit-identical regeneration from
/// (field, nu, n_paths, dt, horizon, seed, record_stride) holds by
/// construction regardless of thread count.
struct PathEnsemble {
    int n_paths = 0;
    int dim = 1;
    double dt = 1e-3;       // integration step
    int record_stride = 1;  // states stored every this many steps
    std::uint64_t seed = 0;
    std::string scheme = "euler-maruyama";
    std::vector<double> times;   // stored node times
    std::vector<double> states;  // n_paths * times.size() * dim
    long blowup_count = 0;

    double stored_dt() const { return dt * record_stride; }
    std::size_t n_nodes() const { return times.size(); }
    double state1(int path, std::size_t node) const;  // d=1 accessor
    Eigen::Map<const Vec> state(int path, std::size_t node) const;
    std::size_t node_at(double t) const;  // throws TimeNotCovered off-grid
};

struct SimulateOptions {
    int record_stride = 1;
    int n_threads = 0;  // 0 = hardware concurrency
    double blowup_radius = 1e8;
    double blowup_abort_fraction = 1e-3;
};

/// Symmetric PSD square root of 2A (spectral); the operator convention
/// carries no 1/2, so the SDE matching generator L needs sigma sigma^T = 2A.
/// Negative eigenvalues within tolerance are clipped to zero.
Mat sqrt_diffusion(const Mat& a);

PathEnsemble simulate(const CoefficientField& field, const InitialLaw& nu, int n_paths, double dt,
                      double horizon, std::uint64_t seed, const SimulateOptions& options = {});

struct CheckReport {
    std::string name;
    double statistic = 0.0;
    double stderr_est = 0.0;
    double bound_or_tol = 0.0;
    bool pass = false;
    long n_effective = 0;
    /// "two-sided" |stat| <= tol, "le" stat <= tol, "ge" stat >= tol.
    std::string sided = "two-sided";
};

/// Kolmogorov-Smirnov against nu for d=1 (asymptotic critical value at
/// level 1e-3 with the standard finite-N correction); bump-expectation
/// comparison with 4-sigma bars for d=2.
CheckReport initial_law_check(const PathEnsemble& ensemble, const InitialLaw& nu);

/// Bounded F_s-measurable functionals for the martingale check; eval sees
/// only stored nodes at times <= s.
struct PathPrefixView {
    const PathEnsemble* ensemble;
    int path;
    std::size_t max_node;  // inclusive
    Vec at_time(double t) const;
};

struct GFunctional {
    std::string name;
    double sup_bound = 1.0;
    std::function<double(const PathPrefixView&)> eval;
};

std::vector<GFunctional> g_registry(int dim);

/// Mean over paths of [f(X_t) - f(X_s) - sum Lf dt] g with 4-sigma bars
/// plus an O(dt) bias allowance derived from a sampled bound on |L(Lf)|.
CheckReport martingale_check(const PathEnsemble& ensemble, const CoefficientField& field,
                             const TestFunction& f, const GFunctional& g, double s, double t);

struct MartingaleWindow {
    double s = 0.0;
    double t = 1.0;
};

/// Batched martingale checks sharing one path sweep per (s, t) window.
/// For autonomous 1d fields the Riemann sums read Lf from a fine lookup
/// table (Lf is smooth with compact support; the interpolation error is
/// far below the O(dt) allowance). Results match martingale_check's pass
/// rule check by check.
std::vector<CheckReport> martingale_suite(const PathEnsemble& ensemble,
                                          const CoefficientField& field,
                                          const std::vector<TestFunction>& fs,
                                          const std::vector<GFunctional>& gs,
                                          const std::vector<MartingaleWindow>& windows,
                                          int n_threads = 0);

/// d=1: Wasserstein-1 distance between the empirical law at t and the
/// flow marginal (sorted samples vs piecewise-linear grid inverse CDF);
/// d=2: max bump-expectation discrepancy with 4-sigma bars.
CheckReport marginal_check(const PathEnsemble& ensemble, const MarginalFlow& flow, double t,
                           double tolerance);

/// Empirical tail of sup_t V against a externally computed bound
/// (doob_bound output).
CheckReport doob_empirical(const PathEnsemble& ensemble, const LyapunovSpec& lyap, double q,
                           double bound);

/// mean f(X_t) g - sup(g) * (flow integral of f at t) <= 0 within bars.
CheckReport lemma_ek1_check(const PathEnsemble& ensemble, const MarginalFlow& flow,
                            const TestFunction& f, const GFunctional& g, double t);

/// Binary persistence (header + row-major doubles), bit-exact round trip.
void save_ensemble(const PathEnsemble& ensemble, const std::string& path);
PathEnsemble load_ensemble(const std::string& path);

/// W1 between sorted 1d samples and a grid density (quantile coupling).
double wasserstein1_grid(std::vector<double> samples, const Grid& grid,
                         const std::vector<double>& density);

}  // namespace fpklab
