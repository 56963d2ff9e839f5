#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fpklab/coeffs.hpp"
#include "fpklab/common.hpp"
#include "fpklab/testfns.hpp"

namespace fpklab {

enum class BoundaryPolicy { kReflecting, kAbsorbing };

std::string to_string(BoundaryPolicy p);
BoundaryPolicy boundary_from_string(const std::string& s);

/// Uniform cell-centered grid on [-r_dom, r_dom]^dim, dim in {1, 2}.
struct Grid {
    int dim = 1;
    double r_dom = 8.0;
    int n_cells = 400;  // per axis
    BoundaryPolicy boundary = BoundaryPolicy::kReflecting;

    double spacing() const { return 2.0 * r_dom / n_cells; }
    double cell_volume() const;
    int total_cells() const { return dim == 1 ? n_cells : n_cells * n_cells; }
    double axis_center(int i) const { return -r_dom + (i + 0.5) * spacing(); }
    Vec cell_center(int flat_index) const;
    int flat_index(int ix, int iy) const { return iy * n_cells + ix; }

    void validate() const;
};

/// Discrete curve t -> mu_t of nonnegative grid densities with mass-leak
/// accounting. densities[k][c] is probability per unit volume in cell c at
/// times[k]; leak[k] is the mass lost through absorbing boundaries by
/// times[k]; floored[k] is the cumulative mass removed by negativity
/// flooring (diagnostic).
struct MarginalFlow {
    Grid grid;
    std::vector<double> times;
    std::vector<std::vector<double>> densities;
    std::vector<double> leak;
    std::vector<double> floored;

    double mass(std::size_t k) const;
    /// Linear interpolation between stored nodes; throws TimeNotCovered.
    std::vector<double> density_at(double t) const;
    double leak_at(double t) const;
    double horizon() const { return times.empty() ? 0.0 : times.back(); }
};

struct SolveOptions {
    double cfl_safety = 0.9;
    double mass_tolerance = 1e-6;   // reflecting-policy conservation audit
    double floor_tolerance = 1e-6;  // negativity flooring audit, per step
};

/// Explicit conservative finite-volume solve of
///     d_t mu = d_i ( d_j (a^{ij} mu) - b^i mu ),   mu(0) = init.
/// Diffusion fluxes are central, advection fluxes upwind, time stepping is
/// two-stage Heun with a CFL step recomputed from the grid coefficient
/// extremes. Marginals at the requested output times come from linear
/// interpolation between steps.
MarginalFlow solve_cauchy(const CoefficientField& field, const std::vector<double>& init,
                          const Grid& grid, const std::vector<double>& output_times,
                          const SolveOptions& options = {});

struct WeakResidualEntry {
    std::string test_name;
    double time = 0.0;
    double residual = 0.0;
};

struct WeakResidualReport {
    std::vector<WeakResidualEntry> entries;
    double max_abs = 0.0;
};

/// Residual of the weak (integral) identity
///     int phi dmu_t - int phi dmu_0 - int_0^t int L phi dmu_s ds
/// for each test function and output time. Test supports must stay at
/// least two cells inside the grid.
WeakResidualReport weak_residual(const MarginalFlow& flow, const CoefficientField& field,
                                 const std::vector<TestFunction>& tests);

/// Midpoint-in-space, trapezoid-in-time integral of integrand(t, x)
/// against the flow measure mu_t dt.
double flow_integral(const MarginalFlow& flow,
                     const std::function<double(double, const Vec&)>& integrand);

/// Same quadrature with each cell split 2^dim ways (density is treated as
/// piecewise constant); used for refinement checks.
double flow_integral_refined(const MarginalFlow& flow,
                             const std::function<double(double, const Vec&)>& integrand);

/// Closed-form Gaussian marginal families sampled on a grid. Names:
///   heat-gaussian: N(m0, v0 + 2t)      (params m0, v0)
///   ou-gaussian:   N(m0 e^-t, 1 + (v0 - 1) e^-2t)
MarginalFlow analytic_flow(const std::string& name, const std::map<std::string, double>& params,
                           const Grid& grid, const std::vector<double>& times);

/// Grid initial data.
std::vector<double> gaussian_density_on_grid(const Grid& grid, const Vec& mean, double var);
/// Point mass approximated by a narrow Gaussian of std 2h.
std::vector<double> delta_density_on_grid(const Grid& grid, const Vec& x0);

double l1_distance(const Grid& grid, const std::vector<double>& a, const std::vector<double>& b);
double grid_mass(const Grid& grid, const std::vector<double>& density);

/// Serialization: one CSV per time node plus a JSON header; values are
/// printed with enough digits to round-trip bit-exactly.
void save_flow(const MarginalFlow& flow, const std::string& directory);
MarginalFlow load_flow(const std::string& directory);

}  // namespace fpklab
