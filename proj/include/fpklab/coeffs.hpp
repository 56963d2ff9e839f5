#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fpklab/common.hpp"

namespace fpklab {

/// Diffusion/drift pair (A, b). A must be symmetric positive semidefinite
/// wherever it is evaluated. Evaluators are pure and safe to share across
/// threads for read-only use.
struct CoefficientField {
    int dim = 1;
    std::string label;
    /// Coefficients ignore t. Lets solvers cache grid evaluations.
    bool autonomous = true;
    /// A(t, x) is the same matrix everywhere (cacheable diffusion root).
    bool constant_diffusion = false;
    std::function<Mat(double, const Vec&)> eval_A;
    std::function<Vec(double, const Vec&)> eval_b;
    /// Optional scalar drift fast path for d=1 hot loops; must agree with
    /// eval_b wherever both are defined.
    std::function<double(double, double)> eval_b1;
};

/// Validated evaluation: checks finiteness, symmetry and positive
/// semidefiniteness (relative tolerance 1e-12) before returning.
std::pair<Mat, Vec> eval_field(const CoefficientField& field, double t, const Vec& x);

struct GrowthViolation {
    std::string bound;  // "quadratic" or "one-sided"
    double t = 0.0;
    Vec x;
    double value = 0.0;  // amount by which the best ladder constant is exceeded
};

/// Sample-based growth certificate. Constants are fitted over the dyadic
/// ladder 2^0..2^20; a certificate holds on the sampled points only.
struct GrowthReport {
    double quad_constant = 0.0;      // ||A|| + |<b,x>| <= C + C|x|^2
    double onesided_constant = 0.0;  // <b,x> and ||A|| <= C + C|x|^2 log(1+|x|^2)
    bool quad_certified = false;
    bool onesided_certified = false;
    std::vector<GrowthViolation> violations;
    std::vector<double> radii;
};

GrowthReport classify_growth(const CoefficientField& field, const std::vector<double>& radii,
                             const std::vector<double>& t_samples, int angular_samples);

/// Builtin registry. Known names: cubic-confine, gaussian-rotation-2d,
/// gradient-drift, heat, oscillatory-1d, ou, polar-vortex-2d.
CoefficientField builtin_field(const std::string& name,
                               const std::map<std::string, double>& params = {});

std::vector<std::string> builtin_field_names();

/// Density rho(x) = c (2 + sin x^2)/(1 + x^2) behind the oscillatory-1d
/// builtin; the normalizer c is computed once by quadrature.
double oscillatory_density(double x);
double oscillatory_log_derivative(double x);  // rho'/rho, normalizer-free
double oscillatory_normalizer();

/// Smooth bump on (0,1): psi(s) = exp(-1/(s(1-s))), psi(0)=psi(1)=0.
struct BumpProfile {
    double value(double s) const;
    double deriv(double s) const;
};

/// Annular density rho(r, phi) = sum_{n=1}^{n_max} 2^-n psi(r-n)(2 + sin(4^n phi)).
/// Each point is covered by at most one term (supp psi in (0,1)).
double polar_vortex_density(double r, double phi, int n_max);

struct PolarVortexIntegrals {
    double radial_integral = 0.0;          // int (1+r)^-1 |d_r rho| dx
    std::vector<double> angular_partials;  // [k-1]: int over bands n<=k of r^-2 |d_phi rho| dx
    std::vector<double> lower_bounds;      // 2 pi c_psi sum_{n<=k} 2^n/(n+1)
    double c_psi = 0.0;
};

/// Band-by-band quadrature of the polar-vortex integrability study. The
/// angular factors are reduced over one oscillation period (the period
/// pi/4^n divides 2 pi exactly), so the cost is flat in n.
PolarVortexIntegrals polar_vortex_integrals(int n_max, const BumpProfile& psi, double quad_step);

}  // namespace fpklab
