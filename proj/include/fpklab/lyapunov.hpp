#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fpklab/coeffs.hpp"
#include "fpklab/common.hpp"
#include "fpklab/fpk.hpp"
#include "fpklab/smoothfn.hpp"

namespace fpklab {

/// Coercive C^2 function V >= 0 with evaluators for V, grad V, D^2 V.
/// All builtin families are radial profiles of s = 1 + |x|^2, so the
/// profile (with two derivatives) is carried along for the generalized
/// condition integrand.
struct LyapunovSpec {
    int dim = 1;
    std::string family;  // "log" | "loglog" | "custom"
    SmoothFn profile;    // s -> V as a function of s = 1 + |x|^2

    double value(const Vec& x) const;
    Vec gradient(const Vec& x) const;
    Mat hessian(const Vec& x) const;
};

/// Families: log:    V = log(1+|x|^2)
///           loglog: V = log(1+log(1+|x|^2))
LyapunovSpec lyapunov_family(const std::string& family, int dim);
LyapunovSpec lyapunov_custom(SmoothFn profile, int dim);

/// LV = trace(A D^2 V) + <b, grad V>.
double apply_L(const CoefficientField& field, const LyapunovSpec& lyap, double t, const Vec& x);

/// |sqrt(A) grad V|^2 = <A grad V, grad V>; throws NegativeForm when the
/// quadratic form comes out below -1e-12 (non-PSD diffusion).
double carre_du_champ(const CoefficientField& field, const LyapunovSpec& lyap, double t,
                      const Vec& x);

/// Smooth concave clip: identity below N-1, constant N above N+1, C^2,
/// 0 <= zeta' <= 1, zeta'' <= 0. Requires N >= 2.
SmoothFn clip_concave(double N);

struct ThetaResult {
    SmoothFn fn;
    bool identity_branch = false;
    /// Dyadic ladder knots/slopes actually used (diagnostics + tests).
    std::vector<double> knots;
    std::vector<double> slopes;
    /// sum_k theta(q_{k+1}) (tail(q_k) - tail(q_{k+1})) over the ladder.
    double ladder_sum = 0.0;
};

/// Concave C^2 theta with theta(0)=0, 0 <= theta' <= 1, theta'' <= 0,
/// theta -> infinity, and theta(V) integrable against the law described by
/// tail_mass(q) = nu(V > q). Slope-1 identity until the tail forces dyadic
/// slope halving. Throws TailNotDecaying when tail_mass never falls below
/// 1e-9 on the probe ladder q = 2^k, k <= 48.
ThetaResult make_theta(const std::function<double(double)>& tail_mass, bool v_integrable);

enum class ConditionVariant { kTrevisan, kNew, kGeneralized };

ConditionVariant condition_variant_from_string(const std::string& s);
std::string to_string(ConditionVariant v);

/// Integrals of the global-integrability conditions against mu_t dt:
///   trevisan:    ||A|| + |b|
///   new:         (||A|| + |<b,x>|) / (1+|x|)^2
///   generalized: (|V''(s)| s + |V'(s)|) ||A|| + |<b,x>| |V'(s)|, s = 1+|x|^2
/// Midpoint-in-space / trapezoid-in-time quadrature; throws
/// QuadratureFailure when refining the spatial rule moves the result by
/// more than 2%.
double condition_integral(const CoefficientField& field, const MarginalFlow& flow,
                          ConditionVariant variant, const SmoothFn* profile = nullptr);

/// Truncated condition integrals for a 1d stationary density with even
/// integrand: values of the trevisan/new integrals over |x| <= R for each
/// cutoff, times the horizon. Used for divergence studies at cutoffs far
/// beyond any affordable grid.
std::vector<double> condition_profile_1d(const CoefficientField& field,
                                         const std::function<double(double)>& density,
                                         double horizon, const std::vector<double>& cutoffs,
                                         ConditionVariant variant, double quad_step);

/// (nu_integral + w_integral) e^{C t}.
double gronwall_bound(double nu_integral, double w_integral, double growth_c, double t);

/// 2 e^{C tau} (w_integral + nu_integral).
double lv_total_bound(double nu_integral, double w_integral, double growth_c, double tau);

/// min(1, (2/q)(nu_integral + dirichlet_integral)); a probability bound.
double doob_bound(double nu_integral, double dirichlet_integral, double q);

struct BoundCertificate {
    double nu_integral = 0.0;
    double w_integral = 0.0;
    double growth_c = 0.0;
    double horizon_tau = 0.0;
    double sup_bound = 0.0;  // gronwall bound at t = tau
    double lv_bound = 0.0;
};

BoundCertificate build_certificate(double nu_integral, double w_integral, double growth_c,
                                   double horizon_tau);

/// Smallest dyadic ladder constant C1 with
///     L(log(1+|x|^2)) <= C1 + C1 log(1+|x|^2)
/// over the sampled radii/directions/times; 0 when no ladder value works.
double fit_log_domination(const CoefficientField& field, const std::vector<double>& radii,
                          const std::vector<double>& t_samples, int angular_samples);

}  // namespace fpklab
