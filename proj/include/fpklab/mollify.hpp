#pragma once

#include <vector>

#include "fpklab/coeffs.hpp"
#include "fpklab/common.hpp"
#include "fpklab/fpk.hpp"
#include "fpklab/testfns.hpp"

namespace fpklab {

/// Smooth cutoff: 1 on [0,1], 0 on [2,inf), monotone. The blend on (1,2)
/// is exp(1 - 1/(1 - (s-1)^2)).
double mollifier_cutoff(double s);
double mollifier_cutoff_deriv(double s);
/// eta(t) = int_t^inf cutoff(s) ds (tabulated on the blend interval).
double mollifier_cutoff_tail(double t);

/// Space-time product kernel
///   h_eps(t, x) = c1 c2 eps^-(d+1) cutoff(t^2/eps^2) cutoff(|x|^2/eps^2),
/// supported in |t| <= sqrt(2) eps, |x| <= sqrt(2) eps, unit total mass.
struct MollifierKernel {
    double epsilon = 0.1;
    int dim = 1;
    double c1 = 0.0;  // space normalizer
    double c2 = 0.0;  // time normalizer

    double support_radius() const { return M_SQRT2 * epsilon; }
    double time_factor(double dt) const;
    double space_factor(const Vec& dx) const;
    double value(double dt, const Vec& dx) const;
};

/// Computes c1, c2 by quadrature of the fixed cutoff profile.
MollifierKernel make_kernel(double epsilon, int dim);

/// mu^delta_t = mu_{t+delta} by time reindexing (interpolating between
/// stored nodes). The result lives on [0, T1 - delta].
MarginalFlow shift_flow(const MarginalFlow& flow, double delta);

/// One kernel sweep at (t, x): every convolution the smoothing needs.
struct MollifiedPoint {
    double sigma = 0.0;       // eps gamma + (1-eps) conv_mass
    double conv_mass = 0.0;   // int int h_eps dmu^delta ds
    Vec conv_b;               // same with drift weights
    Mat conv_a;               // same with diffusion weights
    double gauss_weight = 0.0;  // eps gamma / sigma
};

/// Step-II smoothed system built over a source flow on [0, T1]: the shifted
/// measure mu^delta, the smoothed density sigma_eps, coefficients
/// beta_eps/alpha_eps and the operator
///   L_eps u = tr(alpha D^2 u) + <beta, grad u>
///           + (eps gamma / sigma)(lap u - <x, grad u>).
/// The usable verification horizon is [0, T] with T = T1 - 2 delta.
class MollifiedSystem {
public:
    MollifiedSystem(CoefficientField field, MarginalFlow source_flow, double delta,
                    MollifierKernel kernel);

    double horizon() const { return horizon_; }
    double epsilon() const { return kernel_.epsilon; }
    double delta() const { return delta_; }
    const MollifierKernel& kernel() const { return kernel_; }
    const MarginalFlow& source() const { return source_; }
    const CoefficientField& field() const { return field_; }

    MollifiedPoint eval(double t, const Vec& x) const;
    double sigma(double t, const Vec& x) const { return eval(t, x).sigma; }
    Vec beta(double t, const Vec& x) const;
    Mat alpha(double t, const Vec& x) const;
    /// script-A = alpha + (eps gamma / sigma) I; PSD by construction.
    Mat effective_diffusion(double t, const Vec& x) const;

    /// Independent quadrature of the three displayed drift-domination
    /// terms; <beta, x>/(1+|x|^2) is bounded by w1 (hence by the sum).
    struct DriftDomination {
        double w1 = 0.0;
        double w2 = 0.0;
        double w3 = 0.0;
    };
    DriftDomination drift_domination(double t, const Vec& x) const;

private:
    CoefficientField field_;
    MarginalFlow source_;
    double delta_ = 0.0;
    MollifierKernel kernel_;
    double horizon_ = 0.0;
};

/// sigma_eps evaluator alone (Step-II smoothing of the flow, no
/// coefficients involved).
MollifiedSystem mollify_flow(const MarginalFlow& source_flow, double delta,
                             const MollifierKernel& kernel);

/// Full mollified system with coefficient convolutions.
MollifiedSystem mollified_coeffs(const CoefficientField& field, const MarginalFlow& source_flow,
                                 double delta, const MollifierKernel& kernel);

/// L_eps applied to a C^2 test function with analytic derivatives.
double apply_mollified_L(const MollifiedSystem& system, const TestFunction& u, double t,
                         const Vec& x);

struct MollifyResidualReport {
    std::vector<WeakResidualEntry> entries;
    double max_abs = 0.0;
    /// int sigma dx at each checked time (normalization audit).
    std::vector<double> sigma_masses;
};

/// Weak residual of d_t sigma = L_eps^* sigma on the given grid:
///   int phi sigma(t) - int phi sigma(0) - int_0^t int (L_eps phi) sigma ds
/// with midpoint cells in x and trapezoid steps of size at most s_step in s.
MollifyResidualReport verify_mollified(const MollifiedSystem& system, const Grid& grid,
                                       const std::vector<TestFunction>& tests,
                                       const std::vector<double>& check_times, double s_step);

}  // namespace fpklab
