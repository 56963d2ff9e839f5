#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fpklab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error taxonomy. Every diagnosable failure mode gets its own type so
// callers and tests can discriminate without parsing messages.
struct FpkError : std::runtime_error {
    explicit FpkError(const std::string& msg) : std::runtime_error(msg) {}
};

#define FPKLAB_ERROR_TYPE(NAME)                                       \
    struct NAME : FpkError {                                          \
        explicit NAME(const std::string& msg) : FpkError(#NAME ": " + msg) {} \
    }

FPKLAB_ERROR_TYPE(NonFiniteError);
FPKLAB_ERROR_TYPE(NotSymmetricError);
FPKLAB_ERROR_TYPE(NotPsdError);
FPKLAB_ERROR_TYPE(NegativeFormError);
FPKLAB_ERROR_TYPE(UnknownBuiltinError);
FPKLAB_ERROR_TYPE(BadParamsError);
FPKLAB_ERROR_TYPE(QuadratureFailure);
FPKLAB_ERROR_TYPE(TailNotDecayingError);
FPKLAB_ERROR_TYPE(CflBreakdownError);
FPKLAB_ERROR_TYPE(MassLossError);
FPKLAB_ERROR_TYPE(NegativeDensityExcessError);
FPKLAB_ERROR_TYPE(SupportEscapeError);
FPKLAB_ERROR_TYPE(UnknownOracleError);
FPKLAB_ERROR_TYPE(HorizonTooShortError);
FPKLAB_ERROR_TYPE(NormalizationDriftError);
FPKLAB_ERROR_TYPE(TimeNotCoveredError);
FPKLAB_ERROR_TYPE(NotAdaptedError);
FPKLAB_ERROR_TYPE(ConfigInvalidError);
FPKLAB_ERROR_TYPE(IoFailure);

#undef FPKLAB_ERROR_TYPE

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_finite(double x, const std::string& where) {
    if (!std::isfinite(x)) throw NonFiniteError(where);
}

inline void require_finite(const Vec& v, const std::string& where) {
    if (!v.allFinite()) throw NonFiniteError(where);
}

inline void require_finite(const Mat& m, const std::string& where) {
    if (!m.allFinite()) throw NonFiniteError(where);
}

/// Operator (spectral) norm of a small symmetric matrix.
double sym_operator_norm(const Mat& a);

/// Smallest eigenvalue of a small symmetric matrix.
double sym_min_eigenvalue(const Mat& a);

/// Deterministic pairwise summation (fixed reduction order regardless of
/// how the values were produced).
double pairwise_sum(const std::vector<double>& values);

std::vector<double> linspace(double a, double b, int n);

/// Standard Gaussian density on R^d evaluated at x.
double gaussian_density(const Vec& x);

/// N(mean, var * I) density on R^d.
double gaussian_density(const Vec& x, const Vec& mean, double var);

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace fpklab
