#pragma once

#include <string>
#include <vector>

#include "fpklab/common.hpp"

namespace fpklab {

/// Radial C^2-compact test function
///
///     f(x) = exp(1 - 1/(1 - |x-c|^2/r^2))  on |x-c| < r, 0 outside,
///
/// with closed-form gradient and Hessian. Smooth, supported in the open
/// ball B(c, r), peak value 1 at the center.
struct TestFunction {
    std::string name;
    Vec center;
    double radius = 1.0;

    double value(const Vec& x) const;
    Vec gradient(const Vec& x) const;
    Mat hessian(const Vec& x) const;
    double laplacian(const Vec& x) const;

    int dim() const { return static_cast<int>(center.size()); }
    /// Largest |coordinate| the support can reach.
    double support_reach() const { return center.cwiseAbs().maxCoeff() + radius; }
};

/// The fixed bump family used by weak-formulation and martingale checks.
/// Centers and radii are part of the default configuration.
std::vector<TestFunction> bump_registry(int dim);

}  // namespace fpklab
