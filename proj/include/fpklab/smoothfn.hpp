#pragma once

#include <functional>

namespace fpklab {

/// A C^2 scalar function together with its first two derivatives.
struct SmoothFn {
    std::function<double(double)> value;
    std::function<double(double)> deriv;
    std::function<double(double)> second;

    double operator()(double t) const { return value(t); }
};

}  // namespace fpklab
