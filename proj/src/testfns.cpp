#include "fpklab/testfns.hpp"

#include <cmath>

namespace fpklab {

namespace {

// g(u) = exp(1 - 1/(1-u)) on u < 1; g' = -g/w^2, g'' = g(1-2w)/w^4 with w = 1-u.
struct Profile {
    double g = 0.0, g1 = 0.0, g2 = 0.0;
};

Profile eval_profile(double u) {
    Profile p;
    if (u >= 1.0) return p;
    const double w = 1.0 - u;
    p.g = std::exp(1.0 - 1.0 / w);
    p.g1 = -p.g / (w * w);
    p.g2 = p.g * (1.0 - 2.0 * w) / (w * w * w * w);
    return p;
}

}  // namespace

double TestFunction::value(const Vec& x) const {
    const double u = (x - center).squaredNorm() / (radius * radius);
    return eval_profile(u).g;
}

Vec TestFunction::gradient(const Vec& x) const {
    const Vec z = x - center;
    const double r2 = radius * radius;
    const double u = z.squaredNorm() / r2;
    const Profile p = eval_profile(u);
    return (2.0 * p.g1 / r2) * z;
}

Mat TestFunction::hessian(const Vec& x) const {
    const Vec z = x - center;
    const double r2 = radius * radius;
    const double u = z.squaredNorm() / r2;
    const Profile p = eval_profile(u);
    const int d = dim();
    Mat h = (2.0 * p.g1 / r2) * Mat::Identity(d, d);
    h += (4.0 * p.g2 / (r2 * r2)) * (z * z.transpose());
    return h;
}

double TestFunction::laplacian(const Vec& x) const {
    const Vec z = x - center;
    const double r2 = radius * radius;
    const double u = z.squaredNorm() / r2;
    const Profile p = eval_profile(u);
    return 2.0 * p.g1 * static_cast<double>(dim()) / r2 +
           4.0 * p.g2 * z.squaredNorm() / (r2 * r2);
}

std::vector<TestFunction> bump_registry(int dim) {
    std::vector<TestFunction> fns;
    auto add = [&](const std::string& name, std::initializer_list<double> c, double r) {
        TestFunction f;
        f.name = name;
        f.center = Vec::Zero(dim);
        int i = 0;
        for (double v : c) {
            if (i < dim) f.center(i) = v;
            ++i;
        }
        f.radius = r;
        fns.push_back(std::move(f));
    };
    if (dim == 1) {
        add("bump-0", {0.0}, 1.2);
        add("bump-r", {0.6}, 1.0);
        add("bump-l", {-0.6}, 1.0);
        add("bump-far-r", {1.2}, 1.5);
        add("bump-far-l", {-1.2}, 1.5);
        add("bump-wide", {0.0}, 2.5);
        add("bump-narrow", {0.3}, 0.8);
    } else {
        add("bump-0", {0.0, 0.0}, 1.2);
        add("bump-xr", {0.6, 0.0}, 1.0);
        add("bump-xl", {-0.6, 0.0}, 1.0);
        add("bump-yu", {0.0, 0.6}, 1.0);
        add("bump-yd", {0.0, -0.6}, 1.0);
        add("bump-wide", {0.0, 0.0}, 2.0);
        add("bump-diag", {0.4, 0.4}, 0.9);
    }
    return fns;
}

}  // namespace fpklab
