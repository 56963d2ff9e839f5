#include "fpklab/common.hpp"

#include <Eigen/Eigenvalues>

namespace fpklab {

double sym_operator_norm(const Mat& a) {
    if (a.rows() == 1) return std::abs(a(0, 0));
    Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double sym_min_eigenvalue(const Mat& a) {
    if (a.rows() == 1) return a(0, 0);
    Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double pairwise_sum(const std::vector<double>& values) {
    // Recursive halving with a small serial base case.
    struct Impl {
        static double run(const double* p, std::size_t n) {
            if (n <= 8) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += p[i];
                return s;
            }
            const std::size_t half = n / 2;
            return run(p, half) + run(p + half, n - half);
        }
    };
    if (values.empty()) return 0.0;
    return Impl::run(values.data(), values.size());
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> out;
    if (n <= 0) return out;
    out.resize(static_cast<std::size_t>(n));
    if (n == 1) {
        out[0] = a;
        return out;
    }
    const double step = (b - a) / static_cast<double>(n - 1);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a + step * i;
    out.back() = b;
    return out;
}

double gaussian_density(const Vec& x) {
    const double d = static_cast<double>(x.size());
    return std::exp(-0.5 * x.squaredNorm()) / std::pow(2.0 * M_PI, 0.5 * d);
}

double gaussian_density(const Vec& x, const Vec& mean, double var) {
    const double d = static_cast<double>(x.size());
    const double q = (x - mean).squaredNorm() / var;
    return std::exp(-0.5 * q) / std::pow(2.0 * M_PI * var, 0.5 * d);
}

}  // namespace fpklab
