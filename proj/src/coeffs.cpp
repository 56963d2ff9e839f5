#include "fpklab/coeffs.hpp"

#include <algorithm>
#include <cmath>

namespace fpklab {

namespace {

constexpr double kPsdRelTol = 1e-12;

double ladder_value(int k) { return std::ldexp(1.0, k); }  // 2^k

Mat identity_matrix(int d) { return Mat::Identity(d, d); }

double map_get(const std::map<std::string, double>& params, const std::string& key,
               double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

int map_get_int(const std::map<std::string, double>& params, const std::string& key,
                int fallback) {
    return static_cast<int>(std::lround(map_get(params, key, fallback)));
}

// Composite Simpson on [a, b] with n subintervals (n made even).
template <typename F>
double simpson(F&& f, double a, double b, int n) {
    if (n % 2 != 0) ++n;
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

}  // namespace

std::pair<Mat, Vec> eval_field(const CoefficientField& field, double t, const Vec& x) {
    require_finite(x, "eval_field: x");
    Mat a = field.eval_A(t, x);
    Vec b = field.eval_b(t, x);
    require_finite(a, "eval_field: A(" + field.label + ")");
    require_finite(b, "eval_field: b(" + field.label + ")");
    const double scale = a.cwiseAbs().maxCoeff();
    const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
    if (asym > kPsdRelTol * std::max(scale, 1.0))
        throw NotSymmetricError("eval_field: A not symmetric for " + field.label);
    if (sym_min_eigenvalue(a) < -kPsdRelTol * std::max(scale, 1.0))
        throw NotPsdError("eval_field: A not PSD for " + field.label);
    return {std::move(a), std::move(b)};
}

GrowthReport classify_growth(const CoefficientField& field, const std::vector<double>& radii,
                             const std::vector<double>& t_samples, int angular_samples) {
    if (radii.empty()) throw BadParamsError("classify_growth: radii empty");
    if (!std::is_sorted(radii.begin(), radii.end()))
        throw BadParamsError("classify_growth: radii must be increasing");

    struct Sample {
        double t;
        Vec x;
        double quad_lhs;      // ||A|| + |<b,x>|
        double onesided_lhs;  // max(<b,x>, ||A||)
        double quad_rhs_unit;
        double onesided_rhs_unit;
    };
    std::vector<Sample> samples;

    std::vector<Vec> directions;
    if (field.dim == 1) {
        directions.push_back(Vec::Constant(1, 1.0));
        directions.push_back(Vec::Constant(1, -1.0));
    } else {
        const int m = std::max(angular_samples, 4);
        for (int k = 0; k < m; ++k) {
            const double phi = 2.0 * M_PI * k / m;
            Vec u = Vec::Zero(field.dim);
            u(0) = std::cos(phi);
            u(1) = std::sin(phi);
            directions.push_back(u);
        }
    }

    const std::vector<double> times = t_samples.empty() ? std::vector<double>{0.0} : t_samples;
    for (double r : radii) {
        for (const Vec& u : directions) {
            for (double t : times) {
                const Vec x = r * u;
                auto [a, b] = eval_field(field, t, x);
                const double an = sym_operator_norm(a);
                const double bx = b.dot(x);
                Sample s;
                s.t = t;
                s.x = x;
                s.quad_lhs = an + std::abs(bx);
                s.onesided_lhs = std::max(bx, an);
                const double x2 = x.squaredNorm();
                s.quad_rhs_unit = 1.0 + x2;
                s.onesided_rhs_unit = 1.0 + x2 * std::log1p(x2);
                samples.push_back(std::move(s));
            }
        }
    }

    GrowthReport report;
    report.radii = radii;
    auto fit = [&](auto lhs_of, auto rhs_unit_of, const std::string& label, double* constant,
                   bool* certified) {
        for (int k = 0; k <= 20; ++k) {
            const double c = ladder_value(k);
            bool ok = true;
            for (const Sample& s : samples) {
                if (lhs_of(s) > c * rhs_unit_of(s)) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                *constant = c;
                *certified = true;
                return;
            }
        }
        *constant = ladder_value(20);
        *certified = false;
        for (const Sample& s : samples) {
            if (lhs_of(s) > *constant * rhs_unit_of(s)) {
                GrowthViolation v;
                v.bound = label;
                v.t = s.t;
                v.x = s.x;
                v.value = lhs_of(s) - *constant * rhs_unit_of(s);
                report.violations.push_back(std::move(v));
            }
        }
    };

    fit([](const Sample& s) { return s.quad_lhs; },
        [](const Sample& s) { return s.quad_rhs_unit; }, "quadratic", &report.quad_constant,
        &report.quad_certified);
    fit([](const Sample& s) { return s.onesided_lhs; },
        [](const Sample& s) { return s.onesided_rhs_unit; }, "one-sided",
        &report.onesided_constant, &report.onesided_certified);
    return report;
}

// ---------------------------------------------------------------------------
// oscillatory-1d density

namespace {

double oscillatory_unnormalized(double x) {
    return (2.0 + std::sin(x * x)) / (1.0 + x * x);
}

// d/dx log[(2+sin x^2)/(1+x^2)]
double oscillatory_logderiv_impl(double x) {
    return 2.0 * x * std::cos(x * x) / (2.0 + std::sin(x * x)) - 2.0 * x / (1.0 + x * x);
}

double compute_oscillatory_normalizer() {
    // The integrand oscillates like sin(x^2); the step resolves the local
    // period pi/x out to X, and the remainder is handled analytically:
    // int_X^inf 2/(1+x^2) = 2(pi/2 - atan X), oscillatory tail O(X^-3).
    const double X = 200.0;
    const int n = 1 << 21;
    const double body =
        2.0 * simpson([](double x) { return oscillatory_unnormalized(x); }, 0.0, X, n);
    const double tail = 2.0 * 2.0 * (M_PI / 2.0 - std::atan(X));
    return 1.0 / (body + tail);
}

}  // namespace

double oscillatory_normalizer() {
    static const double c = compute_oscillatory_normalizer();
    return c;
}

double oscillatory_density(double x) {
    return oscillatory_normalizer() * oscillatory_unnormalized(x);
}

double oscillatory_log_derivative(double x) { return oscillatory_logderiv_impl(x); }

// ---------------------------------------------------------------------------
// polar vortex density

namespace {

// Active series index at radius r, or 0 if none: supp psi(.-n) = (n, n+1).
int polar_active_band(double r, int n_max) {
    const int n = static_cast<int>(std::floor(r));
    if (n < 1 || n > n_max) return 0;
    if (r <= n || r >= n + 1) return 0;
    return n;
}

}  // namespace

double BumpProfile::value(double s) const {
    if (s <= 0.0 || s >= 1.0) return 0.0;
    return std::exp(-1.0 / (s * (1.0 - s)));
}

double BumpProfile::deriv(double s) const {
    if (s <= 0.0 || s >= 1.0) return 0.0;
    const double u = s * (1.0 - s);
    return value(s) * (1.0 - 2.0 * s) / (u * u);
}

double polar_vortex_density(double r, double phi, int n_max) {
    const int n = polar_active_band(r, n_max);
    if (n == 0) return 0.0;
    static const BumpProfile psi;
    const double amp = std::ldexp(1.0, -n);  // 2^-n
    return amp * psi.value(r - n) * (2.0 + std::sin(std::pow(4.0, n) * phi));
}

PolarVortexIntegrals polar_vortex_integrals(int n_max, const BumpProfile& psi, double quad_step) {
    if (n_max < 0) throw BadParamsError("polar_vortex_integrals: n_max < 0");
    if (quad_step <= 0.0 || quad_step >= 0.5)
        throw BadParamsError("polar_vortex_integrals: quad_step out of range");

    PolarVortexIntegrals out;
    if (n_max == 0) return out;

    const int n_radial = std::max(16, static_cast<int>(std::ceil(1.0 / quad_step)));

    // Angular factors over one period; the period pi/4^n (resp. 2pi/4^n)
    // divides [0, 2pi] exactly 2*4^n (resp. 4^n) times, so
    //   int_0^{2pi} |cos(4^n phi)| dphi   = 2 * int_0^pi |cos u| du
    //   int_0^{2pi} (2 + sin(4^n phi)) dphi = int_0^{2pi} (2 + sin u) du.
    auto angular_abs_cos = [&](int n_pts) {
        return 2.0 * simpson([](double u) { return std::abs(std::cos(u)); }, 0.0, M_PI, n_pts);
    };
    auto angular_two_plus_sin = [&](int n_pts) {
        return simpson([](double u) { return 2.0 + std::sin(u); }, 0.0, 2.0 * M_PI, n_pts);
    };

    auto compute = [&](int n_sub) {
        const int na = 4 * n_sub;
        const double cos_factor = angular_abs_cos(na);
        const double sin_factor = angular_two_plus_sin(na);
        const double c_psi = simpson([&](double s) { return psi.value(s); }, 0.0, 1.0, n_sub);

        std::vector<double> band_angular(static_cast<std::size_t>(n_max) + 1, 0.0);
        std::vector<double> band_radial(static_cast<std::size_t>(n_max) + 1, 0.0);
        for (int n = 1; n <= n_max; ++n) {
            const double amp_up = std::ldexp(1.0, n);     // 2^n  (from 2^-n * 4^n)
            const double amp_down = std::ldexp(1.0, -n);  // 2^-n
            // int_0^1 psi(s)/(s+n) ds  and  int_0^1 |psi'(s)| (s+n)/(1+s+n) ds
            const double radial_inv =
                simpson([&](double s) { return psi.value(s) / (s + n); }, 0.0, 1.0, n_sub);
            const double radial_dr = simpson(
                [&](double s) { return std::abs(psi.deriv(s)) * (s + n) / (1.0 + s + n); }, 0.0,
                1.0, n_sub);
            band_angular[static_cast<std::size_t>(n)] = amp_up * radial_inv * cos_factor;
            band_radial[static_cast<std::size_t>(n)] = amp_down * radial_dr * sin_factor;
        }

        PolarVortexIntegrals r;
        r.c_psi = c_psi;
        r.angular_partials.resize(static_cast<std::size_t>(n_max), 0.0);
        r.lower_bounds.resize(static_cast<std::size_t>(n_max), 0.0);
        double acc_ang = 0.0, acc_rad = 0.0, acc_bound = 0.0;
        for (int k = 1; k <= n_max; ++k) {
            acc_ang += band_angular[static_cast<std::size_t>(k)];
            acc_rad += band_radial[static_cast<std::size_t>(k)];
            acc_bound += std::ldexp(1.0, k) / (k + 1.0);
            r.angular_partials[static_cast<std::size_t>(k - 1)] = acc_ang;
            r.lower_bounds[static_cast<std::size_t>(k - 1)] = 2.0 * M_PI * c_psi * acc_bound;
        }
        r.radial_integral = acc_rad;
        return r;
    };

    out = compute(n_radial);
    const PolarVortexIntegrals refined = compute(2 * n_radial);
    auto rel_gap = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
    };
    double worst = rel_gap(out.radial_integral, refined.radial_integral);
    for (std::size_t i = 0; i < out.angular_partials.size(); ++i)
        worst = std::max(worst, rel_gap(out.angular_partials[i], refined.angular_partials[i]));
    if (worst > 0.01)
        throw QuadratureFailure("polar_vortex_integrals: refinement moved result by " +
                                std::to_string(worst * 100.0) + "%");
    return refined;
}

// ---------------------------------------------------------------------------
// builtin registry

CoefficientField builtin_field(const std::string& name,
                               const std::map<std::string, double>& params) {
    CoefficientField f;
    f.label = name;
    if (name == "heat") {
        f.dim = map_get_int(params, "dim", 1);
        f.constant_diffusion = true;
        const int d = f.dim;
        f.eval_A = [d](double, const Vec&) { return identity_matrix(d); };
        f.eval_b = [d](double, const Vec&) { return Vec::Zero(d); };
        if (d == 1) f.eval_b1 = [](double, double) { return 0.0; };
    } else if (name == "ou") {
        f.dim = map_get_int(params, "dim", 1);
        f.constant_diffusion = true;
        const int d = f.dim;
        f.eval_A = [d](double, const Vec&) { return identity_matrix(d); };
        f.eval_b = [](double, const Vec& x) { return Vec(-x); };
        if (d == 1) f.eval_b1 = [](double, double x) { return -x; };
    } else if (name == "cubic-confine") {
        f.dim = 1;
        f.constant_diffusion = true;
        const double a = map_get(params, "a", 1.0);
        if (a < 0.0) throw BadParamsError("cubic-confine: a < 0");
        f.eval_A = [a](double, const Vec&) { return Mat::Constant(1, 1, a); };
        f.eval_b = [](double, const Vec& x) {
            return Vec::Constant(1, -x(0) * x(0) * x(0));
        };
        f.eval_b1 = [](double, double x) { return -x * x * x; };
    } else if (name == "gradient-drift") {
        // b = (log density)' for a Gaussian density N(mean, variance).
        f.dim = map_get_int(params, "dim", 1);
        f.constant_diffusion = true;
        const int d = f.dim;
        const double mean = map_get(params, "mean", 0.0);
        const double var = map_get(params, "variance", 1.0);
        if (var <= 0.0) throw BadParamsError("gradient-drift: variance <= 0");
        f.eval_A = [d](double, const Vec&) { return identity_matrix(d); };
        f.eval_b = [mean, var](double, const Vec& x) {
            return Vec((-(x.array() - mean) / var).matrix());
        };
        if (d == 1) f.eval_b1 = [mean, var](double, double x) { return -(x - mean) / var; };
    } else if (name == "oscillatory-1d") {
        f.dim = 1;
        f.constant_diffusion = true;
        f.eval_A = [](double, const Vec&) { return Mat::Constant(1, 1, 1.0); };
        f.eval_b = [](double, const Vec& x) {
            return Vec::Constant(1, oscillatory_log_derivative(x(0)));
        };
        f.eval_b1 = [](double, double x) { return oscillatory_log_derivative(x); };
    } else if (name == "polar-vortex-2d") {
        f.dim = 2;
        f.constant_diffusion = true;
        const int n_max = map_get_int(params, "n_max", 6);
        if (n_max < 1) throw BadParamsError("polar-vortex-2d: n_max < 1");
        f.eval_A = [](double, const Vec&) { return identity_matrix(2); };
        f.eval_b = [n_max](double, const Vec& x) {
            // b = grad(rho)/rho, taken as 0 off the support of rho.
            const double r = x.norm();
            const int n = polar_active_band(r, n_max);
            if (n == 0 || r < 1e-12) return Vec(Vec::Zero(2));
            static const BumpProfile psi;
            const double s = r - n;
            const double pv = psi.value(s);
            if (pv <= 0.0) return Vec(Vec::Zero(2));
            const double phi = std::atan2(x(1), x(0));
            const double m = std::pow(4.0, n);
            const double trig = 2.0 + std::sin(m * phi);
            const double d_r = psi.deriv(s) / pv;                       // d_r log rho
            const double d_phi = m * std::cos(m * phi) / trig;          // d_phi log rho
            const double cphi = x(0) / r, sphi = x(1) / r;
            Vec b(2);
            b(0) = cphi * d_r - sphi * d_phi / r;
            b(1) = sphi * d_r + cphi * d_phi / r;
            return b;
        };
    } else if (name == "gaussian-rotation-2d") {
        // b(x) = -x + gamma(x)^-1 h(|x|^2) U x with h(s) = s e^-s and U a
        // quarter-turn rotation; <Ux, x> = 0 and div(gamma v) = 0, so the
        // standard Gaussian stays stationary.
        f.dim = 2;
        f.constant_diffusion = true;
        f.eval_A = [](double, const Vec&) { return identity_matrix(2); };
        f.eval_b = [](double, const Vec& x) {
            const double s = x.squaredNorm();
            const double scale = 2.0 * M_PI * s * std::exp(-0.5 * s);  // h(s)/gamma(x)
            Vec b(2);
            b(0) = -x(0) - scale * x(1);
            b(1) = -x(1) + scale * x(0);
            return b;
        };
    } else {
        throw UnknownBuiltinError("builtin_field: " + name);
    }
    return f;
}

std::vector<std::string> builtin_field_names() {
    return {"cubic-confine", "gaussian-rotation-2d", "gradient-drift", "heat",
            "oscillatory-1d", "ou", "polar-vortex-2d"};
}

}  // namespace fpklab
