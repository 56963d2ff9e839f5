#include "fpklab/mollify.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fpklab {

// ---------------------------------------------------------------------------
// cutoff profile

double mollifier_cutoff(double s) {
    if (s <= 1.0) return 1.0;
    if (s >= 2.0) return 0.0;
    const double u = s - 1.0;
    return std::exp(1.0 - 1.0 / (1.0 - u * u));
}

double mollifier_cutoff_deriv(double s) {
    if (s <= 1.0 || s >= 2.0) return 0.0;
    const double u = s - 1.0;
    const double w = 1.0 - u * u;
    return mollifier_cutoff(s) * (-2.0 * u / (w * w));
}

namespace {

// Composite Simpson with n even subintervals.
template <typename F>
double simpson(F&& f, double a, double b, int n) {
    if (n % 2 != 0) ++n;
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

// Tabulated tail of the cutoff over the blend interval [1, 2].
struct CutoffTailTable {
    static constexpr int kN = 4096;
    std::array<double, kN + 1> tail{};  // tail[i] = int_{1+i/kN}^{2} cutoff
    CutoffTailTable() {
        tail[kN] = 0.0;
        const double h = 1.0 / kN;
        for (int i = kN - 1; i >= 0; --i) {
            const double a = 1.0 + i * h;
            tail[static_cast<std::size_t>(i)] =
                tail[static_cast<std::size_t>(i + 1)] + simpson(mollifier_cutoff, a, a + h, 8);
        }
    }
    double at(double t) const {
        const double u = (t - 1.0) * kN;
        const int i = std::clamp(static_cast<int>(u), 0, kN - 1);
        const double w = u - i;
        return (1.0 - w) * tail[static_cast<std::size_t>(i)] +
               w * tail[static_cast<std::size_t>(i + 1)];
    }
};

const CutoffTailTable& cutoff_tail_table() {
    static const CutoffTailTable table;
    return table;
}

}  // namespace

double mollifier_cutoff_tail(double t) {
    if (t >= 2.0) return 0.0;
    const auto& table = cutoff_tail_table();
    if (t >= 1.0) return table.at(t);
    if (t >= 0.0) return (1.0 - t) + table.at(1.0);
    return -t + 1.0 + table.at(1.0);
}

// ---------------------------------------------------------------------------
// kernel

double MollifierKernel::time_factor(double dt) const {
    return c2 / epsilon * mollifier_cutoff(dt * dt / (epsilon * epsilon));
}

double MollifierKernel::space_factor(const Vec& dx) const {
    return c1 * std::pow(epsilon, -dim) *
           mollifier_cutoff(dx.squaredNorm() / (epsilon * epsilon));
}

double MollifierKernel::value(double dt, const Vec& dx) const {
    return time_factor(dt) * space_factor(dx);
}

MollifierKernel make_kernel(double epsilon, int dim) {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw BadParamsError("make_kernel: need 0 < eps < 1/2");
    if (dim != 1 && dim != 2) throw BadParamsError("make_kernel: dim must be 1 or 2");
    MollifierKernel k;
    k.epsilon = epsilon;
    k.dim = dim;

    auto line_integral = [](int n) {
        // int_R cutoff(x^2) dx = 2 int_0^sqrt(2) cutoff(x^2) dx
        return 2.0 * simpson([](double x) { return mollifier_cutoff(x * x); }, 0.0, M_SQRT2, n);
    };
    auto disk_integral = [](int n) {
        // int_R2 cutoff(|x|^2) dx = pi int_0^2 cutoff(u) du
        return M_PI * simpson(mollifier_cutoff, 0.0, 2.0, n);
    };

    const double space = dim == 1 ? line_integral(2048) : disk_integral(2048);
    const double space_ref = dim == 1 ? line_integral(4096) : disk_integral(4096);
    const double time = line_integral(2048);
    const double time_ref = line_integral(4096);
    if (std::abs(space - space_ref) > 1e-9 * space || std::abs(time - time_ref) > 1e-9 * time)
        throw QuadratureFailure("make_kernel: normalizer quadrature unstable");
    k.c1 = 1.0 / space_ref;
    k.c2 = 1.0 / time_ref;
    return k;
}

// ---------------------------------------------------------------------------
// time shift

MarginalFlow shift_flow(const MarginalFlow& flow, double delta) {
    if (delta < 0.0) throw BadParamsError("shift_flow: delta < 0");
    if (flow.times.empty() || delta >= flow.horizon() - flow.times.front())
        throw HorizonTooShortError("shift_flow: delta exceeds flow horizon");
    if (delta == 0.0) return flow;

    MarginalFlow out;
    out.grid = flow.grid;
    bool have_zero = false;
    for (std::size_t k = 0; k < flow.times.size(); ++k) {
        const double shifted = flow.times[k] - delta;
        if (shifted < -1e-12) continue;
        if (std::abs(shifted) <= 1e-12) have_zero = true;
        out.times.push_back(std::max(shifted, 0.0));
        out.densities.push_back(flow.densities[k]);
        out.leak.push_back(flow.leak[k]);
        out.floored.push_back(flow.floored[k]);
    }
    if (!have_zero) {
        out.times.insert(out.times.begin(), 0.0);
        out.densities.insert(out.densities.begin(), flow.density_at(delta));
        out.leak.insert(out.leak.begin(), flow.leak_at(delta));
        out.floored.insert(out.floored.begin(), flow.floored.empty() ? 0.0 : flow.floored.front());
    }
    return out;
}

// ---------------------------------------------------------------------------
// mollified system

MollifiedSystem::MollifiedSystem(CoefficientField field, MarginalFlow source_flow, double delta,
                                 MollifierKernel kernel)
    : field_(std::move(field)),
      source_(std::move(source_flow)),
      delta_(delta),
      kernel_(kernel) {
    if (delta_ <= 0.0) throw BadParamsError("MollifiedSystem: delta must be positive");
    if (kernel_.epsilon >= delta_ / 4.0)
        throw BadParamsError("MollifiedSystem: need eps < delta/4");
    if (field_.dim != source_.grid.dim)
        throw ConfigInvalidError("MollifiedSystem: field/flow dim mismatch");
    horizon_ = source_.horizon() - 2.0 * delta_;
    if (horizon_ <= 0.0)
        throw HorizonTooShortError("MollifiedSystem: source horizon must exceed 2 delta");
}

MollifiedPoint MollifiedSystem::eval(double t, const Vec& x) const {
    const double eps = kernel_.epsilon;
    const double support = kernel_.support_radius();
    const double lo = t + delta_ - support;
    const double hi = t + delta_ + support;
    if (lo < source_.times.front() - 1e-12 || hi > source_.times.back() + 1e-12)
        throw HorizonTooShortError("MollifiedSystem::eval: t outside usable horizon");

    const Grid& grid = source_.grid;
    const double h = grid.spacing();
    const double vol = grid.cell_volume();
    const int n = grid.n_cells;
    const int d = grid.dim;

    // cell index window around x
    const auto axis_range = [&](double c) {
        const int a = std::max(0, static_cast<int>(std::floor((c - support + grid.r_dom) / h)) - 1);
        const int b = std::min(n - 1, static_cast<int>(std::ceil((c + support + grid.r_dom) / h)));
        return std::pair<int, int>{a, b};
    };
    const auto [ix0, ix1] = axis_range(x(0));
    const auto [iy0, iy1] = d == 2 ? axis_range(x(1)) : std::pair<int, int>{0, 0};

    // time nodes covering the kernel window plus one closing node each side
    const auto& times = source_.times;
    std::size_t j0 = static_cast<std::size_t>(
        std::lower_bound(times.begin(), times.end(), lo) - times.begin());
    std::size_t j1 = static_cast<std::size_t>(
        std::upper_bound(times.begin(), times.end(), hi) - times.begin());
    if (j0 > 0) --j0;
    if (j1 < times.size()) ++j1;
    if (j1 <= j0 + 1) throw HorizonTooShortError("MollifiedSystem::eval: kernel window empty");

    MollifiedPoint out;
    out.conv_b = Vec::Zero(d);
    out.conv_a = Mat::Zero(d, d);

    // Gauss-4 nodes per cell axis: the kernel varies on the eps scale,
    // which can be as little as a couple of cells, and cell-midpoint
    // sampling would leave lattice error above the normalization audit.
    static constexpr std::array<double, 4> kGaussNode = {
        -0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
    static constexpr std::array<double, 4> kGaussWeight = {
        0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};

    Vec y(d);
    double prev_mass = 0.0;
    Vec prev_b = Vec::Zero(d);
    Mat prev_a = Mat::Zero(d, d);
    double prev_time = 0.0;
    bool have_prev = false;
    for (std::size_t j = j0; j < j1; ++j) {
        const double tf = kernel_.time_factor(t + delta_ - times[j]);
        double slice_mass = 0.0;
        Vec slice_b = Vec::Zero(d);
        Mat slice_a = Mat::Zero(d, d);
        if (tf > 0.0) {
            const std::vector<double>& mu = source_.densities[j];
            for (int iy = iy0; iy <= iy1; ++iy) {
                for (int ix = ix0; ix <= ix1; ++ix) {
                    const int c = d == 1 ? ix : grid.flat_index(ix, iy);
                    const double m = mu[static_cast<std::size_t>(c)];
                    if (m == 0.0) continue;
                    const double cx = grid.axis_center(ix);
                    const double cy = d == 2 ? grid.axis_center(iy) : 0.0;
                    if (d == 1) {
                        for (std::size_t g = 0; g < 4; ++g) {
                            y(0) = cx + 0.5 * h * kGaussNode[g];
                            const double sf = kernel_.space_factor(x - y);
                            if (sf == 0.0) continue;
                            const double w = sf * m * vol * 0.5 * kGaussWeight[g];
                            slice_mass += w;
                            slice_b += w * field_.eval_b(times[j], y);
                            slice_a += w * field_.eval_A(times[j], y);
                        }
                    } else {
                        for (std::size_t gx = 0; gx < 4; ++gx) {
                            for (std::size_t gy = 0; gy < 4; ++gy) {
                                y(0) = cx + 0.5 * h * kGaussNode[gx];
                                y(1) = cy + 0.5 * h * kGaussNode[gy];
                                const double sf = kernel_.space_factor(x - y);
                                if (sf == 0.0) continue;
                                const double w =
                                    sf * m * vol * 0.25 * kGaussWeight[gx] * kGaussWeight[gy];
                                slice_mass += w;
                                slice_b += w * field_.eval_b(times[j], y);
                                slice_a += w * field_.eval_A(times[j], y);
                            }
                        }
                    }
                }
            }
            slice_mass *= tf;
            slice_b *= tf;
            slice_a *= tf;
        }
        if (have_prev) {
            const double wdt = 0.5 * (times[j] - prev_time);
            out.conv_mass += wdt * (slice_mass + prev_mass);
            out.conv_b += wdt * (slice_b + prev_b);
            out.conv_a += wdt * (slice_a + prev_a);
        }
        prev_mass = slice_mass;
        prev_b = slice_b;
        prev_a = slice_a;
        prev_time = times[j];
        have_prev = true;
    }

    const double gamma = gaussian_density(x);
    out.sigma = eps * gamma + (1.0 - eps) * out.conv_mass;
    out.gauss_weight = eps * gamma / out.sigma;
    return out;
}

Vec MollifiedSystem::beta(double t, const Vec& x) const {
    const MollifiedPoint p = eval(t, x);
    return (1.0 - kernel_.epsilon) / p.sigma * p.conv_b;
}

Mat MollifiedSystem::alpha(double t, const Vec& x) const {
    const MollifiedPoint p = eval(t, x);
    return (1.0 - kernel_.epsilon) / p.sigma * p.conv_a;
}

Mat MollifiedSystem::effective_diffusion(double t, const Vec& x) const {
    const MollifiedPoint p = eval(t, x);
    Mat m = (1.0 - kernel_.epsilon) / p.sigma * p.conv_a;
    m += p.gauss_weight * Mat::Identity(field_.dim, field_.dim);
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1.0);
    if (sym_min_eigenvalue(m) < -1e-12 * scale)
        throw NotPsdError("MollifiedSystem: effective diffusion lost PSD");
    return m;
}

MollifiedSystem::DriftDomination MollifiedSystem::drift_domination(double t, const Vec& x) const {
    const double eps = kernel_.epsilon;
    const double support = kernel_.support_radius();
    const Grid& grid = source_.grid;
    const double h = grid.spacing();
    const double vol = grid.cell_volume();
    const int n = grid.n_cells;
    const int d = grid.dim;

    const auto axis_range = [&](double c) {
        const int a = std::max(0, static_cast<int>(std::floor((c - support + grid.r_dom) / h)) - 1);
        const int b = std::min(n - 1, static_cast<int>(std::ceil((c + support + grid.r_dom) / h)));
        return std::pair<int, int>{a, b};
    };
    const auto [ix0, ix1] = axis_range(x(0));
    const auto [iy0, iy1] = d == 2 ? axis_range(x(1)) : std::pair<int, int>{0, 0};
    const auto& times = source_.times;
    const double lo = t + delta_ - support, hi = t + delta_ + support;
    std::size_t j0 = static_cast<std::size_t>(
        std::lower_bound(times.begin(), times.end(), lo) - times.begin());
    std::size_t j1 = static_cast<std::size_t>(
        std::upper_bound(times.begin(), times.end(), hi) - times.begin());
    if (j0 > 0) --j0;
    if (j1 < times.size()) ++j1;

    const double eps2 = eps * eps;
    double k1 = 0.0, k2 = 0.0, k3 = 0.0, kw2 = 0.0;
    double p1 = 0.0, p2 = 0.0, p3 = 0.0, pw2 = 0.0, ptime = 0.0;
    bool have_prev = false;
    Vec y(d);
    for (std::size_t j = j0; j < j1; ++j) {
        const double dt = t + delta_ - times[j];
        const double tf = kernel_.time_factor(dt);
        const double zt = mollifier_cutoff(dt * dt / eps2);
        const double ztp = std::abs(dt) * std::abs(mollifier_cutoff_deriv(dt * dt / eps2));
        double s1 = 0.0, s2 = 0.0, s3 = 0.0, sw2 = 0.0;
        const std::vector<double>& mu = source_.densities[j];
        for (int iy = iy0; iy <= iy1; ++iy) {
            for (int ix = ix0; ix <= ix1; ++ix) {
                const int c = d == 1 ? ix : grid.flat_index(ix, iy);
                const double m = mu[static_cast<std::size_t>(c)];
                if (m == 0.0) continue;
                y(0) = grid.axis_center(ix);
                if (d == 2) y(1) = grid.axis_center(iy);
                const double r2 = (x - y).squaredNorm() / eps2;
                const double zx = mollifier_cutoff(r2);
                const double ex = mollifier_cutoff_tail(r2);
                if (zx == 0.0 && ex == 0.0) continue;
                const double weight = m * vol;
                const double den = 1.0 + y.squaredNorm();
                const Vec b = field_.eval_b(times[j], y);
                const Mat a = field_.eval_A(times[j], y);
                s1 += std::abs(b.dot(y)) / den * zx * weight;
                s2 += ex * weight;
                s3 += a.trace() / den * zx * weight;
                sw2 += a.cwiseAbs().maxCoeff() / den * zx * weight;
            }
        }
        // assemble with the kernel prefactors
        const double hx = kernel_.c1 * std::pow(eps, -d);
        const double kv1 = tf * hx * s1;
        const double kv2 = ztp * s2;  // carries |t-s||zeta'| directly
        const double kv3 = zt * s3;
        const double kvw2 = tf * hx * sw2;
        if (have_prev) {
            const double wdt = 0.5 * (times[j] - ptime);
            k1 += wdt * (kv1 + p1);
            k2 += wdt * (kv2 + p2);
            k3 += wdt * (kv3 + p3);
            kw2 += wdt * (kvw2 + pw2);
        }
        p1 = kv1;
        p2 = kv2;
        p3 = kv3;
        pw2 = kvw2;
        ptime = times[j];
        have_prev = true;
    }

    const MollifiedPoint p = eval(t, x);
    const double c12 = kernel_.c1 * kernel_.c2 * std::pow(eps, -d - 1.0);
    DriftDomination out;
    out.w1 = 3.0 / p.sigma * (1.0 - eps) * k1 + c12 / p.sigma * k2 + 3.0 * c12 / p.sigma * k3;
    out.w2 = 3.0 / p.sigma * (1.0 - eps) * kw2;
    out.w3 = eps * gaussian_density(x) / ((1.0 + x.squaredNorm()) * p.sigma);
    return out;
}

MollifiedSystem mollify_flow(const MarginalFlow& source_flow, double delta,
                             const MollifierKernel& kernel) {
    const int d = source_flow.grid.dim;
    CoefficientField zero;
    zero.dim = d;
    zero.label = "zero";
    zero.constant_diffusion = true;
    zero.eval_A = [d](double, const Vec&) { return Mat::Zero(d, d); };
    zero.eval_b = [d](double, const Vec&) { return Vec::Zero(d); };
    return MollifiedSystem(std::move(zero), source_flow, delta, kernel);
}

MollifiedSystem mollified_coeffs(const CoefficientField& field, const MarginalFlow& source_flow,
                                 double delta, const MollifierKernel& kernel) {
    return MollifiedSystem(field, source_flow, delta, kernel);
}

double apply_mollified_L(const MollifiedSystem& system, const TestFunction& u, double t,
                         const Vec& x) {
    const MollifiedPoint p = system.eval(t, x);
    const double eps = system.epsilon();
    const Mat alpha = (1.0 - eps) / p.sigma * p.conv_a;
    const Vec beta = (1.0 - eps) / p.sigma * p.conv_b;
    const double out = (alpha * u.hessian(x)).trace() + beta.dot(u.gradient(x)) +
                       p.gauss_weight * (u.laplacian(x) - x.dot(u.gradient(x)));
    require_finite(out, "apply_mollified_L");
    return out;
}

MollifyResidualReport verify_mollified(const MollifiedSystem& system, const Grid& grid,
                                       const std::vector<TestFunction>& tests,
                                       const std::vector<double>& check_times, double s_step) {
    if (check_times.empty() || !std::is_sorted(check_times.begin(), check_times.end()) ||
        check_times.front() < 0.0 || check_times.back() > system.horizon() + 1e-12)
        throw BadParamsError("verify_mollified: bad check times");
    const double h = grid.spacing();
    for (const TestFunction& phi : tests)
        if (phi.support_reach() > grid.r_dom - 2.0 * h)
            throw SupportEscapeError("verify_mollified: " + phi.name + " reaches boundary");

    // s-grid: hits every check time exactly, never coarser than s_step
    std::vector<double> s_grid{0.0};
    for (double tc : check_times) {
        double prev = s_grid.back();
        if (tc <= prev + 1e-15) continue;
        const int parts = std::max(1, static_cast<int>(std::ceil((tc - prev) / s_step)));
        for (int i = 1; i <= parts; ++i) s_grid.push_back(prev + (tc - prev) * i / parts);
    }

    const double eps = system.epsilon();
    const int nc = grid.total_cells();
    const double vol = grid.cell_volume();

    // restrict the x-quadrature to the union of test supports
    double reach = 0.0;
    for (const TestFunction& phi : tests) reach = std::max(reach, phi.support_reach());
    std::vector<int> cells;
    std::vector<Vec> xs;
    for (int c = 0; c < nc; ++c) {
        Vec x = grid.cell_center(c);
        if (x.cwiseAbs().maxCoeff() <= reach + h) {
            cells.push_back(c);
            xs.push_back(std::move(x));
        }
    }

    // per test function: phi masses at check times and running L-integral
    const std::size_t nt = tests.size();
    std::vector<double> integral(nt, 0.0);
    std::vector<double> prev_slice(nt, 0.0);
    std::vector<double> mass0(nt, 0.0);

    MollifyResidualReport report;
    std::size_t next_check = 0;
    double prev_s = 0.0;
    for (std::size_t is = 0; is < s_grid.size(); ++is) {
        const double s = s_grid[is];
        std::vector<double> slice(nt, 0.0);
        std::vector<double> phi_mass(nt, 0.0);
        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
            const Vec& x = xs[ci];
            const MollifiedPoint p = system.eval(s, x);
            const double gauss = eps * gaussian_density(x);
            for (std::size_t ti = 0; ti < nt; ++ti) {
                const TestFunction& phi = tests[ti];
                const double pv = phi.value(x);
                if (pv != 0.0) phi_mass[ti] += pv * p.sigma;
                // (L_eps phi) sigma without dividing by sigma:
                const Vec g = phi.gradient(x);
                const double lval = (1.0 - eps) * ((p.conv_a * phi.hessian(x)).trace() +
                                                   p.conv_b.dot(g)) +
                                    gauss * (phi.laplacian(x) - x.dot(g));
                slice[ti] += lval;
            }
        }
        for (std::size_t ti = 0; ti < nt; ++ti) {
            slice[ti] *= vol;
            phi_mass[ti] *= vol;
            if (is == 0) mass0[ti] = phi_mass[ti];
            else integral[ti] += 0.5 * (s - prev_s) * (slice[ti] + prev_slice[ti]);
            prev_slice[ti] = slice[ti];
        }
        prev_s = s;

        if (next_check < check_times.size() && std::abs(s - check_times[next_check]) <= 1e-12) {
            // sigma normalization audit over the full grid
            double mass = 0.0;
            for (int c = 0; c < nc; ++c) mass += system.eval(s, grid.cell_center(c)).sigma;
            mass *= vol;
            if (std::abs(mass - 1.0) > 1e-4)
                throw NormalizationDriftError("verify_mollified: int sigma dx = " +
                                              std::to_string(mass) + " at t=" + std::to_string(s));
            report.sigma_masses.push_back(mass);
            for (std::size_t ti = 0; ti < nt; ++ti) {
                WeakResidualEntry e;
                e.test_name = tests[ti].name;
                e.time = s;
                e.residual = phi_mass[ti] - mass0[ti] - integral[ti];
                report.max_abs = std::max(report.max_abs, std::abs(e.residual));
                report.entries.push_back(std::move(e));
            }
            ++next_check;
        }
    }
    return report;
}

}  // namespace fpklab
