#include "fpklab/fpk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fpklab {

namespace {
constexpr double kEps0 = 1e-12;
}

std::string to_string(BoundaryPolicy p) {
    return p == BoundaryPolicy::kReflecting ? "reflecting" : "absorbing";
}

BoundaryPolicy boundary_from_string(const std::string& s) {
    if (s == "reflecting") return BoundaryPolicy::kReflecting;
    if (s == "absorbing") return BoundaryPolicy::kAbsorbing;
    throw ConfigInvalidError("unknown boundary policy: " + s);
}

double Grid::cell_volume() const {
    const double h = spacing();
    return dim == 1 ? h : h * h;
}

Vec Grid::cell_center(int flat) const {
    Vec x(dim);
    if (dim == 1) {
        x(0) = axis_center(flat);
    } else {
        x(0) = axis_center(flat % n_cells);
        x(1) = axis_center(flat / n_cells);
    }
    return x;
}

void Grid::validate() const {
    if (dim != 1 && dim != 2) throw ConfigInvalidError("grid dim must be 1 or 2");
    if (r_dom <= 0.0) throw ConfigInvalidError("grid r_dom must be positive");
    if (n_cells < 16) throw ConfigInvalidError("grid needs at least 16 cells per axis");
}

double MarginalFlow::mass(std::size_t k) const {
    return grid_mass(grid, densities.at(k));
}

std::vector<double> MarginalFlow::density_at(double t) const {
    if (times.empty()) throw TimeNotCoveredError("flow has no nodes");
    const double t0 = times.front(), t1 = times.back();
    if (t < t0 - 1e-12 || t > t1 + 1e-12)
        throw TimeNotCoveredError("t=" + std::to_string(t) + " outside [" + std::to_string(t0) +
                                  ", " + std::to_string(t1) + "]");
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    std::size_t hi = static_cast<std::size_t>(std::distance(times.begin(), it));
    if (hi >= times.size()) hi = times.size() - 1;
    if (hi == 0) return densities[0];
    const std::size_t lo = hi - 1;
    const double span = times[hi] - times[lo];
    const double w = span > 0.0 ? (t - times[lo]) / span : 0.0;
    std::vector<double> out(densities[lo].size());
    for (std::size_t c = 0; c < out.size(); ++c)
        out[c] = (1.0 - w) * densities[lo][c] + w * densities[hi][c];
    return out;
}

double MarginalFlow::leak_at(double t) const {
    if (times.empty()) throw TimeNotCoveredError("flow has no nodes");
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    std::size_t hi = static_cast<std::size_t>(std::distance(times.begin(), it));
    if (hi >= times.size()) hi = times.size() - 1;
    if (hi == 0) return leak[0];
    const std::size_t lo = hi - 1;
    const double span = times[hi] - times[lo];
    const double w = span > 0.0 ? (t - times[lo]) / span : 0.0;
    return (1.0 - w) * leak[lo] + w * leak[hi];
}

double grid_mass(const Grid& grid, const std::vector<double>& density) {
    double s = 0.0;
    for (double v : density) s += v;
    return s * grid.cell_volume();
}

double l1_distance(const Grid& grid, const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigInvalidError("l1_distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s * grid.cell_volume();
}

// ---------------------------------------------------------------------------
// solver

namespace {

/// Grid-sampled coefficients. For autonomous fields this is evaluated once;
/// otherwise it is refreshed every step.
struct CoefficientCache {
    // cell-centered diffusion entries
    std::vector<double> a_xx, a_xy, a_yy;  // a_xy/a_yy empty in 1d
    // normal drift components at interfaces
    std::vector<double> b_x;  // 1d: n+1 edges; 2d: (n+1) x n
    std::vector<double> b_y;  // 2d only: n x (n+1)
    double max_a_norm = 0.0;
    double max_b_norm = 0.0;
};

void fill_cache(const CoefficientField& field, const Grid& grid, double t,
                CoefficientCache* cache) {
    const int n = grid.n_cells;
    const double h = grid.spacing();
    const double lo = -grid.r_dom;
    cache->max_a_norm = 0.0;
    cache->max_b_norm = 0.0;
    if (grid.dim == 1) {
        cache->a_xx.resize(static_cast<std::size_t>(n));
        cache->b_x.resize(static_cast<std::size_t>(n) + 1);
        Vec x(1);
        for (int i = 0; i < n; ++i) {
            x(0) = grid.axis_center(i);
            const Mat a = field.eval_A(t, x);
            require_finite(a, "solve_cauchy: A");
            cache->a_xx[static_cast<std::size_t>(i)] = a(0, 0);
            cache->max_a_norm = std::max(cache->max_a_norm, std::abs(a(0, 0)));
        }
        for (int j = 0; j <= n; ++j) {
            x(0) = lo + j * h;
            const Vec b = field.eval_b(t, x);
            require_finite(b, "solve_cauchy: b");
            cache->b_x[static_cast<std::size_t>(j)] = b(0);
            cache->max_b_norm = std::max(cache->max_b_norm, std::abs(b(0)));
        }
        return;
    }
    cache->a_xx.resize(static_cast<std::size_t>(n) * n);
    cache->a_xy.resize(static_cast<std::size_t>(n) * n);
    cache->a_yy.resize(static_cast<std::size_t>(n) * n);
    cache->b_x.resize(static_cast<std::size_t>(n + 1) * n);
    cache->b_y.resize(static_cast<std::size_t>(n) * (n + 1));
    Vec x(2);
    for (int iy = 0; iy < n; ++iy) {
        x(1) = grid.axis_center(iy);
        for (int ix = 0; ix < n; ++ix) {
            x(0) = grid.axis_center(ix);
            const Mat a = field.eval_A(t, x);
            require_finite(a, "solve_cauchy: A");
            const std::size_t c = static_cast<std::size_t>(iy) * n + ix;
            cache->a_xx[c] = a(0, 0);
            cache->a_xy[c] = 0.5 * (a(0, 1) + a(1, 0));
            cache->a_yy[c] = a(1, 1);
            cache->max_a_norm = std::max(cache->max_a_norm, sym_operator_norm(a));
        }
    }
    for (int iy = 0; iy < n; ++iy) {
        x(1) = grid.axis_center(iy);
        for (int jx = 0; jx <= n; ++jx) {
            x(0) = lo + jx * h;
            const Vec b = field.eval_b(t, x);
            require_finite(b, "solve_cauchy: b");
            cache->b_x[static_cast<std::size_t>(iy) * (n + 1) + jx] = b(0);
            cache->max_b_norm = std::max(cache->max_b_norm, b.norm());
        }
    }
    for (int jy = 0; jy <= n; ++jy) {
        x(1) = lo + jy * h;
        for (int ix = 0; ix < n; ++ix) {
            x(0) = grid.axis_center(ix);
            const Vec b = field.eval_b(t, x);
            require_finite(b, "solve_cauchy: b");
            cache->b_y[static_cast<std::size_t>(jy) * n + ix] = b(1);
            cache->max_b_norm = std::max(cache->max_b_norm, b.norm());
        }
    }
}

/// -div of the physical flux G_i = b^i mu - d_j(a^{ij} mu); returns the
/// boundary outflow rate (mass per unit time) for leak accounting.
double apply_rhs_1d(const Grid& grid, const CoefficientCache& cc, const std::vector<double>& mu,
                    std::vector<double>* rhs, std::vector<double>* work_flux,
                    std::vector<double>* work_am) {
    const int n = grid.n_cells;
    const double h = grid.spacing();
    const bool reflecting = grid.boundary == BoundaryPolicy::kReflecting;
    std::vector<double>& am = *work_am;
    std::vector<double>& g = *work_flux;  // n+1 interface fluxes
    am.resize(static_cast<std::size_t>(n));
    g.assign(static_cast<std::size_t>(n) + 1, 0.0);
    for (int i = 0; i < n; ++i)
        am[static_cast<std::size_t>(i)] = cc.a_xx[static_cast<std::size_t>(i)] * mu[static_cast<std::size_t>(i)];
    for (int j = 1; j < n; ++j) {
        const double diff = (am[static_cast<std::size_t>(j)] - am[static_cast<std::size_t>(j - 1)]) / h;
        const double v = cc.b_x[static_cast<std::size_t>(j)];
        const double adv = v >= 0.0 ? v * mu[static_cast<std::size_t>(j - 1)] : v * mu[static_cast<std::size_t>(j)];
        g[static_cast<std::size_t>(j)] = adv - diff;
    }
    if (!reflecting) {
        {
            const double diff = (am[0] - 0.0) / h;
            const double v = cc.b_x[0];
            const double adv = v >= 0.0 ? 0.0 : v * mu[0];
            g[0] = adv - diff;
        }
        {
            const double diff = (0.0 - am[static_cast<std::size_t>(n - 1)]) / h;
            const double v = cc.b_x[static_cast<std::size_t>(n)];
            const double adv = v >= 0.0 ? v * mu[static_cast<std::size_t>(n - 1)] : 0.0;
            g[static_cast<std::size_t>(n)] = adv - diff;
        }
    }
    rhs->resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        (*rhs)[static_cast<std::size_t>(i)] =
            -(g[static_cast<std::size_t>(i + 1)] - g[static_cast<std::size_t>(i)]) / h;
    return g[static_cast<std::size_t>(n)] - g[0];
}

double apply_rhs_2d(const Grid& grid, const CoefficientCache& cc, const std::vector<double>& mu,
                    std::vector<double>* rhs, std::vector<double>* gx_store,
                    std::vector<double>* gy_store, std::vector<double>* am_store) {
    const int n = grid.n_cells;
    const double h = grid.spacing();
    const bool reflecting = grid.boundary == BoundaryPolicy::kReflecting;
    const std::size_t nc = static_cast<std::size_t>(n) * n;

    std::vector<double>& am = *am_store;  // holds a_xx*mu, a_xy*mu, a_yy*mu stacked
    am.resize(3 * nc);
    double* am_xx = am.data();
    double* am_xy = am.data() + nc;
    double* am_yy = am.data() + 2 * nc;
    for (std::size_t c = 0; c < nc; ++c) {
        am_xx[c] = cc.a_xx[c] * mu[c];
        am_xy[c] = cc.a_xy[c] * mu[c];
        am_yy[c] = cc.a_yy[c] * mu[c];
    }

    auto cell = [n](int ix, int iy) { return static_cast<std::size_t>(iy) * n + ix; };
    // Average of a_xy*mu at the corner (jx-1/2 boundary between ix-1,ix;
    // jy-1/2 between iy-1,iy), clamped to existing cells at the domain edge.
    auto corner_xy = [&](int jx, int jy) {
        double s = 0.0;
        int cnt = 0;
        for (int ix = jx - 1; ix <= jx; ++ix) {
            if (ix < 0 || ix >= n) continue;
            for (int iy = jy - 1; iy <= jy; ++iy) {
                if (iy < 0 || iy >= n) continue;
                s += am_xy[cell(ix, iy)];
                ++cnt;
            }
        }
        return cnt > 0 ? s / cnt : 0.0;
    };

    std::vector<double>& gx = *gx_store;  // (n+1) x n, index iy*(n+1)+jx
    std::vector<double>& gy = *gy_store;  // n x (n+1), index jy*n+ix
    gx.assign(static_cast<std::size_t>(n + 1) * n, 0.0);
    gy.assign(static_cast<std::size_t>(n) * (n + 1), 0.0);

    for (int iy = 0; iy < n; ++iy) {
        const int j_lo = reflecting ? 1 : 0;
        const int j_hi = reflecting ? n - 1 : n;
        for (int jx = j_lo; jx <= j_hi; ++jx) {
            const double left = jx > 0 ? am_xx[cell(jx - 1, iy)] : 0.0;
            const double right = jx < n ? am_xx[cell(jx, iy)] : 0.0;
            const double diff1 = (right - left) / h;
            const double diff2 = (corner_xy(jx, iy + 1) - corner_xy(jx, iy)) / h;
            const double v = cc.b_x[static_cast<std::size_t>(iy) * (n + 1) + jx];
            double adv;
            if (v >= 0.0)
                adv = jx > 0 ? v * mu[cell(jx - 1, iy)] : 0.0;
            else
                adv = jx < n ? v * mu[cell(jx, iy)] : 0.0;
            gx[static_cast<std::size_t>(iy) * (n + 1) + jx] = adv - diff1 - diff2;
        }
    }
    for (int jy = reflecting ? 1 : 0; jy <= (reflecting ? n - 1 : n); ++jy) {
        for (int ix = 0; ix < n; ++ix) {
            const double lower = jy > 0 ? am_yy[cell(ix, jy - 1)] : 0.0;
            const double upper = jy < n ? am_yy[cell(ix, jy)] : 0.0;
            const double diff1 = (upper - lower) / h;
            const double diff2 = (corner_xy(ix + 1, jy) - corner_xy(ix, jy)) / h;
            const double v = cc.b_y[static_cast<std::size_t>(jy) * n + ix];
            double adv;
            if (v >= 0.0)
                adv = jy > 0 ? v * mu[cell(ix, jy - 1)] : 0.0;
            else
                adv = jy < n ? v * mu[cell(ix, jy)] : 0.0;
            gy[static_cast<std::size_t>(jy) * n + ix] = adv - diff1 - diff2;
        }
    }

    rhs->resize(nc);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            (*rhs)[cell(ix, iy)] =
                -(gx[static_cast<std::size_t>(iy) * (n + 1) + ix + 1] -
                  gx[static_cast<std::size_t>(iy) * (n + 1) + ix]) / h -
                (gy[static_cast<std::size_t>(iy + 1) * n + ix] -
                 gy[static_cast<std::size_t>(iy) * n + ix]) / h;

    double outflow = 0.0;
    for (int iy = 0; iy < n; ++iy) {
        outflow += gx[static_cast<std::size_t>(iy) * (n + 1) + n] * h;
        outflow -= gx[static_cast<std::size_t>(iy) * (n + 1) + 0] * h;
    }
    for (int ix = 0; ix < n; ++ix) {
        outflow += gy[static_cast<std::size_t>(n) * n + ix] * h;
        outflow -= gy[static_cast<std::size_t>(0) * n + ix] * h;
    }
    return outflow;
}

}  // namespace

MarginalFlow solve_cauchy(const CoefficientField& field, const std::vector<double>& init,
                          const Grid& grid, const std::vector<double>& output_times,
                          const SolveOptions& options) {
    grid.validate();
    if (field.dim != grid.dim) throw ConfigInvalidError("solve_cauchy: field/grid dim mismatch");
    if (static_cast<int>(init.size()) != grid.total_cells())
        throw ConfigInvalidError("solve_cauchy: init size mismatch");
    if (output_times.empty() || !std::is_sorted(output_times.begin(), output_times.end()) ||
        output_times.front() < 0.0)
        throw ConfigInvalidError("solve_cauchy: bad output times");
    {
        double m = grid_mass(grid, init);
        if (std::abs(m - 1.0) > 1e-8)
            throw ConfigInvalidError("solve_cauchy: init mass " + std::to_string(m));
        for (double v : init)
            if (v < 0.0) throw ConfigInvalidError("solve_cauchy: negative init density");
    }

    const double horizon = output_times.back();
    const double h = grid.spacing();
    const double d = static_cast<double>(grid.dim);

    MarginalFlow flow;
    flow.grid = grid;

    CoefficientCache cc;
    fill_cache(field, grid, 0.0, &cc);

    std::vector<double> mu = init;
    std::vector<double> mu_old, mu_stage, k1, k2, flux_a, flux_b, work;
    double t = 0.0;
    double leak_total = 0.0;
    double floored_total = 0.0;

    std::size_t next_out = 0;
    auto emit_outputs_up_to = [&](double t_new, const std::vector<double>& mu_new,
                                  double leak_new, double floored_new, double t_old,
                                  const std::vector<double>& mu_old, double leak_old,
                                  double floored_old) {
        while (next_out < output_times.size() && output_times[next_out] <= t_new + 1e-12) {
            const double tau = output_times[next_out];
            const double span = t_new - t_old;
            const double w = span > 0.0 ? std::clamp((tau - t_old) / span, 0.0, 1.0) : 1.0;
            std::vector<double> snap(mu_new.size());
            for (std::size_t c = 0; c < snap.size(); ++c)
                snap[c] = (1.0 - w) * mu_old[c] + w * mu_new[c];
            flow.times.push_back(tau);
            flow.densities.push_back(std::move(snap));
            flow.leak.push_back((1.0 - w) * leak_old + w * leak_new);
            flow.floored.push_back((1.0 - w) * floored_old + w * floored_new);
            ++next_out;
        }
    };

    emit_outputs_up_to(0.0, mu, 0.0, 0.0, 0.0, mu, 0.0, 0.0);

    const double vol = grid.cell_volume();
    while (t < horizon - 1e-14 && next_out < output_times.size()) {
        if (!field.autonomous) fill_cache(field, grid, t, &cc);
        const double dt_diff = h * h / (2.0 * d * cc.max_a_norm + kEps0);
        const double dt_adv = h / (cc.max_b_norm + kEps0);
        double dt = options.cfl_safety * std::min(dt_diff, dt_adv);
        if (!(dt > 0.0) || dt < 1e-15 * std::max(horizon, 1.0))
            throw CflBreakdownError("solve_cauchy: dt=" + std::to_string(dt));
        dt = std::min(dt, horizon - t);

        double out1, out2;
        if (grid.dim == 1) {
            out1 = apply_rhs_1d(grid, cc, mu, &k1, &flux_a, &work);
        } else {
            out1 = apply_rhs_2d(grid, cc, mu, &k1, &flux_a, &flux_b, &work);
        }
        mu_stage.resize(mu.size());
        for (std::size_t c = 0; c < mu.size(); ++c) mu_stage[c] = mu[c] + dt * k1[c];
        if (!field.autonomous) fill_cache(field, grid, t + dt, &cc);
        if (grid.dim == 1) {
            out2 = apply_rhs_1d(grid, cc, mu_stage, &k2, &flux_a, &work);
        } else {
            out2 = apply_rhs_2d(grid, cc, mu_stage, &k2, &flux_a, &flux_b, &work);
        }

        const double t_old = t;
        const bool output_in_step =
            next_out < output_times.size() && output_times[next_out] <= t + dt + 1e-12;
        if (output_in_step) mu_old = mu;
        const double leak_old = leak_total;
        const double floored_old = floored_total;

        double neg_mass = 0.0;
        for (std::size_t c = 0; c < mu.size(); ++c) {
            double v = mu[c] + 0.5 * dt * (k1[c] + k2[c]);
            if (v < 0.0) {
                neg_mass += -v * vol;
                v = 0.0;
            }
            mu[c] = v;
        }
        if (neg_mass > options.floor_tolerance)
            throw NegativeDensityExcessError("solve_cauchy: floored " + std::to_string(neg_mass) +
                                             " in one step");
        floored_total += neg_mass;
        leak_total += 0.5 * dt * (out1 + out2);
        t += dt;

        if (grid.boundary == BoundaryPolicy::kReflecting) {
            const double m = grid_mass(grid, mu);
            if (std::abs(m - floored_total - 1.0) > options.mass_tolerance)
                throw MassLossError("solve_cauchy: mass " + std::to_string(m) + " at t=" +
                                    std::to_string(t));
        }
        emit_outputs_up_to(t, mu, leak_total, floored_total, t_old, mu_old, leak_old,
                           floored_old);
    }
    // Horizon reached within round-off: emit any trailing outputs.
    emit_outputs_up_to(horizon + 1e-9, mu, leak_total, floored_total, t, mu, leak_total,
                       floored_total);
    if (flow.times.size() != output_times.size())
        throw FpkError("solve_cauchy: not all outputs emitted");
    return flow;
}

// ---------------------------------------------------------------------------
// weak residual and flow integrals

WeakResidualReport weak_residual(const MarginalFlow& flow, const CoefficientField& field,
                                 const std::vector<TestFunction>& tests) {
    const Grid& grid = flow.grid;
    const double h = grid.spacing();
    const double vol = grid.cell_volume();
    const int nc = grid.total_cells();
    WeakResidualReport report;

    for (const TestFunction& phi : tests) {
        if (phi.support_reach() > grid.r_dom - 2.0 * h)
            throw SupportEscapeError("weak_residual: " + phi.name + " reaches boundary");

        std::vector<double> phi_c(static_cast<std::size_t>(nc));
        std::vector<double> lphi_c(static_cast<std::size_t>(nc));
        for (int c = 0; c < nc; ++c) {
            const Vec x = grid.cell_center(c);
            phi_c[static_cast<std::size_t>(c)] = phi.value(x);
            const Mat a = field.eval_A(0.0, x);
            const Vec b = field.eval_b(0.0, x);
            lphi_c[static_cast<std::size_t>(c)] =
                (a * phi.hessian(x)).trace() + b.dot(phi.gradient(x));
        }

        std::vector<double> m(flow.times.size()), s(flow.times.size());
        for (std::size_t k = 0; k < flow.times.size(); ++k) {
            double mk = 0.0, sk = 0.0;
            const std::vector<double>& mu = flow.densities[k];
            if (!field.autonomous) {
                for (int c = 0; c < nc; ++c) {
                    const Vec x = grid.cell_center(c);
                    const Mat a = field.eval_A(flow.times[k], x);
                    const Vec b = field.eval_b(flow.times[k], x);
                    lphi_c[static_cast<std::size_t>(c)] =
                        (a * phi.hessian(x)).trace() + b.dot(phi.gradient(x));
                }
            }
            for (int c = 0; c < nc; ++c) {
                mk += phi_c[static_cast<std::size_t>(c)] * mu[static_cast<std::size_t>(c)];
                sk += lphi_c[static_cast<std::size_t>(c)] * mu[static_cast<std::size_t>(c)];
            }
            m[k] = mk * vol;
            s[k] = sk * vol;
        }

        double integral = 0.0;
        for (std::size_t k = 0; k < flow.times.size(); ++k) {
            if (k > 0)
                integral += 0.5 * (flow.times[k] - flow.times[k - 1]) * (s[k] + s[k - 1]);
            WeakResidualEntry e;
            e.test_name = phi.name;
            e.time = flow.times[k];
            e.residual = m[k] - m[0] - integral;
            report.max_abs = std::max(report.max_abs, std::abs(e.residual));
            report.entries.push_back(std::move(e));
        }
    }
    return report;
}

double flow_integral(const MarginalFlow& flow,
                     const std::function<double(double, const Vec&)>& integrand) {
    const Grid& grid = flow.grid;
    const double vol = grid.cell_volume();
    const int nc = grid.total_cells();
    std::vector<double> slice(flow.times.size());
    for (std::size_t k = 0; k < flow.times.size(); ++k) {
        double sk = 0.0;
        for (int c = 0; c < nc; ++c) {
            const double mu = flow.densities[k][static_cast<std::size_t>(c)];
            if (mu == 0.0) continue;
            const double v = integrand(flow.times[k], grid.cell_center(c));
            require_finite(v, "flow_integral integrand");
            sk += v * mu;
        }
        slice[k] = sk * vol;
    }
    double total = 0.0;
    for (std::size_t k = 1; k < slice.size(); ++k)
        total += 0.5 * (flow.times[k] - flow.times[k - 1]) * (slice[k] + slice[k - 1]);
    return total;
}

double flow_integral_refined(const MarginalFlow& flow,
                             const std::function<double(double, const Vec&)>& integrand) {
    const Grid& grid = flow.grid;
    const double vol = grid.cell_volume();
    const double q = grid.spacing() / 4.0;
    const int nc = grid.total_cells();
    std::vector<double> slice(flow.times.size());
    for (std::size_t k = 0; k < flow.times.size(); ++k) {
        double sk = 0.0;
        for (int c = 0; c < nc; ++c) {
            const double mu = flow.densities[k][static_cast<std::size_t>(c)];
            if (mu == 0.0) continue;
            const Vec x = grid.cell_center(c);
            double cell_avg = 0.0;
            if (grid.dim == 1) {
                Vec y = x;
                y(0) = x(0) - q;
                cell_avg += integrand(flow.times[k], y);
                y(0) = x(0) + q;
                cell_avg += integrand(flow.times[k], y);
                cell_avg *= 0.5;
            } else {
                Vec y = x;
                for (int sx = -1; sx <= 1; sx += 2)
                    for (int sy = -1; sy <= 1; sy += 2) {
                        y(0) = x(0) + sx * q;
                        y(1) = x(1) + sy * q;
                        cell_avg += integrand(flow.times[k], y);
                    }
                cell_avg *= 0.25;
            }
            sk += cell_avg * mu;
        }
        slice[k] = sk * vol;
    }
    double total = 0.0;
    for (std::size_t k = 1; k < slice.size(); ++k)
        total += 0.5 * (flow.times[k] - flow.times[k - 1]) * (slice[k] + slice[k - 1]);
    return total;
}

// ---------------------------------------------------------------------------
// analytic oracles and grid densities

std::vector<double> gaussian_density_on_grid(const Grid& grid, const Vec& mean, double var) {
    const int nc = grid.total_cells();
    std::vector<double> out(static_cast<std::size_t>(nc));
    for (int c = 0; c < nc; ++c)
        out[static_cast<std::size_t>(c)] = gaussian_density(grid.cell_center(c), mean, var);
    return out;
}

std::vector<double> delta_density_on_grid(const Grid& grid, const Vec& x0) {
    const double h = grid.spacing();
    std::vector<double> out = gaussian_density_on_grid(grid, x0, 4.0 * h * h);
    // Renormalize: the surrogate is narrow, so midpoint sampling needs it.
    const double m = grid_mass(grid, out);
    for (double& v : out) v /= m;
    return out;
}

MarginalFlow analytic_flow(const std::string& name, const std::map<std::string, double>& params,
                           const Grid& grid, const std::vector<double>& times) {
    auto get = [&](const std::string& key, double fallback) {
        auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    };
    MarginalFlow flow;
    flow.grid = grid;
    flow.times = times;
    const double m0 = get("m0", 0.0);
    const double v0 = get("v0", 1.0);
    for (double t : times) {
        double m, v;
        if (name == "heat-gaussian") {
            m = m0;
            v = v0 + 2.0 * t;
        } else if (name == "ou-gaussian") {
            m = m0 * std::exp(-t);
            v = 1.0 + (v0 - 1.0) * std::exp(-2.0 * t);
        } else {
            throw UnknownOracleError("analytic_flow: " + name);
        }
        Vec mean = Vec::Constant(grid.dim, m);
        flow.densities.push_back(gaussian_density_on_grid(grid, mean, v));
        flow.leak.push_back(0.0);
        flow.floored.push_back(0.0);
    }
    return flow;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_flow(const MarginalFlow& flow, const std::string& directory) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) throw IoFailure("save_flow: cannot create " + directory);

    nlohmann::json header;
    header["schema_version"] = 1;
    header["grid"] = {{"dim", flow.grid.dim},
                      {"r_dom", flow.grid.r_dom},
                      {"n_cells", flow.grid.n_cells},
                      {"boundary", to_string(flow.grid.boundary)}};
    header["times"] = flow.times;
    header["leak"] = flow.leak;
    header["floored"] = flow.floored;
    {
        std::ofstream out(fs::path(directory) / "header.json");
        if (!out) throw IoFailure("save_flow: header.json");
        out << header.dump(2) << "\n";
    }
    for (std::size_t k = 0; k < flow.densities.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "density_%05zu.csv", k);
        std::ofstream out(fs::path(directory) / name);
        if (!out) throw IoFailure(std::string("save_flow: ") + name);
        const int n = flow.grid.n_cells;
        const int rows = flow.grid.dim == 1 ? 1 : n;
        const int cols = flow.grid.dim == 1 ? n : n;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                if (c) out << ',';
                out << format_double(flow.densities[k][static_cast<std::size_t>(r) * cols + c]);
            }
            out << '\n';
        }
    }
}

MarginalFlow load_flow(const std::string& directory) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(directory) / "header.json");
    if (!in) throw IoFailure("load_flow: header.json missing in " + directory);
    nlohmann::json header = nlohmann::json::parse(in);

    MarginalFlow flow;
    flow.grid.dim = header.at("grid").at("dim").get<int>();
    flow.grid.r_dom = header.at("grid").at("r_dom").get<double>();
    flow.grid.n_cells = header.at("grid").at("n_cells").get<int>();
    flow.grid.boundary = boundary_from_string(header.at("grid").at("boundary").get<std::string>());
    flow.times = header.at("times").get<std::vector<double>>();
    flow.leak = header.at("leak").get<std::vector<double>>();
    flow.floored = header.at("floored").get<std::vector<double>>();

    for (std::size_t k = 0; k < flow.times.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "density_%05zu.csv", k);
        std::ifstream din(fs::path(directory) / name);
        if (!din) throw IoFailure(std::string("load_flow: missing ") + name);
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(flow.grid.total_cells()));
        std::string line;
        while (std::getline(din, line)) {
            std::stringstream ss(line);
            std::string tok;
            while (std::getline(ss, tok, ',')) values.push_back(std::stod(tok));
        }
        if (static_cast<int>(values.size()) != flow.grid.total_cells())
            throw IoFailure(std::string("load_flow: bad cell count in ") + name);
        flow.densities.push_back(std::move(values));
    }
    return flow;
}

}  // namespace fpklab
