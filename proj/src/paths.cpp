#include "fpklab/paths.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

#include <Eigen/Eigenvalues>

namespace fpklab {

// ---------------------------------------------------------------------------
// initial laws

int InitialLaw::dim() const {
    switch (kind) {
        case Kind::kGaussian: return static_cast<int>(mean.size());
        case Kind::kDelta: return static_cast<int>(point.size());
        case Kind::kGridDensity: return grid.dim;
    }
    return 1;
}

namespace {
std::vector<double> cumulative_masses(const Grid& grid, const std::vector<double>& density) {
    std::vector<double> cum(density.size());
    double acc = 0.0;
    const double vol = grid.cell_volume();
    for (std::size_t c = 0; c < density.size(); ++c) {
        acc += density[c] * vol;
        cum[c] = acc;
    }
    return cum;
}
}  // namespace

Vec InitialLaw::sample(PhiloxStream& stream) const {
    switch (kind) {
        case Kind::kGaussian: {
            Vec x(mean.size());
            const double sd = std::sqrt(var);
            for (int i = 0; i < mean.size(); ++i) x(i) = mean(i) + sd * stream.normal();
            return x;
        }
        case Kind::kDelta:
            return point;
        case Kind::kGridDensity: {
            static thread_local std::vector<double> cum_cache;
            static thread_local const std::vector<double>* cached_for = nullptr;
            if (cached_for != &density) {
                cum_cache = cumulative_masses(grid, density);
                cached_for = &density;
            }
            const double total = cum_cache.back();
            const double u = stream.uniform() * total;
            const auto it = std::lower_bound(cum_cache.begin(), cum_cache.end(), u);
            const int c = static_cast<int>(std::distance(cum_cache.begin(), it));
            const double h = grid.spacing();
            Vec x = grid.cell_center(std::min(c, grid.total_cells() - 1));
            for (int i = 0; i < x.size(); ++i) x(i) += (stream.uniform() - 0.5) * h;
            return x;
        }
    }
    throw FpkError("InitialLaw::sample: bad kind");
}

double InitialLaw::cdf(double x) const {
    switch (kind) {
        case Kind::kGaussian:
            return normal_cdf((x - mean(0)) / std::sqrt(var));
        case Kind::kDelta:
            return x >= point(0) ? 1.0 : 0.0;
        case Kind::kGridDensity: {
            const double h = grid.spacing();
            const double lo = -grid.r_dom;
            if (x <= lo) return 0.0;
            const double vol = grid.cell_volume();
            double acc = 0.0, total = 0.0;
            for (int c = 0; c < grid.total_cells(); ++c) {
                const double mass = density[static_cast<std::size_t>(c)] * vol;
                total += mass;
                const double left = lo + c * h;
                if (x >= left + h)
                    acc += mass;
                else if (x > left)
                    acc += mass * (x - left) / h;
            }
            return total > 0.0 ? acc / total : 0.0;
        }
    }
    throw FpkError("InitialLaw::cdf: bad kind");
}

double InitialLaw::expectation(const std::function<double(const Vec&)>& f) const {
    switch (kind) {
        case Kind::kDelta:
            return f(point);
        case Kind::kGridDensity: {
            double acc = 0.0;
            const double vol = grid.cell_volume();
            for (int c = 0; c < grid.total_cells(); ++c)
                acc += f(grid.cell_center(c)) * density[static_cast<std::size_t>(c)] * vol;
            return acc;
        }
        case Kind::kGaussian: {
            const double sd = std::sqrt(var);
            const int d = static_cast<int>(mean.size());
            if (d == 1) {
                const int n = 4096;
                const double lo = mean(0) - 8.0 * sd, hi = mean(0) + 8.0 * sd;
                const double h = (hi - lo) / n;
                double acc = 0.0;
                Vec x(1);
                for (int i = 0; i < n; ++i) {
                    x(0) = lo + (i + 0.5) * h;
                    acc += f(x) * gaussian_density(x, mean, var) * h;
                }
                return acc;
            }
            const int n = 384;
            const double lo0 = mean(0) - 8.0 * sd, lo1 = mean(1) - 8.0 * sd;
            const double h = 16.0 * sd / n;
            double acc = 0.0;
            Vec x(2);
            for (int i = 0; i < n; ++i) {
                x(0) = lo0 + (i + 0.5) * h;
                for (int j = 0; j < n; ++j) {
                    x(1) = lo1 + (j + 0.5) * h;
                    acc += f(x) * gaussian_density(x, mean, var) * h * h;
                }
            }
            return acc;
        }
    }
    throw FpkError("InitialLaw::expectation: bad kind");
}

InitialLaw gaussian_law(const Vec& mean, double var) {
    if (var <= 0.0) throw BadParamsError("gaussian_law: var <= 0");
    InitialLaw nu;
    nu.kind = InitialLaw::Kind::kGaussian;
    nu.mean = mean;
    nu.var = var;
    return nu;
}

InitialLaw delta_law(const Vec& point) {
    InitialLaw nu;
    nu.kind = InitialLaw::Kind::kDelta;
    nu.point = point;
    return nu;
}

InitialLaw grid_law(const Grid& grid, std::vector<double> density) {
    grid.validate();
    if (static_cast<int>(density.size()) != grid.total_cells())
        throw BadParamsError("grid_law: density size mismatch");
    InitialLaw nu;
    nu.kind = InitialLaw::Kind::kGridDensity;
    nu.grid = grid;
    nu.density = std::move(density);
    return nu;
}

// ---------------------------------------------------------------------------
// ensemble

double PathEnsemble::state1(int path, std::size_t node) const {
    return states[(static_cast<std::size_t>(path) * n_nodes() + node) * dim];
}

Eigen::Map<const Vec> PathEnsemble::state(int path, std::size_t node) const {
    return Eigen::Map<const Vec>(
        states.data() + (static_cast<std::size_t>(path) * n_nodes() + node) * dim, dim);
}

std::size_t PathEnsemble::node_at(double t) const {
    const double sdt = stored_dt();
    const double k = t / sdt;
    const long ki = std::lround(k);
    if (ki < 0 || ki >= static_cast<long>(n_nodes()) ||
        std::abs(k - static_cast<double>(ki)) > 1e-6)
        throw TimeNotCoveredError("ensemble node_at t=" + std::to_string(t));
    return static_cast<std::size_t>(ki);
}

Mat sqrt_diffusion(const Mat& a) {
    const double scale = std::max(a.cwiseAbs().maxCoeff(), 1.0);
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw NotSymmetricError("sqrt_diffusion");
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    Vec lam = es.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) lam(i) = std::max(lam(i), 0.0) * 2.0;
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

PathEnsemble simulate(const CoefficientField& field, const InitialLaw& nu, int n_paths, double dt,
                      double horizon, std::uint64_t seed, const SimulateOptions& options) {
    if (n_paths < 1) throw BadParamsError("simulate: n_paths < 1");
    if (!(dt > 0.0) || dt > 1e-2 + 1e-15) throw BadParamsError("simulate: need 0 < dt <= 1e-2");
    if (field.dim != nu.dim()) throw BadParamsError("simulate: field/nu dim mismatch");
    const long steps = std::lround(horizon / dt);
    if (steps < 1 || std::abs(steps * dt - horizon) > 1e-9 * std::max(1.0, horizon))
        throw BadParamsError("simulate: horizon must be a positive multiple of dt");
    const int stride = std::max(1, options.record_stride);
    if (steps % stride != 0) throw BadParamsError("simulate: record_stride must divide step count");

    PathEnsemble ens;
    ens.n_paths = n_paths;
    ens.dim = field.dim;
    ens.dt = dt;
    ens.record_stride = stride;
    ens.seed = seed;
    const std::size_t nodes = static_cast<std::size_t>(steps / stride) + 1;
    ens.times.resize(nodes);
    for (std::size_t k = 0; k < nodes; ++k) ens.times[k] = static_cast<double>(k) * stride * dt;
    ens.states.assign(static_cast<std::size_t>(n_paths) * nodes * field.dim, 0.0);

    const int d = field.dim;
    const double sq_dt = std::sqrt(dt);
    const bool scalar_fast = d == 1 && field.constant_diffusion && field.eval_b1;

    Mat sigma_const;
    double sigma1 = 0.0;
    if (field.constant_diffusion) {
        sigma_const = sqrt_diffusion(field.eval_A(0.0, Vec::Zero(d)));
        if (d == 1) sigma1 = sigma_const(0, 0);
    }

    std::vector<long> blowups_per_chunk;
    auto run_chunk = [&](int p0, int p1, long* blowups) {
        Vec x(d), b(d), xi(d);
        Mat sig;
        for (int p = p0; p < p1; ++p) {
            PhiloxStream init_stream(seed, static_cast<std::uint64_t>(p), -1);
            PhiloxStream noise(seed, static_cast<std::uint64_t>(p), 0);
            double* out = ens.states.data() + static_cast<std::size_t>(p) * nodes * d;
            bool blown = false;
            if (scalar_fast) {
                double xv = nu.sample(init_stream)(0);
                out[0] = xv;
                std::size_t node = 1;
                const auto& drift = field.eval_b1;
                for (long k = 0; k < steps; ++k) {
                    if (!blown) {
                        const double t = static_cast<double>(k) * dt;
                        double next = xv + drift(t, xv) * dt + sigma1 * sq_dt * noise.normal();
                        if (!std::isfinite(next) || std::abs(next) > options.blowup_radius) {
                            blown = true;
                            ++*blowups;
                        } else {
                            xv = next;
                        }
                    } else {
                        noise.normal();  // keep the stream advancing deterministically
                    }
                    if ((k + 1) % stride == 0) out[node++] = xv;
                }
            } else {
                x = nu.sample(init_stream);
                std::memcpy(out, x.data(), sizeof(double) * static_cast<std::size_t>(d));
                std::size_t node = 1;
                for (long k = 0; k < steps; ++k) {
                    const double t = static_cast<double>(k) * dt;
                    for (int i = 0; i < d; ++i) xi(i) = noise.normal();
                    if (!blown) {
                        b = field.eval_b(t, x);
                        if (field.constant_diffusion) {
                            x += b * dt + sq_dt * (sigma_const * xi);
                        } else {
                            sig = sqrt_diffusion(field.eval_A(t, x));
                            x += b * dt + sq_dt * (sig * xi);
                        }
                        if (!x.allFinite() || x.norm() > options.blowup_radius) {
                            blown = true;
                            ++*blowups;
                            // freeze at the last recorded node value
                            x = Eigen::Map<const Vec>(out + (node - 1) * d, d);
                        }
                    }
                    if ((k + 1) % stride == 0) {
                        std::memcpy(out + node * d, x.data(),
                                    sizeof(double) * static_cast<std::size_t>(d));
                        ++node;
                    }
                }
            }
        }
    };

    int n_threads = options.n_threads > 0
                        ? options.n_threads
                        : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::clamp(n_threads, 1, 16);
    if (n_threads == 1 || n_paths < 256) {
        long blow = 0;
        run_chunk(0, n_paths, &blow);
        ens.blowup_count = blow;
    } else {
        std::vector<std::thread> pool;
        blowups_per_chunk.assign(static_cast<std::size_t>(n_threads), 0);
        const int chunk = (n_paths + n_threads - 1) / n_threads;
        for (int tix = 0; tix < n_threads; ++tix) {
            const int p0 = tix * chunk;
            const int p1 = std::min(n_paths, p0 + chunk);
            if (p0 >= p1) break;
            pool.emplace_back(run_chunk, p0, p1, &blowups_per_chunk[static_cast<std::size_t>(tix)]);
        }
        for (auto& th : pool) th.join();
        for (long v : blowups_per_chunk) ens.blowup_count += v;
    }

    if (ens.blowup_count >
        static_cast<long>(options.blowup_abort_fraction * static_cast<double>(n_paths)))
        throw NonFiniteError("simulate: " + std::to_string(ens.blowup_count) +
                             " paths blew up out of " + std::to_string(n_paths));
    return ens;
}

// ---------------------------------------------------------------------------
// checks

namespace {

double sample_mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

double sample_stderr(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
    const double var = pairwise_sum(sq) / static_cast<double>(v.size() - 1);
    return std::sqrt(var / static_cast<double>(v.size()));
}

double cdf_left(const InitialLaw& nu, double x) {
    if (nu.kind == InitialLaw::Kind::kDelta) return x > nu.point(0) ? 1.0 : 0.0;
    return nu.cdf(x);
}

// Asymptotic Kolmogorov critical value at level 1e-3 with the usual
// finite-sample correction sqrt(N) -> sqrt(N) + 0.12 + 0.11/sqrt(N).
double ks_critical(double n) {
    const double alpha = 1e-3;
    const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
    const double sn = std::sqrt(n);
    return c / (sn + 0.12 + 0.11 / sn);
}

}  // namespace

CheckReport initial_law_check(const PathEnsemble& ensemble, const InitialLaw& nu) {
    CheckReport report;
    report.n_effective = ensemble.n_paths;
    const double n = static_cast<double>(ensemble.n_paths);
    if (ensemble.dim == 1) {
        report.name = "initial-law-ks";
        std::vector<double> xs(static_cast<std::size_t>(ensemble.n_paths));
        for (int p = 0; p < ensemble.n_paths; ++p) xs[static_cast<std::size_t>(p)] = ensemble.state1(p, 0);
        std::sort(xs.begin(), xs.end());
        double d_stat = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double hi = static_cast<double>(i + 1) / n - nu.cdf(xs[i]);
            const double lo = cdf_left(nu, xs[i]) - static_cast<double>(i) / n;
            d_stat = std::max({d_stat, std::abs(hi), std::abs(lo)});
        }
        report.statistic = d_stat;
        report.bound_or_tol = ks_critical(n);
        report.stderr_est = 1.0 / std::sqrt(n);
        report.sided = "le";
        report.pass = d_stat <= report.bound_or_tol;
        return report;
    }
    report.name = "initial-law-bumps";
    double worst = 0.0;
    for (const TestFunction& f : bump_registry(ensemble.dim)) {
        std::vector<double> vals(static_cast<std::size_t>(ensemble.n_paths));
        for (int p = 0; p < ensemble.n_paths; ++p)
            vals[static_cast<std::size_t>(p)] = f.value(ensemble.state(p, 0));
        const double mean = sample_mean(vals);
        const double se = sample_stderr(vals, mean);
        const double expect = nu.expectation([&f](const Vec& x) { return f.value(x); });
        const double norm = std::abs(mean - expect) / (4.0 * se + 1e-9);
        worst = std::max(worst, norm);
    }
    report.statistic = worst;
    report.bound_or_tol = 1.0;
    report.sided = "le";
    report.pass = worst <= 1.0;
    return report;
}

Vec PathPrefixView::at_time(double t) const {
    const std::size_t node = ensemble->node_at(t);
    if (node > max_node)
        throw NotAdaptedError("g functional requested state at t=" + std::to_string(t));
    return ensemble->state(path, node);
}

std::vector<GFunctional> g_registry(int dim) {
    (void)dim;
    std::vector<GFunctional> gs;
    gs.push_back({"const-1", 1.0, [](const PathPrefixView&) { return 1.0; }});
    gs.push_back({"unit-ball-at-s", 1.0, [](const PathPrefixView& view) {
                      const double t = view.ensemble->times[view.max_node];
                      return view.at_time(t).norm() <= 1.0 ? 1.0 : 0.0;
                  }});
    gs.push_back({"tanh-at-half-s", 1.0, [](const PathPrefixView& view) {
                      // reads the stored node at or below s/2
                      const double s = view.ensemble->times[view.max_node];
                      const double sdt = view.ensemble->stored_dt();
                      const double t_half =
                          std::floor(0.5 * s / sdt) * sdt;
                      return 0.5 * (1.0 + std::tanh(view.at_time(t_half)(0)));
                  }});
    return gs;
}

namespace {

/// Lf with the field's cheap paths when available.
struct OperatorOnBump {
    const CoefficientField* field;
    const TestFunction* f;
    bool scalar_fast;
    double a_const = 0.0;
    Mat a_mat;

    OperatorOnBump(const CoefficientField& fld, const TestFunction& fn)
        : field(&fld), f(&fn) {
        scalar_fast = fld.dim == 1 && fld.constant_diffusion && fld.eval_b1;
        if (fld.constant_diffusion) {
            a_mat = fld.eval_A(0.0, Vec::Zero(fld.dim));
            if (fld.dim == 1) a_const = a_mat(0, 0);
        }
    }

    double operator()(double t, const Vec& x) const {
        if (scalar_fast) {
            const double xv = x(0);
            return a_const * f->hessian(x)(0, 0) + field->eval_b1(t, xv) * f->gradient(x)(0);
        }
        const Mat a = field->constant_diffusion ? a_mat : field->eval_A(t, x);
        return (a * f->hessian(x)).trace() + field->eval_b(t, x).dot(f->gradient(x));
    }
};

/// L applied to Lf at a point, with Lf differentiated by central
/// differences. Second-order quantity feeding the bias allowance only.
double l_of_lf(const CoefficientField& field, const TestFunction& f, const OperatorOnBump& lf,
               const Vec& x) {
    const int d = field.dim;
    const double fd = 1e-4 * f.radius;
    const Mat a = field.eval_A(0.0, x);
    const Vec b = field.eval_b(0.0, x);
    double lap = 0.0, drift = 0.0;
    Vec e = Vec::Zero(d);
    const double center = lf(0.0, x);
    for (int k = 0; k < d; ++k) {
        e.setZero();
        e(k) = fd;
        const double up = lf(0.0, x + e);
        const double dn = lf(0.0, x - e);
        lap += a(k, k) * (up - 2.0 * center + dn) / (fd * fd);
        drift += b(k) * (up - dn) / (2.0 * fd);
    }
    if (d == 2) {
        Vec ex = Vec::Zero(d), ey = Vec::Zero(d);
        ex(0) = fd;
        ey(1) = fd;
        const double pp = lf(0.0, x + ex + ey), pm = lf(0.0, x + ex - ey);
        const double mp = lf(0.0, x - ex + ey), mm = lf(0.0, x - ex - ey);
        lap += 2.0 * a(0, 1) * (pp - pm - mp + mm) / (4.0 * fd * fd);
    }
    return lap + drift;
}

/// Empirical mean of |L(Lf)| along the ensemble between node ks and kt.
/// The leading Euler/Riemann bias of the martingale statistic is
/// (dt/2) int_s^t E[L(Lf)(X_u)] du for autonomous coefficients, so the
/// allowance uses this path-average (a support-wide sup would be attained
/// only where the bump derivatives spike and no mass lives, and would
/// drown the check).
double bias_rate_along_paths(const PathEnsemble& ensemble, const CoefficientField& field,
                             const TestFunction& f, std::size_t ks, std::size_t kt) {
    const OperatorOnBump lf(field, f);
    const int sample_paths = std::min(ensemble.n_paths, 2000);
    const std::size_t step = std::max<std::size_t>(1, (kt - ks) / 64);
    double acc = 0.0;
    for (int p = 0; p < sample_paths; ++p) {
        for (std::size_t k = ks; k < kt; k += step) {
            const Vec x = ensemble.state(p, k);
            if ((x - f.center).norm() >= f.radius) continue;  // L(Lf) = 0 off supp f
            acc += std::abs(l_of_lf(field, f, lf, x));
        }
    }
    const long visited = static_cast<long>(sample_paths) *
                         static_cast<long>((kt - ks + step - 1) / step);
    return visited > 0 ? acc / static_cast<double>(visited) : 0.0;
}

}  // namespace

CheckReport martingale_check(const PathEnsemble& ensemble, const CoefficientField& field,
                             const TestFunction& f, const GFunctional& g, double s, double t) {
    if (!(0.0 <= s && s < t && t <= ensemble.times.back() + 1e-12))
        throw BadParamsError("martingale_check: need 0 <= s < t <= T");
    const std::size_t ks = ensemble.node_at(s);
    const std::size_t kt = ensemble.node_at(t);
    const double sdt = ensemble.stored_dt();
    const OperatorOnBump lf(field, f);

    std::vector<double> vals(static_cast<std::size_t>(ensemble.n_paths));
    Vec x(ensemble.dim);
    for (int p = 0; p < ensemble.n_paths; ++p) {
        const PathPrefixView view{&ensemble, p, ks};
        const double gv = g.eval(view);
        double riemann = 0.0;
        for (std::size_t k = ks; k < kt; ++k)
            riemann += lf(ensemble.times[k], ensemble.state(p, k));
        const double bracket =
            f.value(ensemble.state(p, kt)) - f.value(ensemble.state(p, ks)) - riemann * sdt;
        vals[static_cast<std::size_t>(p)] = bracket * gv;
    }
    const double mean = sample_mean(vals);
    const double se = sample_stderr(vals, mean);
    // leading bias is (dt/2)(t-s) E|L(Lf)|; allow 4x that
    const double allowance =
        2.0 * sdt * (t - s) * bias_rate_along_paths(ensemble, field, f, ks, kt);

    CheckReport report;
    report.name = "martingale(" + f.name + "," + g.name + ",s=" + std::to_string(s) +
                  ",t=" + std::to_string(t) + ")";
    report.statistic = mean;
    report.stderr_est = se;
    report.bound_or_tol = 4.0 * se + allowance;
    report.sided = "two-sided";
    report.pass = std::abs(mean) <= report.bound_or_tol;
    report.n_effective = ensemble.n_paths;
    return report;
}

namespace {

struct Lookup1D {
    double x0 = 0.0;
    double inv_h = 0.0;
    std::vector<double> values;  // zero outside the tabulated range

    double eval(double x) const {
        const double u = (x - x0) * inv_h;
        if (u <= 0.0 || u >= static_cast<double>(values.size() - 1)) return 0.0;
        const std::size_t i = static_cast<std::size_t>(u);
        const double w = u - static_cast<double>(i);
        return (1.0 - w) * values[i] + w * values[i + 1];
    }
};

}  // namespace

std::vector<CheckReport> martingale_suite(const PathEnsemble& ensemble,
                                          const CoefficientField& field,
                                          const std::vector<TestFunction>& fs,
                                          const std::vector<GFunctional>& gs,
                                          const std::vector<MartingaleWindow>& windows,
                                          int n_threads) {
    std::vector<CheckReport> reports;
    const bool fast = ensemble.dim == 1 && field.autonomous;
    if (!fast) {
        for (const MartingaleWindow& w : windows)
            for (const TestFunction& f : fs)
                for (const GFunctional& g : gs)
                    reports.push_back(martingale_check(ensemble, field, f, g, w.s, w.t));
        return reports;
    }

    // Lf lookup tables: Lf vanishes off supp f, so tabulating the support
    // with margin and returning 0 elsewhere is exact at the boundary.
    const std::size_t nf = fs.size();
    std::vector<Lookup1D> tables(nf);
    for (std::size_t fi = 0; fi < nf; ++fi) {
        const TestFunction& f = fs[fi];
        const OperatorOnBump lf(field, f);
        const double lo = f.center(0) - f.radius;
        const double hi = f.center(0) + f.radius;
        const int n = 16384;
        tables[fi].x0 = lo;
        tables[fi].inv_h = static_cast<double>(n) / (hi - lo);
        tables[fi].values.resize(static_cast<std::size_t>(n) + 1);
        Vec x(1);
        for (int i = 0; i <= n; ++i) {
            x(0) = lo + (hi - lo) * i / n;
            tables[fi].values[static_cast<std::size_t>(i)] = lf(0.0, x);
        }
    }

    const int np = ensemble.n_paths;
    int threads = n_threads > 0 ? n_threads
                                : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, 16);

    for (const MartingaleWindow& w : windows) {
        const std::size_t ks = ensemble.node_at(w.s);
        const std::size_t kt = ensemble.node_at(w.t);
        const double sdt = ensemble.stored_dt();
        std::vector<double> allowances(nf);
        for (std::size_t fi = 0; fi < nf; ++fi)
            allowances[fi] = 2.0 * sdt * (w.t - w.s) *
                             bias_rate_along_paths(ensemble, field, fs[fi], ks, kt);

        std::vector<double> brackets(static_cast<std::size_t>(np) * nf);
        auto sweep = [&](int p0, int p1) {
            std::vector<double> riemann(nf);
            Vec xv(1);
            for (int p = p0; p < p1; ++p) {
                std::fill(riemann.begin(), riemann.end(), 0.0);
                const double* row =
                    ensemble.states.data() + static_cast<std::size_t>(p) * ensemble.n_nodes();
                for (std::size_t k = ks; k < kt; ++k) {
                    const double x = row[k];
                    for (std::size_t fi = 0; fi < nf; ++fi)
                        riemann[fi] += tables[fi].eval(x);
                }
                xv(0) = row[kt];
                for (std::size_t fi = 0; fi < nf; ++fi) {
                    const double f_t = fs[fi].value(xv);
                    Vec xs(1);
                    xs(0) = row[ks];
                    brackets[static_cast<std::size_t>(p) * nf + fi] =
                        f_t - fs[fi].value(xs) - riemann[fi] * sdt;
                }
            }
        };
        if (threads == 1 || np < 1024) {
            sweep(0, np);
        } else {
            std::vector<std::thread> pool;
            const int chunk = (np + threads - 1) / threads;
            for (int tix = 0; tix < threads; ++tix) {
                const int p0 = tix * chunk, p1 = std::min(np, p0 + chunk);
                if (p0 >= p1) break;
                pool.emplace_back(sweep, p0, p1);
            }
            for (auto& th : pool) th.join();
        }

        for (const GFunctional& g : gs) {
            std::vector<double> gv(static_cast<std::size_t>(np));
            for (int p = 0; p < np; ++p)
                gv[static_cast<std::size_t>(p)] = g.eval(PathPrefixView{&ensemble, p, ks});
            for (std::size_t fi = 0; fi < nf; ++fi) {
                std::vector<double> vals(static_cast<std::size_t>(np));
                for (int p = 0; p < np; ++p)
                    vals[static_cast<std::size_t>(p)] =
                        brackets[static_cast<std::size_t>(p) * nf + fi] *
                        gv[static_cast<std::size_t>(p)];
                const double mean = sample_mean(vals);
                const double se = sample_stderr(vals, mean);
                CheckReport report;
                report.name = "martingale(" + fs[fi].name + "," + g.name +
                              ",s=" + std::to_string(w.s) + ",t=" + std::to_string(w.t) + ")";
                report.statistic = mean;
                report.stderr_est = se;
                report.bound_or_tol = 4.0 * se + allowances[fi];
                report.sided = "two-sided";
                report.pass = std::abs(mean) <= report.bound_or_tol;
                report.n_effective = np;
                reports.push_back(std::move(report));
            }
        }
    }
    return reports;
}

double wasserstein1_grid(std::vector<double> samples, const Grid& grid,
                         const std::vector<double>& density) {
    if (samples.empty()) throw BadParamsError("wasserstein1_grid: no samples");
    std::sort(samples.begin(), samples.end());
    std::vector<double> cum = cumulative_masses(grid, density);
    const double total = cum.back();
    if (total <= 0.0) throw BadParamsError("wasserstein1_grid: empty density");
    const double h = grid.spacing();
    const double lo = -grid.r_dom;
    const double n = static_cast<double>(samples.size());
    // quantile coupling against the piecewise-linear inverse CDF
    double acc = 0.0;
    std::size_t cell = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double u = (static_cast<double>(i) + 0.5) / n * total;
        while (cell + 1 < cum.size() && cum[cell] < u) ++cell;
        const double prev = cell == 0 ? 0.0 : cum[cell - 1];
        const double mass = cum[cell] - prev;
        const double frac = mass > 0.0 ? (u - prev) / mass : 0.5;
        const double q = lo + (static_cast<double>(cell) + frac) * h;
        acc += std::abs(samples[i] - q);
    }
    return acc / n;
}

CheckReport marginal_check(const PathEnsemble& ensemble, const MarginalFlow& flow, double t,
                           double tolerance) {
    const std::size_t node = ensemble.node_at(t);
    const std::vector<double> mu = flow.density_at(t);
    const double leak = flow.leak_at(t);
    CheckReport report;
    report.n_effective = ensemble.n_paths;
    if (ensemble.dim == 1) {
        report.name = "marginal-w1(t=" + std::to_string(t) + ")";
        std::vector<double> xs(static_cast<std::size_t>(ensemble.n_paths));
        for (int p = 0; p < ensemble.n_paths; ++p)
            xs[static_cast<std::size_t>(p)] = ensemble.state1(p, node);
        report.statistic = wasserstein1_grid(std::move(xs), flow.grid, mu);
        report.stderr_est = 1.0 / std::sqrt(static_cast<double>(ensemble.n_paths));
        report.bound_or_tol = tolerance + leak;
        report.sided = "le";
        report.pass = report.statistic <= report.bound_or_tol;
        return report;
    }
    report.name = "marginal-bumps(t=" + std::to_string(t) + ")";
    const double vol = flow.grid.cell_volume();
    double worst = 0.0;
    for (const TestFunction& f : bump_registry(ensemble.dim)) {
        std::vector<double> vals(static_cast<std::size_t>(ensemble.n_paths));
        for (int p = 0; p < ensemble.n_paths; ++p)
            vals[static_cast<std::size_t>(p)] = f.value(ensemble.state(p, node));
        const double mean = sample_mean(vals);
        const double se = sample_stderr(vals, mean);
        double expect = 0.0;
        for (int c = 0; c < flow.grid.total_cells(); ++c)
            expect += f.value(flow.grid.cell_center(c)) * mu[static_cast<std::size_t>(c)];
        expect *= vol;
        const double excess = std::abs(mean - expect) - 4.0 * se;
        worst = std::max(worst, excess);
    }
    report.statistic = std::max(worst, 0.0);
    report.bound_or_tol = tolerance + leak;
    report.sided = "le";
    report.pass = report.statistic <= report.bound_or_tol;
    return report;
}

CheckReport doob_empirical(const PathEnsemble& ensemble, const LyapunovSpec& lyap, double q,
                           double bound) {
    if (q <= 0.0) throw BadParamsError("doob_empirical: q <= 0");
    long count = 0;
    const bool radial_monotone = lyap.family == "log" || lyap.family == "loglog";
    if (ensemble.dim == 1 && radial_monotone) {
        // V increases with |x|: the per-path sup reduces to max |x|
        for (int p = 0; p < ensemble.n_paths; ++p) {
            double worst = 0.0;
            const double* row = ensemble.states.data() +
                                static_cast<std::size_t>(p) * ensemble.n_nodes();
            for (std::size_t k = 0; k < ensemble.n_nodes(); ++k)
                worst = std::max(worst, std::abs(row[k]));
            Vec x(1);
            x(0) = worst;
            if (lyap.value(x) >= q) ++count;
        }
    } else {
        for (int p = 0; p < ensemble.n_paths; ++p) {
            double vmax = 0.0;
            for (std::size_t k = 0; k < ensemble.n_nodes(); ++k)
                vmax = std::max(vmax, lyap.value(ensemble.state(p, k)));
            if (vmax >= q) ++count;
        }
    }
    const double n = static_cast<double>(ensemble.n_paths);
    const double p_hat = static_cast<double>(count) / n;
    const double se = std::sqrt(std::max(p_hat * (1.0 - p_hat), 0.0) / n);

    CheckReport report;
    report.name = "doob(q=" + std::to_string(q) + ")";
    report.statistic = p_hat;
    report.stderr_est = se;
    report.bound_or_tol = bound + 4.0 * se;
    report.sided = "le";
    report.pass = p_hat <= report.bound_or_tol;
    report.n_effective = ensemble.n_paths;
    return report;
}

CheckReport lemma_ek1_check(const PathEnsemble& ensemble, const MarginalFlow& flow,
                            const TestFunction& f, const GFunctional& g, double t) {
    const std::size_t kt = ensemble.node_at(t);
    std::vector<double> vals(static_cast<std::size_t>(ensemble.n_paths));
    for (int p = 0; p < ensemble.n_paths; ++p) {
        const PathPrefixView view{&ensemble, p, kt};
        vals[static_cast<std::size_t>(p)] =
            f.value(ensemble.state(p, kt)) * std::max(0.0, g.eval(view));
    }
    const double mean = sample_mean(vals);
    const double se = sample_stderr(vals, mean);

    const std::vector<double> mu = flow.density_at(t);
    double flow_f = 0.0;
    for (int c = 0; c < flow.grid.total_cells(); ++c)
        flow_f += f.value(flow.grid.cell_center(c)) * mu[static_cast<std::size_t>(c)];
    flow_f *= flow.grid.cell_volume();

    // Error budget beyond Monte Carlo bars: the empirical marginal differs
    // from the flow marginal, which moves E f by at most Lip(f) * W1, and
    // absorbed mass can only lower the flow side by leak * sup f.
    double lip = 0.0, sup_f = 0.0;
    for (int i = 0; i <= 200; ++i) {
        Vec x = f.center;
        x(0) += f.radius * (2.0 * i / 200.0 - 1.0);
        lip = std::max(lip, f.gradient(x).norm());
        sup_f = std::max(sup_f, f.value(x));
    }
    double marginal_gap = 0.0;
    if (ensemble.dim == 1) {
        std::vector<double> xs(static_cast<std::size_t>(ensemble.n_paths));
        for (int p = 0; p < ensemble.n_paths; ++p)
            xs[static_cast<std::size_t>(p)] = ensemble.state1(p, kt);
        marginal_gap = wasserstein1_grid(std::move(xs), flow.grid, mu);
    }

    CheckReport report;
    report.name = "ek1(" + f.name + "," + g.name + ",t=" + std::to_string(t) + ")";
    report.statistic = mean - g.sup_bound * flow_f;
    report.stderr_est = se;
    report.bound_or_tol =
        4.0 * se + g.sup_bound * (lip * marginal_gap + sup_f * flow.leak_at(t));
    report.sided = "le";
    report.pass = report.statistic <= report.bound_or_tol;
    report.n_effective = ensemble.n_paths;
    return report;
}

// ---------------------------------------------------------------------------
// persistence

void save_ensemble(const PathEnsemble& ensemble, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("save_ensemble: " + path);
    const char magic[8] = {'F', 'P', 'K', 'E', 'N', 'S', '1', '\n'};
    out.write(magic, 8);
    const std::int64_t np = ensemble.n_paths, nn = static_cast<std::int64_t>(ensemble.n_nodes()),
                       d = ensemble.dim, stride = ensemble.record_stride,
                       blow = ensemble.blowup_count;
    const std::uint64_t seed = ensemble.seed;
    out.write(reinterpret_cast<const char*>(&np), 8);
    out.write(reinterpret_cast<const char*>(&nn), 8);
    out.write(reinterpret_cast<const char*>(&d), 8);
    out.write(reinterpret_cast<const char*>(&stride), 8);
    out.write(reinterpret_cast<const char*>(&blow), 8);
    out.write(reinterpret_cast<const char*>(&ensemble.dt), 8);
    out.write(reinterpret_cast<const char*>(&seed), 8);
    out.write(reinterpret_cast<const char*>(ensemble.times.data()),
              static_cast<std::streamsize>(ensemble.times.size() * 8));
    out.write(reinterpret_cast<const char*>(ensemble.states.data()),
              static_cast<std::streamsize>(ensemble.states.size() * 8));
    if (!out.good()) throw IoFailure("save_ensemble: short write to " + path);
}

PathEnsemble load_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("load_ensemble: " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "FPKENS1\n", 8) != 0) throw IoFailure("load_ensemble: bad magic");
    std::int64_t np, nn, d, stride, blow;
    std::uint64_t seed;
    PathEnsemble ens;
    in.read(reinterpret_cast<char*>(&np), 8);
    in.read(reinterpret_cast<char*>(&nn), 8);
    in.read(reinterpret_cast<char*>(&d), 8);
    in.read(reinterpret_cast<char*>(&stride), 8);
    in.read(reinterpret_cast<char*>(&blow), 8);
    in.read(reinterpret_cast<char*>(&ens.dt), 8);
    in.read(reinterpret_cast<char*>(&seed), 8);
    ens.n_paths = static_cast<int>(np);
    ens.dim = static_cast<int>(d);
    ens.record_stride = static_cast<int>(stride);
    ens.blowup_count = blow;
    ens.seed = seed;
    ens.times.resize(static_cast<std::size_t>(nn));
    in.read(reinterpret_cast<char*>(ens.times.data()), static_cast<std::streamsize>(nn * 8));
    ens.states.resize(static_cast<std::size_t>(np) * static_cast<std::size_t>(nn) *
                      static_cast<std::size_t>(d));
    in.read(reinterpret_cast<char*>(ens.states.data()),
            static_cast<std::streamsize>(ens.states.size() * 8));
    if (!in.good()) throw IoFailure("load_ensemble: short read from " + path);
    return ens;
}

}  // namespace fpklab
