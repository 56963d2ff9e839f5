#include "fpklab/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace fpklab {

double LyapunovSpec::value(const Vec& x) const { return profile.value(1.0 + x.squaredNorm()); }

Vec LyapunovSpec::gradient(const Vec& x) const {
    return 2.0 * profile.deriv(1.0 + x.squaredNorm()) * x;
}

Mat LyapunovSpec::hessian(const Vec& x) const {
    const double s = 1.0 + x.squaredNorm();
    const int d = static_cast<int>(x.size());
    Mat h = 2.0 * profile.deriv(s) * Mat::Identity(d, d);
    h += 4.0 * profile.second(s) * (x * x.transpose());
    return h;
}

LyapunovSpec lyapunov_family(const std::string& family, int dim) {
    LyapunovSpec spec;
    spec.dim = dim;
    spec.family = family;
    if (family == "log") {
        spec.profile = SmoothFn{
            [](double s) { return std::log(s); },
            [](double s) { return 1.0 / s; },
            [](double s) { return -1.0 / (s * s); },
        };
    } else if (family == "loglog") {
        spec.profile = SmoothFn{
            [](double s) { return std::log(1.0 + std::log(s)); },
            [](double s) { return 1.0 / (s * (1.0 + std::log(s))); },
            [](double s) {
                const double u = 1.0 + std::log(s);
                return -(u + 1.0) / (s * s * u * u);
            },
        };
    } else {
        throw BadParamsError("lyapunov_family: unknown family " + family);
    }
    return spec;
}

LyapunovSpec lyapunov_custom(SmoothFn profile, int dim) {
    LyapunovSpec spec;
    spec.dim = dim;
    spec.family = "custom";
    spec.profile = std::move(profile);
    return spec;
}

double apply_L(const CoefficientField& field, const LyapunovSpec& lyap, double t, const Vec& x) {
    if (field.dim != lyap.dim) throw BadParamsError("apply_L: dimension mismatch");
    auto [a, b] = eval_field(field, t, x);
    const double out = (a * lyap.hessian(x)).trace() + b.dot(lyap.gradient(x));
    require_finite(out, "apply_L");
    return out;
}

double carre_du_champ(const CoefficientField& field, const LyapunovSpec& lyap, double t,
                      const Vec& x) {
    if (field.dim != lyap.dim) throw BadParamsError("carre_du_champ: dimension mismatch");
    auto [a, b] = eval_field(field, t, x);
    (void)b;
    const Vec g = lyap.gradient(x);
    const double q = g.dot(a * g);
    require_finite(q, "carre_du_champ");
    if (q < -1e-12) throw NegativeFormError("carre_du_champ: " + std::to_string(q));
    return std::max(q, 0.0);
}

// ---------------------------------------------------------------------------
// concave clip

SmoothFn clip_concave(double N) {
    if (!(N >= 2.0)) throw BadParamsError("clip_concave: N must be >= 2");
    // Blend on [N-1, N+1] interpolating value/slope/curvature at both ends:
    // with w = (t-N+1)/2 in [0,1], zeta = N-1 + 2 g(w), g(w) = w - w^3 + w^4/2.
    // g' = (1-w)^2 (1+2w) in [0,1]; g'' = -6w(1-w) <= 0.
    auto value = [N](double t) {
        if (t <= N - 1.0) return t;
        if (t >= N + 1.0) return N;
        const double w = (t - N + 1.0) / 2.0;
        return N - 1.0 + 2.0 * (w - w * w * w + 0.5 * w * w * w * w);
    };
    auto deriv = [N](double t) {
        if (t <= N - 1.0) return 1.0;
        if (t >= N + 1.0) return 0.0;
        const double w = (t - N + 1.0) / 2.0;
        return 1.0 - 3.0 * w * w + 2.0 * w * w * w;
    };
    auto second = [N](double t) {
        if (t <= N - 1.0 || t >= N + 1.0) return 0.0;
        const double w = (t - N + 1.0) / 2.0;
        return -3.0 * w * (1.0 - w);
    };
    return SmoothFn{value, deriv, second};
}

// ---------------------------------------------------------------------------
// theta construction

namespace {

/// Piecewise-linear concave function with cosine-smoothed corners.
/// Knots t_m carry slope changes s_{m-1} -> s_m; each corner is smeared
/// over [t_m - w_m, t_m + w_m] with a continuous second derivative, which
/// keeps the function C^2 and preserves concavity (slopes decrease).
class SmoothedPolyline {
public:
    void add_knot(double t, double slope_after, double half_width) {
        knots_.push_back({t, slope_after, half_width});
    }
    void set_initial_slope(double s) { s0_ = s; }

    double value(double t) const {
        double acc = 0.0;
        double slope = s0_;
        double pos = 0.0;
        for (const Knot& k : knots_) {
            if (t <= k.t - k.w) break;
            // linear stretch up to the corner window
            acc += slope * (std::min(t, k.t - k.w) - pos);
            pos = std::min(t, k.t - k.w);
            if (t <= k.t - k.w) break;
            const double b = std::min(t, k.t + k.w);
            acc += corner_value(k, slope, b);
            pos = b;
            if (t < k.t + k.w) return acc;
            slope = k.slope_after;
        }
        acc += slope * (t - pos);
        return acc;
    }

    double deriv(double t) const {
        double slope = s0_;
        for (const Knot& k : knots_) {
            if (t <= k.t - k.w) return slope;
            if (t < k.t + k.w) {
                const double L = 2.0 * k.w;
                const double u = t - (k.t - k.w);
                const double ds = k.slope_after - slope;
                return slope + ds * (u / L - std::sin(2.0 * M_PI * u / L) / (2.0 * M_PI));
            }
            slope = k.slope_after;
        }
        return slope;
    }

    double second(double t) const {
        double slope = s0_;
        for (const Knot& k : knots_) {
            if (t <= k.t - k.w) return 0.0;
            if (t < k.t + k.w) {
                const double L = 2.0 * k.w;
                const double u = t - (k.t - k.w);
                const double ds = k.slope_after - slope;
                return ds / L * (1.0 - std::cos(2.0 * M_PI * u / L));
            }
            slope = k.slope_after;
        }
        return 0.0;
    }

private:
    struct Knot {
        double t;
        double slope_after;
        double w;
    };

    static double corner_value(const Knot& k, double slope_before, double b) {
        // integral of deriv over [t-w, b] within the window
        const double L = 2.0 * k.w;
        const double u = b - (k.t - k.w);
        const double ds = k.slope_after - slope_before;
        const double c = L / (2.0 * M_PI);
        return slope_before * u +
               ds * (u * u / (2.0 * L) + c * c / L * (std::cos(2.0 * M_PI * u / L) - 1.0));
    }

    double s0_ = 1.0;
    std::vector<Knot> knots_;
};

}  // namespace

ThetaResult make_theta(const std::function<double(double)>& tail_mass, bool v_integrable) {
    constexpr int kMaxK = 48;
    constexpr double kTailFloor = 1e-9;

    std::vector<double> q(kMaxK + 1), tail(kMaxK + 1);
    bool decays = false;
    for (int k = 0; k <= kMaxK; ++k) {
        q[static_cast<std::size_t>(k)] = std::ldexp(1.0, k);
        double m = tail_mass(q[static_cast<std::size_t>(k)]);
        require_finite(m, "make_theta: tail_mass");
        m = std::clamp(m, 0.0, 1.0);
        tail[static_cast<std::size_t>(k)] = m;
        if (m < kTailFloor) {
            decays = true;
        }
    }
    if (!decays)
        throw TailNotDecayingError("make_theta: tail_mass stays above 1e-9 up to q=2^48");

    ThetaResult out;
    if (v_integrable) {
        out.identity_branch = true;
        out.fn = SmoothFn{[](double t) { return t; }, [](double) { return 1.0; },
                          [](double) { return 0.0; }};
        double s = 0.0;
        for (int k = 0; k + 1 <= kMaxK; ++k)
            s += q[static_cast<std::size_t>(k + 1)] *
                 std::max(0.0, tail[static_cast<std::size_t>(k)] -
                                   tail[static_cast<std::size_t>(k + 1)]);
        out.ladder_sum = s;
        return out;
    }

    // Greedy dyadic slope halving: hold theta(q_{k+1}) below
    // 1/sqrt(tail(q_k)), so each ladder term theta(q_{k+1}) tail(q_k) is at
    // most sqrt(tail(q_k)). Slopes only ever halve, hence concavity.
    auto poly = std::make_shared<SmoothedPolyline>();
    poly->set_initial_slope(1.0);
    double slope = 1.0;
    double theta_at = 0.0;  // theta at the current ladder point (corner-free value)
    double prev_q = 0.0;
    for (int k = 0; k <= kMaxK; ++k) {
        const double qk = q[static_cast<std::size_t>(k)];
        theta_at += slope * (qk - prev_q);
        prev_q = qk;
        if (k == kMaxK) break;
        const double gap = q[static_cast<std::size_t>(k + 1)] - qk;
        const double tk = std::max(tail[static_cast<std::size_t>(k)], 1e-300);
        const double cap = 1.0 / std::sqrt(tk);
        double s = slope;
        while (s > 1e-12 && theta_at + s * gap > cap) {
            s *= 0.5;
            // once the block contribution is negligible next to theta_at,
            // further halving cannot help
            if (s * gap <= 1e-3 * std::max(1.0, theta_at)) break;
        }
        if (s < slope) {
            // corner half-width: a quarter of the shorter adjacent gap
            const double w = 0.25 * std::min(qk - (k > 0 ? q[static_cast<std::size_t>(k - 1)] : 0.0), gap);
            poly->add_knot(qk, s, w);
            out.knots.push_back(qk);
            out.slopes.push_back(s);
            slope = s;
        }
    }

    double lsum = 0.0;
    for (int k = 0; k + 1 <= kMaxK; ++k) {
        const double mass = std::max(
            0.0, tail[static_cast<std::size_t>(k)] - tail[static_cast<std::size_t>(k + 1)]);
        lsum += poly->value(q[static_cast<std::size_t>(k + 1)]) * mass;
    }
    out.ladder_sum = lsum;
    out.fn = SmoothFn{[poly](double t) { return poly->value(t); },
                      [poly](double t) { return poly->deriv(t); },
                      [poly](double t) { return poly->second(t); }};
    return out;
}

// ---------------------------------------------------------------------------
// condition integrals

ConditionVariant condition_variant_from_string(const std::string& s) {
    if (s == "trevisan") return ConditionVariant::kTrevisan;
    if (s == "new") return ConditionVariant::kNew;
    if (s == "generalized") return ConditionVariant::kGeneralized;
    throw ConfigInvalidError("unknown condition variant: " + s);
}

std::string to_string(ConditionVariant v) {
    switch (v) {
        case ConditionVariant::kTrevisan: return "trevisan";
        case ConditionVariant::kNew: return "new";
        case ConditionVariant::kGeneralized: return "generalized";
    }
    return "?";
}

namespace {

std::function<double(double, const Vec&)> condition_integrand(const CoefficientField& field,
                                                              ConditionVariant variant,
                                                              const SmoothFn* profile) {
    switch (variant) {
        case ConditionVariant::kTrevisan:
            return [&field](double t, const Vec& x) {
                auto [a, b] = eval_field(field, t, x);
                return sym_operator_norm(a) + b.norm();
            };
        case ConditionVariant::kNew:
            return [&field](double t, const Vec& x) {
                auto [a, b] = eval_field(field, t, x);
                const double den = (1.0 + x.norm()) * (1.0 + x.norm());
                return (sym_operator_norm(a) + std::abs(b.dot(x))) / den;
            };
        case ConditionVariant::kGeneralized: {
            if (profile == nullptr)
                throw BadParamsError("condition_integral: generalized variant needs a profile");
            const SmoothFn* p = profile;
            return [&field, p](double t, const Vec& x) {
                auto [a, b] = eval_field(field, t, x);
                const double s = 1.0 + x.squaredNorm();
                const double an = sym_operator_norm(a);
                return (std::abs(p->second(s)) * s + std::abs(p->deriv(s))) * an +
                       std::abs(b.dot(x)) * std::abs(p->deriv(s));
            };
        }
    }
    throw BadParamsError("condition_integral: bad variant");
}

}  // namespace

double condition_integral(const CoefficientField& field, const MarginalFlow& flow,
                          ConditionVariant variant, const SmoothFn* profile) {
    const auto f = condition_integrand(field, variant, profile);
    const double coarse = flow_integral(flow, f);
    const double fine = flow_integral_refined(flow, f);
    const double scale = std::max({std::abs(coarse), std::abs(fine), 1e-300});
    if (std::abs(fine - coarse) > 0.02 * scale)
        throw QuadratureFailure("condition_integral(" + to_string(variant) + "): refinement moved " +
                                std::to_string(std::abs(fine - coarse) / scale * 100.0) + "%");
    return fine;
}

std::vector<double> condition_profile_1d(const CoefficientField& field,
                                         const std::function<double(double)>& density,
                                         double horizon, const std::vector<double>& cutoffs,
                                         ConditionVariant variant, double quad_step) {
    if (field.dim != 1) throw BadParamsError("condition_profile_1d: 1d only");
    if (cutoffs.empty() || !std::is_sorted(cutoffs.begin(), cutoffs.end()))
        throw BadParamsError("condition_profile_1d: cutoffs must be increasing");
    const auto f = condition_integrand(field, variant, nullptr);

    // Even integrand assumed (stationary symmetric densities): integrate
    // [0, R_max] by midpoint and double. The step must resolve the fastest
    // coefficient oscillation; callers pick quad_step accordingly.
    auto run = [&](double step) {
        std::vector<double> partials(cutoffs.size(), 0.0);
        double acc = 0.0;
        double x0 = 0.0;
        Vec x(1);
        for (std::size_t ci = 0; ci < cutoffs.size(); ++ci) {
            const double r = cutoffs[ci];
            const long n = std::lround(std::ceil((r - x0) / step));
            const double h = (r - x0) / static_cast<double>(n);
            for (long i = 0; i < n; ++i) {
                x(0) = x0 + (static_cast<double>(i) + 0.5) * h;
                acc += f(0.0, x) * density(x(0)) * h;
            }
            partials[ci] = 2.0 * acc * horizon;
            x0 = r;
        }
        return partials;
    };

    const std::vector<double> coarse = run(quad_step);
    const std::vector<double> fine = run(0.5 * quad_step);
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        const double scale = std::max({std::abs(coarse[i]), std::abs(fine[i]), 1e-300});
        if (std::abs(fine[i] - coarse[i]) > 0.02 * scale)
            throw QuadratureFailure("condition_profile_1d: refinement moved cutoff " +
                                    std::to_string(cutoffs[i]));
    }
    return fine;
}

// ---------------------------------------------------------------------------
// bounds

double gronwall_bound(double nu_integral, double w_integral, double growth_c, double t) {
    if (nu_integral < 0.0 || w_integral < 0.0 || growth_c < 0.0 || t < 0.0)
        throw BadParamsError("gronwall_bound: negative input");
    return (nu_integral + w_integral) * std::exp(growth_c * t);
}

double lv_total_bound(double nu_integral, double w_integral, double growth_c, double tau) {
    if (nu_integral < 0.0 || w_integral < 0.0 || growth_c < 0.0 || tau < 0.0)
        throw BadParamsError("lv_total_bound: negative input");
    return 2.0 * std::exp(growth_c * tau) * (w_integral + nu_integral);
}

double doob_bound(double nu_integral, double dirichlet_integral, double q) {
    if (q <= 0.0) throw BadParamsError("doob_bound: q must be positive");
    if (nu_integral < 0.0 || dirichlet_integral < 0.0)
        throw BadParamsError("doob_bound: negative integral");
    return std::min(1.0, (2.0 / q) * (nu_integral + dirichlet_integral));
}

BoundCertificate build_certificate(double nu_integral, double w_integral, double growth_c,
                                   double horizon_tau) {
    BoundCertificate cert;
    cert.nu_integral = nu_integral;
    cert.w_integral = w_integral;
    cert.growth_c = growth_c;
    cert.horizon_tau = horizon_tau;
    cert.sup_bound = gronwall_bound(nu_integral, w_integral, growth_c, horizon_tau);
    cert.lv_bound = lv_total_bound(nu_integral, w_integral, growth_c, horizon_tau);
    return cert;
}

double fit_log_domination(const CoefficientField& field, const std::vector<double>& radii,
                          const std::vector<double>& t_samples, int angular_samples) {
    const LyapunovSpec logv = lyapunov_family("log", field.dim);
    std::vector<std::pair<double, double>> samples;  // (LV, log(1+|x|^2))
    std::vector<Vec> directions;
    if (field.dim == 1) {
        directions.push_back(Vec::Constant(1, 1.0));
        directions.push_back(Vec::Constant(1, -1.0));
    } else {
        const int m = std::max(angular_samples, 4);
        for (int k = 0; k < m; ++k) {
            Vec u = Vec::Zero(field.dim);
            u(0) = std::cos(2.0 * M_PI * k / m);
            u(1) = std::sin(2.0 * M_PI * k / m);
            directions.push_back(u);
        }
    }
    const std::vector<double> times = t_samples.empty() ? std::vector<double>{0.0} : t_samples;
    for (double r : radii)
        for (const Vec& u : directions)
            for (double t : times) {
                const Vec x = r * u;
                samples.emplace_back(apply_L(field, logv, t, x), logv.value(x));
            }
    for (int k = 0; k <= 20; ++k) {
        const double c = std::ldexp(1.0, k);
        bool ok = true;
        for (const auto& [lv, v] : samples)
            if (lv > c + c * v) {
                ok = false;
                break;
            }
        if (ok) return c;
    }
    return 0.0;
}

}  // namespace fpklab
