#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfbsde/error.hpp"
#include "qfbsde/quadrature.hpp"

namespace qfbsde {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

/// Truncation level of the driver; nullopt means the raw driver is used.
using Truncation = std::optional<int>;
inline constexpr Truncation untruncated = std::nullopt;

// ---------------------------------------------------------------------------
// Truncation family
// ---------------------------------------------------------------------------

/// C^1 cap of the identity: x on [-n, n], +-(n+1) beyond n+2, and the
/// quadratic n + s - s^2/4 (s = |x| - n) in between.
inline double rho_truncate(double x, int n) {
    require(n >= 1, Errc::invalid_argument, "rho_truncate: n must be positive");
    const double a = std::abs(x);
    const double nn = static_cast<double>(n);
    double r;
    if (a <= nn) {
        return x;
    } else if (a >= nn + 2.0) {
        r = nn + 1.0;
    } else {
        const double s = a - nn;
        r = nn + s - 0.25 * s * s;
    }
    return std::copysign(r, x);
}

inline double rho_truncate_derivative(double x, int n) {
    require(n >= 1, Errc::invalid_argument, "rho_truncate_derivative: n must be positive");
    const double a = std::abs(x);
    const double nn = static_cast<double>(n);
    if (a <= nn) return 1.0;
    if (a >= nn + 2.0) return 0.0;
    return 1.0 - 0.5 * (a - nn);
}

inline Vec rho_truncate_vec(ConstSpan z, int n) {
    Vec out(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) out[k] = rho_truncate(z[k], n);
    return out;
}

// ---------------------------------------------------------------------------
// Time grid
// ---------------------------------------------------------------------------

class TimeGrid {
public:
    TimeGrid() = default;

    explicit TimeGrid(Vec times) : times_(std::move(times)) {
        require(times_.size() >= 2, Errc::invalid_argument, "TimeGrid: need at least two points");
        require(times_.front() == 0.0, Errc::invalid_argument, "TimeGrid: first time must be 0");
        for (std::size_t i = 1; i < times_.size(); ++i)
            require(times_[i] > times_[i - 1], Errc::invalid_argument, "TimeGrid: times must increase strictly");
    }

    static TimeGrid uniform(double horizon, std::size_t steps) {
        require(horizon > 0.0, Errc::invalid_argument, "TimeGrid: horizon must be positive");
        require(steps >= 1, Errc::invalid_argument, "TimeGrid: need at least one step");
        Vec t(steps + 1);
        for (std::size_t i = 0; i <= steps; ++i) t[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
        t.back() = horizon;
        return TimeGrid(std::move(t));
    }

    std::size_t steps() const { return times_.size() - 1; }
    double horizon() const { return times_.back(); }
    double operator[](std::size_t i) const { return times_[i]; }
    double dt(std::size_t i) const { return times_[i + 1] - times_[i]; }
    const Vec& times() const { return times_; }

    double mesh() const {
        double m = 0.0;
        for (std::size_t i = 0; i + 1 < times_.size(); ++i) m = std::max(m, dt(i));
        return m;
    }

    /// Stride r such that every r-th node of this grid reproduces `coarse`.
    std::size_t refinement_of(const TimeGrid& coarse) const {
        require(coarse.steps() >= 1 && steps() % coarse.steps() == 0, Errc::invalid_argument,
                "TimeGrid: coarse partition is not nested in the fine grid");
        const std::size_t r = steps() / coarse.steps();
        for (std::size_t i = 0; i <= coarse.steps(); ++i) {
            const double diff = std::abs(times_[i * r] - coarse[i]);
            require(diff <= 1e-12 * std::max(1.0, horizon()), Errc::invalid_argument,
                    "TimeGrid: coarse partition is not nested in the fine grid");
        }
        return r;
    }

private:
    Vec times_;
};

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

using ScalarFn = std::function<double(double)>;
using DriverFn = std::function<double(double t, ConstSpan x, double y, ConstSpan z)>;
using DriverVecGrad = std::function<void(double t, ConstSpan x, double y, ConstSpan z, MutSpan out)>;
using DriverScalarGrad = std::function<double(double t, ConstSpan x, double y, ConstSpan z)>;

/// Generator g with its structural growth constants.
struct DriverSpec {
    double lambda0 = 0.0;
    double lambda_y = 0.0;
    double lambda_z = 0.0;
    double alpha = 0.0;
    ScalarFn f = [](double) { return 0.0; };
    DriverFn g = [](double, ConstSpan, double, ConstSpan) { return 0.0; };
    DriverVecGrad grad_x;
    DriverScalarGrad grad_y;
    DriverVecGrad grad_z;
    std::string name = "custom";

    double growth_bound(double y, ConstSpan z) const {
        double zn2 = 0.0;
        for (double v : z) zn2 += v * v;
        const double zn = std::sqrt(zn2);
        return lambda0 + lambda_y * std::abs(y) + lambda_z * (zn + f(std::abs(y)) * zn2);
    }
};

/// Evaluates g_n(t,x,y,z) = g(t, x, rho_n(y), rho_n(z)); `scratch` must hold z.size() values.
inline double evaluate_driver(const DriverSpec& drv, double t, ConstSpan x, double y, ConstSpan z,
                              Truncation n, MutSpan scratch) {
    if (!n) return drv.g(t, x, y, z);
    for (std::size_t k = 0; k < z.size(); ++k) scratch[k] = rho_truncate(z[k], *n);
    return drv.g(t, x, rho_truncate(y, *n), ConstSpan(scratch.data(), z.size()));
}

/// Spatial gradients of the (possibly truncated) driver. Analytic gradients are used when
/// supplied, central differences with step 1e-5 otherwise.
struct DriverGradient {
    Vec gx;
    double gy = 0.0;
    Vec gz;
};

inline void driver_gradient(const DriverSpec& drv, double t, ConstSpan x, double y, ConstSpan z,
                            Truncation n, DriverGradient& out) {
    const std::size_t d = z.size();
    out.gx.assign(x.size(), 0.0);
    out.gz.assign(d, 0.0);
    Vec zt(z.begin(), z.end());
    double yt = y;
    Vec chain(d, 1.0);
    double ychain = 1.0;
    if (n) {
        yt = rho_truncate(y, *n);
        ychain = rho_truncate_derivative(y, *n);
        for (std::size_t k = 0; k < d; ++k) {
            zt[k] = rho_truncate(z[k], *n);
            chain[k] = rho_truncate_derivative(z[k], *n);
        }
    }
    constexpr double h = 1e-5;
    if (drv.grad_x) {
        drv.grad_x(t, x, yt, zt, out.gx);
    } else {
        Vec xp(x.begin(), x.end());
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double keep = xp[k];
            xp[k] = keep + h;
            const double up = drv.g(t, xp, yt, zt);
            xp[k] = keep - h;
            const double dn = drv.g(t, xp, yt, zt);
            xp[k] = keep;
            out.gx[k] = (up - dn) / (2 * h);
        }
    }
    if (drv.grad_y) {
        out.gy = drv.grad_y(t, x, yt, zt);
    } else {
        out.gy = (drv.g(t, x, yt + h, zt) - drv.g(t, x, yt - h, zt)) / (2 * h);
    }
    if (drv.grad_z) {
        drv.grad_z(t, x, yt, zt, out.gz);
    } else {
        Vec zp = zt;
        for (std::size_t k = 0; k < d; ++k) {
            const double keep = zp[k];
            zp[k] = keep + h;
            const double up = drv.g(t, x, yt, zp);
            zp[k] = keep - h;
            const double dn = drv.g(t, x, yt, zp);
            zp[k] = keep;
            out.gz[k] = (up - dn) / (2 * h);
        }
    }
    out.gy *= ychain;
    for (std::size_t k = 0; k < d; ++k) out.gz[k] *= chain[k];
}

enum class DriftRegularity { bounded_measurable, holder, smooth };

/// b(t, x) with an optional spatial Jacobian (row-major, jac[j*d + k] = d b_j / d x_k).
struct Drift {
    std::function<void(double t, ConstSpan x, MutSpan out)> value;
    std::function<void(double t, ConstSpan x, MutSpan jac)> jacobian;
    DriftRegularity regularity = DriftRegularity::smooth;
    double holder_beta = 1.0;
    double bound = 0.0;
    bool time_homogeneous = true;
    std::string name = "custom";

    bool has_gradient() const { return static_cast<bool>(jacobian); }
};

inline Drift zero_drift(std::size_t d) {
    Drift b;
    b.value = [](double, ConstSpan, MutSpan out) { std::fill(out.begin(), out.end(), 0.0); };
    b.jacobian = [](double, ConstSpan, MutSpan jac) { std::fill(jac.begin(), jac.end(), 0.0); };
    b.regularity = DriftRegularity::smooth;
    b.bound = 0.0;
    b.name = "zero";
    (void)d;
    return b;
}

/// Terminal map phi with its sup bound and Lipschitz constant.
struct Terminal {
    std::function<double(ConstSpan x)> value;
    std::function<void(ConstSpan x, MutSpan grad)> gradient;
    double bound = std::numeric_limits<double>::infinity();
    double lipschitz = std::numeric_limits<double>::infinity();
    std::string name = "custom";
};

struct FBSDEProblem {
    std::size_t dim = 1;
    double horizon = 1.0;
    Vec x0 = {0.0};
    Drift drift = zero_drift(1);
    Terminal terminal;
    DriverSpec driver;
};

struct ProblemReport {
    std::vector<std::string> violations;
    bool pass() const { return violations.empty(); }
};

/// Sampled audit of the terminal bound, its Lipschitz constant and the drift bound.
inline ProblemReport check_problem(const FBSDEProblem& p, const std::vector<Vec>& probes) {
    ProblemReport rep;
    if (p.dim == 0) rep.violations.push_back("dimension must be positive");
    if (!(p.horizon > 0.0)) rep.violations.push_back("horizon must be positive");
    if (p.x0.size() != p.dim) rep.violations.push_back("x0 has wrong dimension");
    if (!std::isfinite(p.terminal.bound)) rep.violations.push_back("terminal bound is not finite");
    Vec bx(p.dim);
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const Vec& x = probes[i];
        if (x.size() != p.dim) continue;
        const double v = p.terminal.value(x);
        if (std::abs(v) > p.terminal.bound * (1 + 1e-12))
            rep.violations.push_back("terminal exceeds bound at probe " + std::to_string(i));
        p.drift.value(0.0, x, bx);
        for (double c : bx)
            if (std::abs(c) > p.drift.bound * (1 + 1e-12) + 1e-15)
                rep.violations.push_back("drift exceeds bound at probe " + std::to_string(i));
        for (std::size_t j = i + 1; j < probes.size(); ++j) {
            const Vec& xx = probes[j];
            if (xx.size() != p.dim) continue;
            double dist2 = 0.0;
            for (std::size_t k = 0; k < p.dim; ++k) dist2 += (x[k] - xx[k]) * (x[k] - xx[k]);
            const double lhs = std::abs(v - p.terminal.value(xx));
            if (lhs > p.terminal.lipschitz * std::sqrt(dist2) * (1 + 1e-12) + 1e-15)
                rep.violations.push_back("terminal Lipschitz bound fails between probes " + std::to_string(i) +
                                         " and " + std::to_string(j));
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Bounds and transforms
// ---------------------------------------------------------------------------

/// Running maximum of f sampled on a sorted non-negative grid.
inline Table1D increasing_envelope(const ScalarFn& f, ConstSpan grid) {
    require(!grid.empty(), Errc::invalid_argument, "increasing_envelope: empty grid");
    Table1D t;
    t.x.assign(grid.begin(), grid.end());
    t.y.resize(grid.size());
    double run = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        require(grid[i] >= 0.0, Errc::invalid_argument, "increasing_envelope: grid must be non-negative");
        if (i > 0) require(grid[i] >= grid[i - 1], Errc::invalid_argument, "increasing_envelope: grid must be sorted");
        run = std::max(run, f(grid[i]));
        t.y[i] = run;
    }
    return t;
}

/// Sup bound on Y: (|xi|_inf + Lambda0 T) exp(Lambda_y T).
inline double upsilon1(double xi_bound, double lambda0, double lambda_y, double horizon) {
    require(xi_bound >= 0 && lambda0 >= 0 && lambda_y >= 0 && horizon >= 0, Errc::invalid_argument,
            "upsilon1: inputs must be non-negative");
    return (xi_bound + lambda0 * horizon) * std::exp(lambda_y * horizon);
}

/// Uniform-grid tables of K, v and v' for the transform with 1/2 v'' - f1 v' = 1/2.
struct TransformTables {
    Vec x;
    Vec K;
    Vec v;
    Vec vprime;
    double step = 0.0;
};

inline TransformTables transform_tables(const ScalarFn& f1, double upper, int steps) {
    require(upper > 0.0, Errc::invalid_argument, "transform_tables: upper must be positive");
    require(steps >= 16, Errc::invalid_argument, "transform_tables: need at least 16 steps");
    TransformTables t;
    t.step = upper / steps;
    t.x.resize(steps + 1);
    Vec fv(steps + 1);
    for (int i = 0; i <= steps; ++i) {
        t.x[i] = upper * i / steps;
        fv[i] = f1(t.x[i]);
        require(std::isfinite(fv[i]), Errc::non_finite, "transform_tables: f1 not finite on the grid");
    }
    const Vec F = cumulative_trapezoid(fv, t.step);
    Vec decay(steps + 1);
    for (int i = 0; i <= steps; ++i) decay[i] = std::exp(-2.0 * F[i]);
    t.K = cumulative_trapezoid(decay, t.step);
    t.vprime.resize(steps + 1);
    for (int i = 0; i <= steps; ++i) t.vprime[i] = t.K[i] * std::exp(2.0 * F[i]);
    t.v = cumulative_trapezoid(t.vprime, t.step);
    return t;
}

/// Max over interior nodes of |1/2 v'' - f1 v' - 1/2| with v'' from second differences of v.
inline double transform_residual(const TransformTables& t, const ScalarFn& f1) {
    double worst = 0.0;
    const double h2 = t.step * t.step;
    for (std::size_t i = 1; i + 1 < t.x.size(); ++i) {
        const double vpp = (t.v[i + 1] - 2.0 * t.v[i] + t.v[i - 1]) / h2;
        worst = std::max(worst, std::abs(0.5 * vpp - f1(t.x[i]) * t.vprime[i] - 0.5));
    }
    return worst;
}

enum class Upsilon2Variant {
    printed,  ///< exp(4 |1 + Lambda_z f|_{L1[0, U1]})
    proof_f1, ///< exp(4 |Lambda_z (1 + f)|_{L1[0, U1]})
};

/// BMO bound on Z*B; the L1 norm is a composite trapezoid over [0, ups1].
inline double upsilon2(double ups1, double lambda0, double lambda_y, double lambda_z, double horizon,
                       const ScalarFn& f, Upsilon2Variant variant = Upsilon2Variant::printed,
                       int steps = 1024) {
    require(ups1 >= 0 && lambda0 >= 0 && lambda_y >= 0 && lambda_z >= 0 && horizon >= 0,
            Errc::invalid_argument, "upsilon2: inputs must be non-negative");
    if (ups1 == 0.0) return 0.0;
    const auto integrand = [&](double u) {
        return variant == Upsilon2Variant::printed ? 1.0 + lambda_z * f(u) : lambda_z * (1.0 + f(u));
    };
    const double q = trapezoid(integrand, 0.0, ups1, steps);
    const double out = 2.0 * ups1 * (ups1 + horizon * (lambda0 + lambda_z + lambda_y * ups1)) * std::exp(4.0 * q);
    require(std::isfinite(out), Errc::non_finite, "upsilon2: bound is not finite");
    return out;
}

// ---------------------------------------------------------------------------
// Driver audit
// ---------------------------------------------------------------------------

struct DriverProbe {
    double t = 0.0;
    Vec x;
    double y = 0.0;
    Vec z;
};

struct DriverViolation {
    enum class Kind { growth, lipschitz, monotone_f };
    Kind kind;
    std::size_t probe;
    std::size_t other;
    double lhs;
    double rhs;
};

struct DriverReport {
    std::vector<DriverViolation> violations;
    bool pass() const { return violations.empty(); }
};

/// Checks the quadratic growth bound, the stochastic-Lipschitz inequality on probe pairs
/// (evaluated at the first probe's (t, x)) and monotonicity of f on probed |y| values.
inline DriverReport validate_driver(const DriverSpec& drv, const std::vector<DriverProbe>& probes) {
    require(!probes.empty(), Errc::invalid_argument, "validate_driver: empty probe set");
    constexpr double rel = 1e-12;
    DriverReport rep;
    auto norm = [](ConstSpan v) {
        double s = 0.0;
        for (double c : v) s += c * c;
        return std::sqrt(s);
    };
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const auto& p = probes[i];
        const double g = drv.g(p.t, p.x, p.y, p.z);
        const double bound = drv.growth_bound(p.y, p.z);
        if (!(std::abs(g) <= bound * (1 + rel) + 1e-300))
            rep.violations.push_back({DriverViolation::Kind::growth, i, i, std::abs(g), bound});
    }
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const auto& a = probes[i];
        for (std::size_t j = 0; j < probes.size(); ++j) {
            if (i == j) continue;
            const auto& b = probes[j];
            if (a.z.size() != b.z.size()) continue;
            const double ga = drv.g(a.t, a.x, a.y, a.z);
            const double gb = drv.g(a.t, a.x, b.y, b.z);
            Vec dz(a.z.size());
            for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = a.z[k] - b.z[k];
            const double za = norm(a.z);
            const double zb = norm(b.z);
            const double rhs =
                drv.lambda_y * (1 + std::pow(za, drv.alpha) + std::pow(zb, drv.alpha)) * std::abs(a.y - b.y) +
                drv.lambda_z * (1 + (drv.f(std::abs(a.y)) + drv.f(std::abs(b.y))) * (za + zb)) * norm(dz);
            const double lhs = std::abs(ga - gb);
            if (!(lhs <= rhs * (1 + rel) + 1e-300))
                rep.violations.push_back({DriverViolation::Kind::lipschitz, i, j, lhs, rhs});
            if (std::abs(a.y) <= std::abs(b.y)) {
                const double fa = drv.f(std::abs(a.y));
                const double fb = drv.f(std::abs(b.y));
                if (fa > fb * (1 + rel))
                    rep.violations.push_back({DriverViolation::Kind::monotone_f, i, j, fa, fb});
            }
        }
    }
    return rep;
}

} // namespace qfbsde
