#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "qfbsde/core.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/parallel.hpp"
#include "qfbsde/quadrature.hpp"
#include "qfbsde/random.hpp"

namespace qfbsde {

/// Monotone map u(x) = int_0^x exp(2 int_0^y f(|s|) ds) dy on [-R, R] with its inverse.
class ExponentialTransform {
public:
    ExponentialTransform(const ScalarFn& f, double radius, std::size_t steps = 20000) {
        require(radius > 0.0, Errc::invalid_argument, "ExponentialTransform: radius must be positive");
        require(steps >= 16 && steps % 2 == 0, Errc::invalid_argument, "ExponentialTransform: steps must be even");
        const double h = 2.0 * radius / static_cast<double>(steps);
        const std::size_t mid = steps / 2;
        table_.x.resize(steps + 1);
        table_.y.assign(steps + 1, 0.0);
        table_.dy.assign(steps + 1, 0.0);
        Vec& fv = f_;
        fv.resize(steps + 1);
        for (std::size_t j = 0; j <= steps; ++j) {
            table_.x[j] = -radius + h * static_cast<double>(j);
            fv[j] = f(std::abs(table_.x[j]));
            require(std::isfinite(fv[j]) && fv[j] >= 0.0, Errc::non_finite,
                    "ExponentialTransform: f must be finite and non-negative on the range");
        }
        // F(y) = int_0^y f(|s|) ds, accumulated outward from 0 on both sides.
        Vec F(steps + 1, 0.0);
        for (std::size_t j = mid + 1; j <= steps; ++j) F[j] = F[j - 1] + 0.5 * h * (fv[j] + fv[j - 1]);
        for (std::size_t j = mid; j-- > 0;) F[j] = F[j + 1] - 0.5 * h * (fv[j] + fv[j + 1]);
        for (std::size_t j = 0; j <= steps; ++j) table_.dy[j] = std::exp(2.0 * F[j]);
        for (std::size_t j = mid + 1; j <= steps; ++j)
            table_.y[j] = table_.y[j - 1] + simpson_step(j - 1, h);
        for (std::size_t j = mid; j-- > 0;) table_.y[j] = table_.y[j + 1] - simpson_step(j, h);
        for (std::size_t j = 1; j <= steps; ++j)
            require(table_.y[j] > table_.y[j - 1], Errc::invalid_argument, "ExponentialTransform: u not invertible");
    }

    double operator()(double x) const { return table_(x); }
    double derivative(double x) const { return table_.derivative(x); }

    double inverse(double v, double tol = 1e-12) const {
        double lo = table_.x.front(), hi = table_.x.back();
        require(v >= table_.y.front() && v <= table_.y.back(), Errc::invalid_argument,
                "ExponentialTransform: value outside the tabulated range");
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (table_(mid) < v) lo = mid;
            else hi = mid;
        }
        return 0.5 * (lo + hi);
    }

private:
    // Exact for cubic u on the cell: h (a + b)/2 + h^2 (a' - b')/12 with u'' = 2 f(|x|) u'.
    double simpson_step(std::size_t j, double h) const {
        const double a = table_.dy[j], b = table_.dy[j + 1];
        return 0.5 * h * (a + b) + h * h * (curvature(j) - curvature(j + 1)) / 12.0;
    }
    double curvature(std::size_t j) const { return 2.0 * f_[j] * table_.dy[j]; }

    Vec f_;
    HermiteTable table_;
};

struct DominationOracle {
    double y0 = 0.0;
    std::function<double(double t, double x)> Y;
    std::function<double(double t, double x)> Z;
};

/// Y_t = u^{-1}(E[u(phi(X_T)) | X_t]) for the driver f(|y|)|z|^2 with b = 0, d = 1, using
/// Gauss-Hermite quadrature on the Gaussian transition. Z = dY/dx from Stein's identity.
/// Unbounded terminals are supported on the window x0 +- (largest node + 6) sqrt(T); evaluating
/// Y or Z further out throws.
inline DominationOracle domination_oracle(const ScalarFn& f, const Terminal& phi, double x0, double horizon,
                                          int nodes = 64) {
    require(horizon > 0.0, Errc::invalid_argument, "domination_oracle: horizon must be positive");
    auto gh = std::make_shared<GaussHermite>(gauss_hermite(nodes));
    double reach = phi.bound;
    if (!std::isfinite(reach)) {
        const double w = (gh->nodes.back() + 6.0) * std::sqrt(horizon);
        reach = 0.0;
        for (int k = 0; k <= 4000; ++k) {
            const double x = x0 - w + 2.0 * w * k / 4000.0;
            reach = std::max(reach, std::abs(phi.value(ConstSpan(&x, 1))));
        }
    }
    const double radius = std::max(reach, 1e-6) * 1.05 + 1e-3;
    auto u = std::make_shared<ExponentialTransform>(f, radius);
    auto term = phi.value;
    DominationOracle o;
    o.Y = [u, gh, term, horizon](double t, double x) {
        const double sd = std::sqrt(std::max(0.0, horizon - t));
        double acc = 0.0;
        for (std::size_t k = 0; k < gh->nodes.size(); ++k) {
            const double xt = x + sd * gh->nodes[k];
            acc += gh->weights[k] * (*u)(term(ConstSpan(&xt, 1)));
        }
        return u->inverse(acc);
    };
    o.Z = [u, gh, term, horizon, phi](double t, double x) {
        const double sd = std::sqrt(std::max(0.0, horizon - t));
        if (sd == 0.0) {
            require(static_cast<bool>(phi.gradient), Errc::missing_gradient, "domination_oracle: terminal gradient needed at T");
            double g;
            phi.gradient(ConstSpan(&x, 1), MutSpan(&g, 1));
            return g;
        }
        double acc = 0.0, dacc = 0.0;
        for (std::size_t k = 0; k < gh->nodes.size(); ++k) {
            const double xt = x + sd * gh->nodes[k];
            const double v = (*u)(term(ConstSpan(&xt, 1)));
            acc += gh->weights[k] * v;
            dacc += gh->weights[k] * v * gh->nodes[k];
        }
        dacc /= sd;
        return dacc / u->derivative(u->inverse(acc));
    };
    o.y0 = o.Y(0.0, x0);
    return o;
}

/// Same transform with the expectation taken over a simulated ensemble (any drift, any d).
inline double domination_oracle_mc(const ScalarFn& f, const Terminal& phi, const PathEnsemble& e, double* stderr_out = nullptr) {
    const std::size_t M = e.paths, N = e.steps();
    double reach = phi.bound;
    if (!std::isfinite(reach)) {
        reach = 0.0;
        for (std::size_t m = 0; m < M; ++m) reach = std::max(reach, std::abs(phi.value(ConstSpan(e.state(m, N), e.dim))));
    }
    ExponentialTransform u(f, std::max(reach, 1e-6) * 1.05 + 1e-3);
    double s = 0.0, s2 = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double v = u(phi.value(ConstSpan(e.state(m, N), e.dim)));
        s += v;
        s2 += v * v;
    }
    const double mean = s / static_cast<double>(M);
    const double y0 = u.inverse(mean);
    if (stderr_out) {
        const double var = std::max(0.0, s2 / static_cast<double>(M) - mean * mean);
        *stderr_out = std::sqrt(var / static_cast<double>(M)) / u.derivative(y0);
    }
    return y0;
}

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Y_0 for g = a y + c.z + h(t, x): E[e^{aT} phi(X~_T) + int e^{as} h(s, X~_s) ds] with X~
/// driven by b + c (Euler, left-point time integral).
inline Estimate linear_oracle(double a, const Vec& c, const std::function<double(double, ConstSpan)>& h,
                              const FBSDEProblem& problem, std::size_t M, std::size_t N, std::uint64_t seed) {
    const std::size_t d = problem.dim;
    require(c.size() == d, Errc::invalid_argument, "linear_oracle: c has wrong dimension");
    const TimeGrid grid = TimeGrid::uniform(problem.horizon, N);
    FBSDEProblem shifted = problem;
    const Drift base = problem.drift;
    shifted.drift.value = [base, c](double t, ConstSpan x, MutSpan out) {
        base.value(t, x, out);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += c[k];
    };
    PathEnsemble e = simulate(shifted, grid, M, seed);
    Vec sample(M);
    const double T = problem.horizon;
    parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t m = lo; m < hi; ++m) {
            double acc = std::exp(a * T) * problem.terminal.value(ConstSpan(e.state(m, N), d));
            if (h)
                for (std::size_t i = 0; i < N; ++i)
                    acc += std::exp(a * grid[i]) * h(grid[i], ConstSpan(e.state(m, i), d)) * grid.dt(i);
            sample[m] = acc;
        }
    });
    double s = 0.0;
    for (double v : sample) s += v;
    const double mean = s / static_cast<double>(M);
    double var = 0.0;
    for (double v : sample) var += (v - mean) * (v - mean);
    var /= static_cast<double>(std::max<std::size_t>(M - 1, 1));
    return {mean, std::sqrt(var / static_cast<double>(M))};
}

struct NestedEstimate {
    Vec values;
    Vec stderrs;
};

/// For each outer state at time t, averages functional(X_T) over `inner` fresh Euler paths.
inline NestedEstimate nested_mc_ce(const FBSDEProblem& problem, const std::vector<Vec>& outer, double t,
                                   std::size_t inner, std::size_t steps, std::uint64_t seed,
                                   const std::function<double(ConstSpan)>& functional) {
    require(inner >= 100, Errc::invalid_argument, "nested_mc_ce: need at least 100 inner paths");
    require(t >= 0.0 && t <= problem.horizon, Errc::invalid_argument, "nested_mc_ce: t outside [0, T]");
    const std::size_t d = problem.dim;
    const std::size_t n = outer.size();
    NestedEstimate r;
    r.values.assign(n, 0.0);
    r.stderrs.assign(n, 0.0);
    const double span = problem.horizon - t;
    const double dt = steps > 0 ? span / static_cast<double>(steps) : 0.0;
    parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
        Vec x(d), b(d);
        for (std::size_t o = lo; o < hi; ++o) {
            require(outer[o].size() == d, Errc::invalid_argument, "nested_mc_ce: outer state dimension");
            double s = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < inner; ++j) {
                NormalStream rng(seed, (static_cast<std::uint64_t>(o) << 32) | j);
                x = outer[o];
                for (std::size_t i = 0; i < steps && span > 0; ++i) {
                    const double ti = t + dt * static_cast<double>(i);
                    problem.drift.value(ti, x, b);
                    const double sd = std::sqrt(dt);
                    for (std::size_t k = 0; k < d; ++k) x[k] += b[k] * dt + sd * rng.next();
                }
                const double v = functional(x);
                s += v;
                s2 += v * v;
            }
            const double mean = s / static_cast<double>(inner);
            const double var = std::max(0.0, (s2 - static_cast<double>(inner) * mean * mean) / static_cast<double>(inner - 1));
            r.values[o] = mean;
            r.stderrs[o] = std::sqrt(var / static_cast<double>(inner));
        }
    });
    return r;
}

} // namespace qfbsde
