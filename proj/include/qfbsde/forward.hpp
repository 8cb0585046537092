#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qfbsde/core.hpp"
#include "qfbsde/parallel.hpp"
#include "qfbsde/quadrature.hpp"
#include "qfbsde/random.hpp"
#include "qfbsde/regression.hpp"

namespace qfbsde {

inline constexpr const char* kSubstreamScheme = "philox4x32-10/path-stream/box-muller";

/// Brownian increments and forward paths, row-major by path then time then coordinate.
struct PathEnsemble {
    TimeGrid grid;
    std::size_t paths = 0;
    std::size_t dim = 1;
    std::uint64_t seed = 0;
    std::string scheme = kSubstreamScheme;
    Vec increments; // paths x N x d
    Vec states;     // paths x (N+1) x d

    std::size_t steps() const { return grid.steps(); }
    double& dB(std::size_t m, std::size_t i, std::size_t k) { return increments[(m * steps() + i) * dim + k]; }
    double dB(std::size_t m, std::size_t i, std::size_t k) const { return increments[(m * steps() + i) * dim + k]; }
    double& X(std::size_t m, std::size_t i, std::size_t k) { return states[(m * (steps() + 1) + i) * dim + k]; }
    double X(std::size_t m, std::size_t i, std::size_t k) const { return states[(m * (steps() + 1) + i) * dim + k]; }
    const double* state(std::size_t m, std::size_t i) const { return states.data() + (m * (steps() + 1) + i) * dim; }
    const double* increment(std::size_t m, std::size_t i) const { return increments.data() + (m * steps() + i) * dim; }
    bool has_paths() const { return states.size() == paths * (steps() + 1) * dim && !states.empty(); }

    StateView at(std::size_t i) const {
        require(has_paths(), Errc::invalid_argument, "PathEnsemble: paths not simulated");
        return StateView{states.data() + i * dim, paths, dim, (steps() + 1) * dim};
    }
};

inline PathEnsemble sample_brownian(const TimeGrid& grid, std::size_t M, std::size_t d, std::uint64_t seed) {
    require(M >= 1, Errc::invalid_argument, "sample_brownian: need at least one path");
    require(d >= 1, Errc::invalid_argument, "sample_brownian: dimension must be positive");
    PathEnsemble e;
    e.grid = grid;
    e.paths = M;
    e.dim = d;
    e.seed = seed;
    const std::size_t N = grid.steps();
    e.increments.resize(M * N * d);
    Vec sd(N);
    for (std::size_t i = 0; i < N; ++i) sd[i] = std::sqrt(grid.dt(i));
    parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t m = lo; m < hi; ++m) {
            NormalStream rng(seed, m);
            double* out = e.increments.data() + m * N * d;
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t k = 0; k < d; ++k) out[i * d + k] = sd[i] * rng.next();
        }
    });
    return e;
}

/// X_{i+1} = X_i + b(t_i, X_i) dt_i + dB_i from x0.
inline void euler_maruyama(const FBSDEProblem& problem, PathEnsemble& e) {
    require(e.increments.size() == e.paths * e.steps() * e.dim, Errc::invalid_argument,
            "euler_maruyama: increments missing");
    require(problem.dim == e.dim && problem.x0.size() == e.dim, Errc::invalid_argument,
            "euler_maruyama: dimension mismatch");
    const std::size_t N = e.steps();
    const std::size_t d = e.dim;
    e.states.assign(e.paths * (N + 1) * d, 0.0);
    parallel_for(0, e.paths, [&](std::size_t lo, std::size_t hi) {
        Vec b(d);
        for (std::size_t m = lo; m < hi; ++m) {
            for (std::size_t k = 0; k < d; ++k) e.X(m, 0, k) = problem.x0[k];
            for (std::size_t i = 0; i < N; ++i) {
                const double* x = e.state(m, i);
                problem.drift.value(e.grid[i], ConstSpan(x, d), b);
                const double dt = e.grid.dt(i);
                for (std::size_t k = 0; k < d; ++k) {
                    require(std::isfinite(b[k]), Errc::non_finite, "euler_maruyama: non-finite drift");
                    e.X(m, i + 1, k) = x[k] + b[k] * dt + e.dB(m, i, k);
                }
            }
        }
    });
}

inline PathEnsemble simulate(const FBSDEProblem& problem, const TimeGrid& grid, std::size_t M, std::uint64_t seed) {
    PathEnsemble e = sample_brownian(grid, M, problem.dim, seed);
    euler_maruyama(problem, e);
    return e;
}

// ---------------------------------------------------------------------------
// Mollification
// ---------------------------------------------------------------------------

/// Gaussian smoothing of b at scale eps, evaluated as a normalized kernel sum over a fixed
/// lattice with spacing 12 eps / quad_points. The lattice does not move with x, so jumps of b
/// are smoothed rather than sampled. Cost per call grows like quad_points^d.
inline Drift mollify_drift(const Drift& b, double eps, int quad_points = 32) {
    require(eps > 0.0, Errc::invalid_argument, "mollify_drift: eps must be positive");
    require(quad_points >= 4, Errc::invalid_argument, "mollify_drift: need at least 4 points");
    const double h = 12.0 * eps / quad_points;
    const int J = quad_points / 2 + 1;
    auto base = b.value;
    auto eval = [base, eps, h, J](double t, ConstSpan x, MutSpan out, double* jac) {
        const std::size_t d = x.size();
        std::vector<long> anchor(d);
        for (std::size_t k = 0; k < d; ++k) anchor[k] = std::lround(x[k] / h);
        std::vector<int> idx(d, -J);
        Vec y(d), by(out.size());
        Vec num(out.size(), 0.0), dnum(out.size() * d, 0.0), dden(d, 0.0);
        double den = 0.0;
        const double inv2 = 1.0 / (2.0 * eps * eps);
        while (true) {
            double r2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                y[k] = h * static_cast<double>(anchor[k] + idx[k]);
                r2 += (x[k] - y[k]) * (x[k] - y[k]);
            }
            const double w = std::exp(-r2 * inv2);
            base(t, y, by);
            den += w;
            for (std::size_t j = 0; j < out.size(); ++j) num[j] += w * by[j];
            if (jac) {
                for (std::size_t k = 0; k < d; ++k) {
                    const double dw = -w * (x[k] - y[k]) / (eps * eps);
                    dden[k] += dw;
                    for (std::size_t j = 0; j < out.size(); ++j) dnum[j * d + k] += dw * by[j];
                }
            }
            std::size_t k = 0;
            while (k < d && ++idx[k] > J) idx[k++] = -J;
            if (k == d) break;
        }
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = num[j] / den;
        if (jac)
            for (std::size_t j = 0; j < out.size(); ++j)
                for (std::size_t k = 0; k < d; ++k) jac[j * d + k] = (dnum[j * d + k] - out[j] * dden[k]) / den;
    };
    Drift m;
    m.value = [eval](double t, ConstSpan x, MutSpan out) { eval(t, x, out, nullptr); };
    m.jacobian = [eval](double t, ConstSpan x, MutSpan jac) {
        Vec tmp(jac.size() / std::max<std::size_t>(x.size(), 1));
        eval(t, x, tmp, jac.data());
    };
    m.regularity = DriftRegularity::smooth;
    m.holder_beta = 1.0;
    m.bound = b.bound;
    m.time_homogeneous = b.time_homogeneous;
    m.name = b.name + "@eps=" + std::to_string(eps);
    return m;
}

/// Cubic Hermite table of a scalar time-homogeneous drift and its derivative on [lo, hi];
/// outside the range the end values are held. Used to make repeated evaluation of a
/// mollified drift cheap.
inline Drift tabulate_drift_1d(const Drift& b, double lo, double hi, std::size_t points) {
    require(b.time_homogeneous, Errc::invalid_argument, "tabulate_drift_1d: drift must be time-homogeneous");
    require(b.has_gradient(), Errc::missing_gradient, "tabulate_drift_1d: drift gradient required");
    require(hi > lo && points >= 2, Errc::invalid_argument, "tabulate_drift_1d: bad range");
    auto table = std::make_shared<HermiteTable>();
    table->x.resize(points);
    table->y.resize(points);
    table->dy.resize(points);
    double v[1], g[1];
    for (std::size_t i = 0; i < points; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
        table->x[i] = x;
        b.value(0.0, ConstSpan(&x, 1), MutSpan(v, 1));
        b.jacobian(0.0, ConstSpan(&x, 1), MutSpan(g, 1));
        table->y[i] = v[0];
        table->dy[i] = g[0];
    }
    Drift out;
    out.value = [table, lo, hi](double, ConstSpan x, MutSpan o) { o[0] = (*table)(std::clamp(x[0], lo, hi)); };
    out.jacobian = [table, lo, hi](double, ConstSpan x, MutSpan j) {
        j[0] = (x[0] < lo || x[0] > hi) ? 0.0 : table->derivative(x[0]);
    };
    out.regularity = DriftRegularity::smooth;
    out.bound = b.bound;
    out.time_homogeneous = true;
    out.name = b.name + "@table";
    return out;
}

// ---------------------------------------------------------------------------
// First variation and Malliavin flows
// ---------------------------------------------------------------------------

struct FlowFields {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::size_t dim = 1;
    double eps = 0.0;
    Vec nablaX;     // paths x (N+1) x d x d, row-major matrices
    Vec nablaX_inv; // same layout

    std::size_t offset(std::size_t m, std::size_t i) const { return (m * (steps + 1) + i) * dim * dim; }
    const double* J(std::size_t m, std::size_t i) const { return nablaX.data() + offset(m, i); }
    const double* Jinv(std::size_t m, std::size_t i) const { return nablaX_inv.data() + offset(m, i); }
};

namespace detail {
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
} // namespace detail

/// Euler step on d(grad X) = b'(t, X) grad X dt. The inverse is propagated as
/// inv_{i+1} = inv_i (I + b' dt)^{-1}, the exact inverse of the forward step, so the product
/// stays at the identity to rounding.
inline FlowFields variational_flow(const FBSDEProblem& problem, const PathEnsemble& e, double eps_used = 0.0) {
    require(problem.drift.has_gradient(), Errc::missing_gradient,
            "variational_flow: drift gradient missing (mollify the drift first)");
    require(e.has_paths(), Errc::invalid_argument, "variational_flow: paths not simulated");
    const std::size_t d = e.dim, N = e.steps(), M = e.paths;
    FlowFields f;
    f.paths = M;
    f.steps = N;
    f.dim = d;
    f.eps = eps_used;
    f.nablaX.assign(M * (N + 1) * d * d, 0.0);
    f.nablaX_inv.assign(M * (N + 1) * d * d, 0.0);
    parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
        Vec jac(d * d);
        Eigen::MatrixXd step(d, d), stepinv(d, d);
        for (std::size_t m = lo; m < hi; ++m) {
            detail::MatMap(f.nablaX.data() + f.offset(m, 0), d, d).setIdentity();
            detail::MatMap(f.nablaX_inv.data() + f.offset(m, 0), d, d).setIdentity();
            for (std::size_t i = 0; i < N; ++i) {
                const double dt = e.grid.dt(i);
                problem.drift.jacobian(e.grid[i], ConstSpan(e.state(m, i), d), jac);
                if (d == 1) {
                    const double s = 1.0 + jac[0] * dt;
                    require(s != 0.0 && std::isfinite(s), Errc::non_finite, "variational_flow: singular step");
                    f.nablaX[f.offset(m, i + 1)] = s * f.nablaX[f.offset(m, i)];
                    f.nablaX_inv[f.offset(m, i + 1)] = f.nablaX_inv[f.offset(m, i)] / s;
                    continue;
                }
                step = Eigen::MatrixXd::Identity(d, d) + dt * detail::CMatMap(jac.data(), d, d);
                Eigen::PartialPivLU<Eigen::MatrixXd> lu(step);
                require(std::abs(lu.determinant()) > 0.0, Errc::non_finite, "variational_flow: singular step");
                stepinv = lu.inverse();
                detail::MatMap(f.nablaX.data() + f.offset(m, i + 1), d, d) =
                    step * detail::CMatMap(f.nablaX.data() + f.offset(m, i), d, d);
                detail::MatMap(f.nablaX_inv.data() + f.offset(m, i + 1), d, d) =
                    detail::CMatMap(f.nablaX_inv.data() + f.offset(m, i), d, d) * stepinv;
            }
        }
    });
    return f;
}

/// Max over paths and nodes of |grad X * inv - I| (entrywise).
inline double flow_inverse_defect(const FlowFields& f) {
    double worst = 0.0;
    const std::size_t d = f.dim;
    for (std::size_t m = 0; m < f.paths; ++m)
        for (std::size_t i = 0; i <= f.steps; ++i) {
            const Eigen::MatrixXd p = detail::CMatMap(f.J(m, i), d, d) * detail::CMatMap(f.Jinv(m, i), d, d);
            worst = std::max(worst, (p - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff());
        }
    return worst;
}

/// D_s X_t = grad X_t (grad X_s)^{-1} per path, as M row-major d x d blocks.
inline Vec malliavin_forward(const FlowFields& f, std::size_t s_index, std::size_t t_index) {
    require(s_index <= t_index, Errc::index_order, "malliavin_forward: s_index must not exceed t_index");
    require(t_index <= f.steps, Errc::invalid_argument, "malliavin_forward: index beyond grid");
    const std::size_t d = f.dim;
    Vec out(f.paths * d * d);
    for (std::size_t m = 0; m < f.paths; ++m) {
        detail::MatMap(out.data() + m * d * d, d, d) =
            detail::CMatMap(f.J(m, t_index), d, d) * detail::CMatMap(f.Jinv(m, s_index), d, d);
        if (s_index == t_index) detail::MatMap(out.data() + m * d * d, d, d).setIdentity();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward continuity
// ---------------------------------------------------------------------------

struct ContinuityProbe {
    double s = 0.0;
    double t = 0.0;
    Vec x;
    Vec y;
};

struct ContinuityReport {
    std::vector<double> ratios;
    std::vector<double> stderrs;
    double max_ratio = 0.0;
    double max_ratio_stderr = 0.0;
    std::size_t argmax = 0;
};

/// Estimates E|X_t^x - X_s^y|^2 / (|t - s| + |x - y|^2) per probe with both processes driven
/// by the same Brownian path on the uniform N-step grid refined by {s, t}.
inline ContinuityReport continuity_diagnostic(const FBSDEProblem& problem, const std::vector<ContinuityProbe>& probes,
                                              std::size_t M, std::uint64_t seed, std::size_t N) {
    require(!probes.empty(), Errc::invalid_argument, "continuity_diagnostic: no probes");
    require(M >= 2 && N >= 1, Errc::invalid_argument, "continuity_diagnostic: bad sizes");
    const std::size_t d = problem.dim;
    const double T = problem.horizon;
    ContinuityReport rep;
    for (std::size_t p = 0; p < probes.size(); ++p) {
        const auto& pr = probes[p];
        require(pr.x.size() == d && pr.y.size() == d, Errc::invalid_argument, "continuity_diagnostic: probe dimension");
        require(pr.s >= 0 && pr.t >= 0 && pr.s <= T && pr.t <= T, Errc::invalid_argument,
                "continuity_diagnostic: times outside [0, T]");
        double dx2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) dx2 += (pr.x[k] - pr.y[k]) * (pr.x[k] - pr.y[k]);
        const double denom = std::abs(pr.t - pr.s) + dx2;
        require(denom > 0.0, Errc::invalid_argument, "continuity_diagnostic: degenerate probe (s = t, x = y)");
        const double tend = std::max(pr.s, pr.t);
        Vec times;
        for (std::size_t i = 0; i <= N; ++i) {
            const double ti = T * static_cast<double>(i) / static_cast<double>(N);
            if (ti > tend) break;
            times.push_back(ti);
        }
        for (double extra : {pr.s, pr.t})
            if (extra > 0.0) times.push_back(extra);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end(),
                                [](double a, double b) { return std::abs(a - b) <= 1e-14; }),
                    times.end());
        const std::size_t is = static_cast<std::size_t>(
            std::min_element(times.begin(), times.end(), [&](double a, double b) { return std::abs(a - pr.s) < std::abs(b - pr.s); }) -
            times.begin());
        const std::size_t it = static_cast<std::size_t>(
            std::min_element(times.begin(), times.end(), [&](double a, double b) { return std::abs(a - pr.t) < std::abs(b - pr.t); }) -
            times.begin());
        Vec sq(M);
        const std::uint64_t stream_base = static_cast<std::uint64_t>(p) << 40;
        parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
            Vec X(pr.x), Y(pr.y), bx(d), by(d), Xt(d), Ys(d);
            for (std::size_t m = lo; m < hi; ++m) {
                NormalStream rng(seed, stream_base + m);
                X = pr.x;
                Y = pr.y;
                if (is == 0) Ys = Y;
                if (it == 0) Xt = X;
                for (std::size_t i = 0; i + 1 < times.size(); ++i) {
                    const double dt = times[i + 1] - times[i];
                    const double sd = std::sqrt(dt);
                    problem.drift.value(times[i], X, bx);
                    problem.drift.value(times[i], Y, by);
                    for (std::size_t k = 0; k < d; ++k) {
                        const double dB = sd * rng.next();
                        X[k] += bx[k] * dt + dB;
                        Y[k] += by[k] * dt + dB;
                    }
                    if (i + 1 == it) Xt = X;
                    if (i + 1 == is) Ys = Y;
                }
                double acc = 0.0;
                for (std::size_t k = 0; k < d; ++k) acc += (Xt[k] - Ys[k]) * (Xt[k] - Ys[k]);
                sq[m] = acc;
            }
        });
        double mean = 0.0;
        for (double v : sq) mean += v;
        mean /= static_cast<double>(M);
        double var = 0.0;
        for (double v : sq) var += (v - mean) * (v - mean);
        var /= static_cast<double>(M - 1);
        rep.ratios.push_back(mean / denom);
        rep.stderrs.push_back(std::sqrt(var / static_cast<double>(M)) / denom);
        if (p == 0 || rep.ratios.back() > rep.max_ratio) {
            rep.max_ratio = rep.ratios.back();
            rep.max_ratio_stderr = rep.stderrs.back();
            rep.argmax = p;
        }
    }
    return rep;
}

} // namespace qfbsde
