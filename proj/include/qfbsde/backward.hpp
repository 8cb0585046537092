#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "qfbsde/core.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/parallel.hpp"
#include "qfbsde/regression.hpp"

namespace qfbsde {

struct RunConfig {
    std::uint64_t seed = 20240601;
    std::size_t paths = 100000;
    int picard_max = 50;
    double picard_tol = 1e-10;
    RegressionBasis basis;

    void validate() const {
        require(paths >= 2, Errc::invalid_argument, "RunConfig: need at least two paths");
        require(picard_tol > 0.0, Errc::invalid_argument, "RunConfig: picard_tol must be positive");
        require(picard_max >= 1, Errc::invalid_argument, "RunConfig: picard_max must be positive");
        basis.validate();
    }
};

struct BackwardSolution {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::size_t dim = 1;
    Truncation truncation;
    Vec Y; // paths x (N+1)
    Vec Z; // paths x N x d
    std::vector<int> picard_iters;                 // per step
    std::vector<std::vector<double>> picard_residuals; // per step
    double sup_abs_y = 0.0;
    double bmo = 0.0;
    /// Largest |y| and |z_k| handed to the driver; below n the truncation never acted.
    double max_abs_y_eval = 0.0;
    double max_abs_z_eval = 0.0;

    double& y(std::size_t m, std::size_t i) { return Y[m * (steps + 1) + i]; }
    double y(std::size_t m, std::size_t i) const { return Y[m * (steps + 1) + i]; }
    double& z(std::size_t m, std::size_t i, std::size_t k) { return Z[(m * steps + i) * dim + k]; }
    double z(std::size_t m, std::size_t i, std::size_t k) const { return Z[(m * steps + i) * dim + k]; }

    double y0() const {
        double s = 0.0;
        for (std::size_t m = 0; m < paths; ++m) s += y(m, 0);
        return s / static_cast<double>(paths);
    }
};

namespace detail {

/// Solves y = e + dt g(t, x, y, z) per path by Picard iteration over the whole sample;
/// residual is the sup over paths of successive iterates.
template <class G>
int picard_solve(std::size_t M, const Vec& e, double dt, G&& g, Vec& out, const RunConfig& cfg,
                 std::vector<double>& residuals) {
    out = e;
    Vec next(M);
    double prev = std::numeric_limits<double>::infinity();
    int growth = 0;
    for (int k = 1; k <= cfg.picard_max; ++k) {
        parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t m = lo; m < hi; ++m) {
                const double v = e[m] + dt * g(m, out[m]);
                require(std::isfinite(v), Errc::non_finite, "lsmc_solve: non-finite driver value");
                next[m] = v;
            }
        });
        double res = 0.0;
        for (std::size_t m = 0; m < M; ++m) res = std::max(res, std::abs(next[m] - out[m]));
        out.swap(next);
        residuals.push_back(res);
        if (res <= cfg.picard_tol) return k;
        growth = res > prev ? growth + 1 : 0;
        if (growth >= 3)
            throw Error(Errc::picard_divergence, "lsmc_solve: Picard residual grew three times in a row");
        prev = res;
    }
    throw Error(Errc::picard_divergence, "lsmc_solve: Picard tolerance not reached within picard_max");
}

} // namespace detail

/// Regression-based backward induction for Y_t = phi(X_T) + int g_n ds - int Z dB.
///
/// Z_i is the regression of (Y_{i+1} - E_i[Y_{i+1}]) dB_i / dt on X_i; subtracting the fitted
/// conditional mean leaves the estimator's expectation unchanged and removes the O(1/dt)
/// variance of the raw product. Y_i is the Picard fixed point of
/// y = E_i[Y_{i+1}] + dt g_n(t_i, X_i, y, Z_i).
inline BackwardSolution lsmc_solve(const FBSDEProblem& problem, const PathEnsemble& e, const RegressionBasis& basis,
                                   Truncation n, const RunConfig& cfg) {
    cfg.validate();
    basis.validate();
    require(e.has_paths(), Errc::invalid_argument, "lsmc_solve: paths not simulated");
    require(!n || *n >= 1, Errc::invalid_argument, "lsmc_solve: truncation level must be positive");
    const std::size_t M = e.paths, N = e.steps(), d = e.dim;
    BackwardSolution s;
    s.paths = M;
    s.steps = N;
    s.dim = d;
    s.truncation = n;
    s.Y.assign(M * (N + 1), 0.0);
    s.Z.assign(M * N * d, 0.0);
    s.picard_iters.assign(N, 0);
    s.picard_residuals.assign(N, {});
    for (std::size_t m = 0; m < M; ++m) {
        const double v = problem.terminal.value(ConstSpan(e.state(m, N), d));
        require(std::isfinite(v), Errc::non_finite, "lsmc_solve: non-finite terminal value");
        s.y(m, N) = v;
    }
    Vec next(M), ey(M), target(M), zfit(M), yi(M);
    std::vector<double> yabs(M, 0.0), zabs(M, 0.0);
    for (std::size_t i = N; i-- > 0;) {
        const double dt = e.grid.dt(i);
        const double t = e.grid[i];
        for (std::size_t m = 0; m < M; ++m) next[m] = s.y(m, i + 1);
        Regressor reg(e.at(i), basis);
        reg.fitted(reg.solve(next), ey);
        for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t m = 0; m < M; ++m) target[m] = (next[m] - ey[m]) * e.dB(m, i, k) / dt;
            reg.fitted(reg.solve(target), zfit);
            for (std::size_t m = 0; m < M; ++m) s.z(m, i, k) = zfit[m];
        }
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < d; ++k) zabs[m] = std::max(zabs[m], std::abs(s.z(m, i, k)));
        auto g = [&](std::size_t m, double y) {
            double scratch[8];
            Vec big;
            MutSpan sc(scratch, std::min<std::size_t>(d, 8));
            if (d > 8) {
                big.resize(d);
                sc = MutSpan(big);
            }
            yabs[m] = std::max(yabs[m], std::abs(y));
            return evaluate_driver(problem.driver, t, ConstSpan(e.state(m, i), d), y,
                                   ConstSpan(&s.Z[(m * N + i) * d], d), n, sc);
        };
        s.picard_iters[i] = detail::picard_solve(M, ey, dt, g, yi, cfg, s.picard_residuals[i]);
        for (std::size_t m = 0; m < M; ++m) s.y(m, i) = yi[m];
    }
    for (double v : s.Y) s.sup_abs_y = std::max(s.sup_abs_y, std::abs(v));
    for (std::size_t m = 0; m < M; ++m) {
        s.max_abs_y_eval = std::max(s.max_abs_y_eval, yabs[m]);
        s.max_abs_z_eval = std::max(s.max_abs_z_eval, zabs[m]);
    }
    for (double v : s.Z) require(std::isfinite(v), Errc::non_finite, "lsmc_solve: non-finite Z");
    return s;
}

/// Grid-time proxy for the BMO norm of Z*B: sqrt of the largest fitted E[sum_{j>=i} |Z_j|^2 dt_j | X_i].
inline double estimate_bmo(const BackwardSolution& s, const PathEnsemble& e, const RegressionBasis& basis) {
    const std::size_t M = s.paths, N = s.steps, d = s.dim;
    Vec tail(M, 0.0), fit(M);
    double best = 0.0;
    for (std::size_t i = N; i-- > 0;) {
        const double dt = e.grid.dt(i);
        for (std::size_t m = 0; m < M; ++m) {
            double z2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) z2 += s.z(m, i, k) * s.z(m, i, k);
            tail[m] += z2 * dt;
        }
        Regressor reg(e.at(i), basis);
        reg.fitted(reg.solve(tail), fit);
        for (double v : fit) best = std::max(best, v);
    }
    return std::sqrt(std::max(0.0, best));
}

inline BackwardSolution lsmc_solve_with_bmo(const FBSDEProblem& problem, const PathEnsemble& e,
                                            const RegressionBasis& basis, Truncation n, const RunConfig& cfg) {
    BackwardSolution s = lsmc_solve(problem, e, basis, n, cfg);
    s.bmo = estimate_bmo(s, e, basis);
    return s;
}

struct AprioriReport {
    double observed_sup_y = 0.0;
    double upsilon1 = 0.0;
    bool y_pass = false;
    double observed_bmo = 0.0;
    double upsilon2 = 0.0;
    bool bmo_pass = false;
    bool pass() const { return y_pass && bmo_pass; }
};

inline AprioriReport apriori_check(const BackwardSolution& s, const FBSDEProblem& p, double slack_y = 0.01,
                                   double slack_bmo = 0.10, Upsilon2Variant variant = Upsilon2Variant::printed) {
    AprioriReport r;
    const auto& drv = p.driver;
    r.observed_sup_y = s.sup_abs_y;
    r.upsilon1 = upsilon1(p.terminal.bound, drv.lambda0, drv.lambda_y, p.horizon);
    r.y_pass = r.observed_sup_y <= r.upsilon1 * (1.0 + slack_y);
    r.observed_bmo = s.bmo;
    r.upsilon2 = std::isfinite(r.upsilon1)
                     ? upsilon2(r.upsilon1, drv.lambda0, drv.lambda_y, drv.lambda_z, p.horizon, drv.f, variant)
                     : std::numeric_limits<double>::infinity();
    r.bmo_pass = r.observed_bmo <= r.upsilon2 * (1.0 + slack_bmo);
    return r;
}

/// Smallest n in n_list whose solve never fed the driver a |y| or |z_k| above n; the
/// solution is then bit-identical for every larger level. nullopt if no listed level qualifies.
inline std::optional<int> stabilization_level(const FBSDEProblem& problem, const PathEnsemble& e,
                                              const RegressionBasis& basis, const std::vector<int>& n_list,
                                              const RunConfig& cfg) {
    for (std::size_t j = 1; j < n_list.size(); ++j)
        require(n_list[j] > n_list[j - 1], Errc::invalid_argument, "stabilization_level: n_list must increase");
    for (int n : n_list) {
        const BackwardSolution s = lsmc_solve(problem, e, basis, n, cfg);
        if (s.max_abs_y_eval <= n && s.max_abs_z_eval <= n) return n;
    }
    return std::nullopt;
}

} // namespace qfbsde
