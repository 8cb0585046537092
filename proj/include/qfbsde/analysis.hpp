#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qfbsde/backward.hpp"
#include "qfbsde/core.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/regression.hpp"

namespace qfbsde {

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Ordinary least squares of log(error) on log(abscissa).
inline RateFit rate_fit(const std::vector<double>& abscissae, const std::vector<double>& errors) {
    require(abscissae.size() == errors.size(), Errc::invalid_argument, "rate_fit: length mismatch");
    require(abscissae.size() >= 3, Errc::invalid_argument, "rate_fit: need at least three points");
    const std::size_t n = abscissae.size();
    double sx = 0, sy = 0;
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        require(abscissae[i] > 0.0 && errors[i] > 0.0, Errc::invalid_argument, "rate_fit: inputs must be positive");
        lx[i] = std::log(abscissae[i]);
        ly[i] = std::log(errors[i]);
        sx += lx[i];
        sy += ly[i];
    }
    const double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    require(sxx > 0.0, Errc::invalid_argument, "rate_fit: abscissae must not all coincide");
    RateFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ly[i] - (f.intercept + f.slope * lx[i]);
        sse += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    return f;
}

struct ConvergenceReport {
    std::string experiment;
    std::vector<double> abscissae;
    std::vector<double> errors;
    std::vector<double> stderrs;
    std::optional<RateFit> fit; ///< absent when fewer than three positive points exist
    std::uint64_t seed = 0;
    std::size_t paths = 0;
    std::string basis;

    void refit() {
        std::vector<double> a, e;
        for (std::size_t i = 0; i < errors.size(); ++i)
            if (errors[i] > 0.0 && abscissae[i] > 0.0) {
                a.push_back(abscissae[i]);
                e.push_back(errors[i]);
            }
        fit.reset();
        if (a.size() >= 3) {
            try {
                fit = rate_fit(a, e);
            } catch (const Error&) {
                fit.reset();
            }
        }
    }
};

inline std::string describe(const RegressionBasis& b) {
    if (b.kind == RegressionBasis::Kind::polynomial)
        return "polynomial(degree=" + std::to_string(b.degree) + ")";
    return "piecewise_linear(bins=" + std::to_string(b.bins) + ")";
}

/// Errors non-increasing in order, allowing an increase of at most `k` combined standard errors.
inline bool monotone_within(const std::vector<double>& errors, const std::vector<double>& se, double k = 2.0) {
    for (std::size_t i = 1; i < errors.size(); ++i) {
        const double s = std::sqrt(se[i] * se[i] + se[i - 1] * se[i - 1]);
        if (errors[i] > errors[i - 1] + k * s) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Path regularity
// ---------------------------------------------------------------------------

namespace detail {

/// Trapezoid weights over fine nodes ir..(i+1)r; the Z value used at fine node j is Z_j for
/// j < N and Z_{N-1} at the terminal node.
inline std::size_t z_index(std::size_t j, std::size_t N) { return std::min(j, N - 1); }

} // namespace detail

/// Zbar_i = E[(1/|I_i|) int_{I_i} Z dt | X_{t_i}] on the coarse partition, by regression.
/// Layout: paths x coarse steps x d.
inline Vec zhang_zbar(const BackwardSolution& base, const PathEnsemble& e, const TimeGrid& partition,
                      const RegressionBasis& basis) {
    const std::size_t r = e.grid.refinement_of(partition);
    const std::size_t M = base.paths, N = base.steps, d = base.dim, Nc = partition.steps();
    Vec out(M * Nc * d, 0.0);
    Vec avg(M), fit(M);
    for (std::size_t i = 0; i < Nc; ++i) {
        Regressor reg(e.at(i * r), basis);
        const double len = partition.dt(i);
        for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t m = 0; m < M; ++m) {
                double acc = 0.0;
                for (std::size_t j = i * r; j < (i + 1) * r; ++j) {
                    const double h = e.grid.dt(j);
                    acc += 0.5 * h * (base.z(m, detail::z_index(j, N), k) + base.z(m, detail::z_index(j + 1, N), k));
                }
                avg[m] = acc / len;
            }
            reg.fitted(reg.solve(avg), fit);
            for (std::size_t m = 0; m < M; ++m) out[(m * Nc + i) * d + k] = fit[m];
        }
    }
    return out;
}

enum class RegularityMode { left_endpoint, zbar };

struct StatEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// sum_i E[(int_{I_i} |Z_t - R_i|^2 dt)^{p/2}] with R_i = Z_{t_i} or Zbar_i; the inner integral
/// is a trapezoid over the fine nodes.
inline StatEstimate path_regularity_stat(const BackwardSolution& base, const PathEnsemble& e, const TimeGrid& partition,
                                         double p, RegularityMode mode, const RegressionBasis& basis) {
    require(p >= 2.0, Errc::invalid_argument, "path_regularity_stat: p must be at least 2");
    const std::size_t r = e.grid.refinement_of(partition);
    const std::size_t M = base.paths, N = base.steps, d = base.dim, Nc = partition.steps();
    Vec zbar;
    if (mode == RegularityMode::zbar) zbar = zhang_zbar(base, e, partition, basis);
    Vec per(M, 0.0);
    parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
        Vec ref(d);
        for (std::size_t m = lo; m < hi; ++m) {
            double total = 0.0;
            for (std::size_t i = 0; i < Nc; ++i) {
                for (std::size_t k = 0; k < d; ++k)
                    ref[k] = mode == RegularityMode::zbar ? zbar[(m * Nc + i) * d + k] : base.z(m, i * r, k);
                auto sq = [&](std::size_t j) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double v = base.z(m, detail::z_index(j, N), k) - ref[k];
                        s += v * v;
                    }
                    return s;
                };
                double integral = 0.0;
                for (std::size_t j = i * r; j < (i + 1) * r; ++j) integral += 0.5 * e.grid.dt(j) * (sq(j) + sq(j + 1));
                total += std::pow(integral, p / 2.0);
            }
            per[m] = total;
        }
    });
    double s = 0.0;
    for (double v : per) s += v;
    const double mean = s / static_cast<double>(M);
    double var = 0.0;
    for (double v : per) var += (v - mean) * (v - mean);
    var /= static_cast<double>(std::max<std::size_t>(M - 1, 1));
    return {mean, std::sqrt(var / static_cast<double>(M))};
}

struct IncrementRow {
    std::size_t lag_steps = 0;
    double lag = 0.0;
    double value = 0.0;
    double std_error = 0.0;
    double ratio = 0.0; ///< value / lag^{p/2}
};

/// For each lag (in grid steps), the largest over window starts s of E[max_{s<=r<=s+lag} |Y_r - Y_s|^p],
/// with non-overlapping windows.
inline std::vector<IncrementRow> y_increment_stat(const BackwardSolution& base, const TimeGrid& grid, double p,
                                                  const std::vector<std::size_t>& lags) {
    require(p >= 2.0, Errc::invalid_argument, "y_increment_stat: p must be at least 2");
    const std::size_t M = base.paths, N = base.steps;
    std::vector<IncrementRow> rows;
    for (std::size_t lag : lags) {
        require(lag >= 1 && lag <= N, Errc::invalid_argument, "y_increment_stat: lag outside the grid");
        IncrementRow row;
        row.lag_steps = lag;
        row.lag = grid[lag] - grid[0];
        bool first = true;
        for (std::size_t s0 = 0; s0 + lag <= N; s0 += lag) {
            double sum = 0.0, sum2 = 0.0;
            for (std::size_t m = 0; m < M; ++m) {
                double mx = 0.0;
                for (std::size_t r = s0 + 1; r <= s0 + lag; ++r) mx = std::max(mx, std::abs(base.y(m, r) - base.y(m, s0)));
                const double v = std::pow(mx, p);
                sum += v;
                sum2 += v * v;
            }
            const double mean = sum / static_cast<double>(M);
            if (first || mean > row.value) {
                const double var = std::max(0.0, (sum2 - static_cast<double>(M) * mean * mean) / static_cast<double>(M - 1));
                row.value = mean;
                row.std_error = std::sqrt(var / static_cast<double>(M));
                row.lag = grid[s0 + lag] - grid[s0];
                first = false;
            }
        }
        row.ratio = row.value / std::pow(row.lag, p / 2.0);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Truncation and stability
// ---------------------------------------------------------------------------

enum class TruncationReference { oracle, large_n };

struct TruncationCurve {
    ConvergenceReport report;        ///< abscissa n, error E[sup_i |Y^n - Y^ref|^{2p}] (or |Y0 error| for oracle)
    std::vector<double> z_errors;    ///< E[sum_i |Z^n - Z^ref|^2 dt]
    std::vector<double> z_stderrs;
    std::optional<int> stabilization;
    int reference_level = 0;
    std::vector<bool> bit_identical; ///< Y and Z equal to the reference bit for bit
};

inline TruncationCurve truncation_error_curve(const FBSDEProblem& problem, const PathEnsemble& e,
                                              const RegressionBasis& basis, const std::vector<int>& n_list,
                                              TruncationReference reference, const RunConfig& cfg, double p = 1.0,
                                              std::optional<double> oracle_y0 = std::nullopt) {
    require(!n_list.empty(), Errc::invalid_argument, "truncation_error_curve: empty n_list");
    for (std::size_t j = 1; j < n_list.size(); ++j)
        require(n_list[j] > n_list[j - 1], Errc::invalid_argument, "truncation_error_curve: n_list must increase");
    const std::size_t M = e.paths, N = e.steps(), d = e.dim;
    TruncationCurve c;
    c.report.experiment = "truncation";
    c.report.seed = e.seed;
    c.report.paths = M;
    c.report.basis = describe(basis);
    std::vector<BackwardSolution> sols;
    for (int n : n_list) sols.push_back(lsmc_solve(problem, e, basis, n, cfg));
    for (std::size_t j = 0; j < n_list.size(); ++j)
        if (sols[j].max_abs_y_eval <= n_list[j] && sols[j].max_abs_z_eval <= n_list[j]) {
            c.stabilization = n_list[j];
            break;
        }
    BackwardSolution ref;
    if (reference == TruncationReference::large_n) {
        c.reference_level = 2 * (c.stabilization ? *c.stabilization : n_list.back());
        ref = lsmc_solve(problem, e, basis, c.reference_level, cfg);
    } else {
        require(oracle_y0.has_value(), Errc::invalid_argument, "truncation_error_curve: oracle reference unavailable");
    }
    for (std::size_t j = 0; j < n_list.size(); ++j) {
        const auto& s = sols[j];
        c.report.abscissae.push_back(n_list[j]);
        if (reference == TruncationReference::oracle) {
            c.report.errors.push_back(std::abs(s.y0() - *oracle_y0));
            c.report.stderrs.push_back(0.0);
            c.z_errors.push_back(0.0);
            c.z_stderrs.push_back(0.0);
            c.bit_identical.push_back(false);
            continue;
        }
        double sy = 0, sy2 = 0, sz = 0, sz2 = 0;
        for (std::size_t m = 0; m < M; ++m) {
            double sup = 0.0;
            for (std::size_t i = 0; i <= N; ++i) sup = std::max(sup, std::abs(s.y(m, i) - ref.y(m, i)));
            const double v = std::pow(sup, 2.0 * p);
            sy += v;
            sy2 += v * v;
            double zi = 0.0;
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t k = 0; k < d; ++k) {
                    const double dz = s.z(m, i, k) - ref.z(m, i, k);
                    zi += dz * dz * e.grid.dt(i);
                }
            sz += zi;
            sz2 += zi * zi;
        }
        const double Md = static_cast<double>(M);
        const double my = sy / Md, mz = sz / Md;
        c.report.errors.push_back(my);
        c.report.stderrs.push_back(std::sqrt(std::max(0.0, sy2 / Md - my * my) / Md));
        c.z_errors.push_back(mz);
        c.z_stderrs.push_back(std::sqrt(std::max(0.0, sz2 / Md - mz * mz) / Md));
        c.bit_identical.push_back(s.Y == ref.Y && s.Z == ref.Z);
    }
    c.report.refit();
    return c;
}

struct StabilityResult {
    ConvergenceReport report;       ///< abscissa k, error sup_{m,i} |Y^k - Y|
    std::vector<double> z_errors;   ///< E[sum_i |Z^k - Z|^2 dt]
    std::vector<double> rhs_ratio;  ///< E[sup|dY|^2] / (E|dxi|^2 + E(int |dg| dt)^2), constants set to 1
};

/// Solves every ladder problem on the shared ensemble and compares with the limit problem.
inline StabilityResult stability_experiment(const FBSDEProblem& limit, const std::vector<FBSDEProblem>& ladder,
                                            const PathEnsemble& e, const RegressionBasis& basis, const RunConfig& cfg,
                                            Truncation n = untruncated) {
    const std::size_t M = e.paths, N = e.steps(), d = e.dim;
    const BackwardSolution ref = lsmc_solve(limit, e, basis, n, cfg);
    StabilityResult out;
    out.report.experiment = "stability";
    out.report.seed = e.seed;
    out.report.paths = M;
    out.report.basis = describe(basis);
    Vec scratch(d);
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        const BackwardSolution s = lsmc_solve(ladder[k], e, basis, n, cfg);
        double sup = 0.0, lhs = 0.0, rhs_xi = 0.0, rhs_g = 0.0, zerr = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            double psup = 0.0;
            for (std::size_t i = 0; i <= N; ++i) psup = std::max(psup, std::abs(s.y(m, i) - ref.y(m, i)));
            sup = std::max(sup, psup);
            lhs += psup * psup;
            const double dxi = s.y(m, N) - ref.y(m, N);
            rhs_xi += dxi * dxi;
            double gint = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const ConstSpan x(e.state(m, i), d);
                const ConstSpan z(&ref.Z[(m * N + i) * d], d);
                const double ga = evaluate_driver(ladder[k].driver, e.grid[i], x, ref.y(m, i), z, n, scratch);
                const double gb = evaluate_driver(limit.driver, e.grid[i], x, ref.y(m, i), z, n, scratch);
                gint += std::abs(ga - gb) * e.grid.dt(i);
                for (std::size_t c = 0; c < d; ++c) {
                    const double dz = s.z(m, i, c) - ref.z(m, i, c);
                    zerr += dz * dz * e.grid.dt(i);
                }
            }
            rhs_g += gint * gint;
        }
        const double Md = static_cast<double>(M);
        out.report.abscissae.push_back(static_cast<double>(k + 1));
        out.report.errors.push_back(sup);
        out.report.stderrs.push_back(0.0);
        out.z_errors.push_back(zerr / Md);
        const double rhs = (rhs_xi + rhs_g) / Md;
        out.rhs_ratio.push_back(rhs > 0.0 ? (lhs / Md) / rhs : (lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
    }
    out.report.refit();
    return out;
}

} // namespace qfbsde
