#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "qfbsde/backward.hpp"
#include "qfbsde/core.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/parallel.hpp"
#include "qfbsde/regression.hpp"

namespace qfbsde {

/// Row vector field G (paths x (N+1) x d) and matrix field H (paths x N x d x d) with
/// H[k][j] the x_j-derivative of the k-th Z component.
struct LinearField {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::size_t dim = 1;
    std::size_t start = 0;
    Vec G;
    Vec H;

    double& g(std::size_t m, std::size_t i, std::size_t j) { return G[(m * (steps + 1) + i) * dim + j]; }
    double g(std::size_t m, std::size_t i, std::size_t j) const { return G[(m * (steps + 1) + i) * dim + j]; }
    double& h(std::size_t m, std::size_t i, std::size_t k, std::size_t j) { return H[((m * steps + i) * dim + k) * dim + j]; }
    double h(std::size_t m, std::size_t i, std::size_t k, std::size_t j) const { return H[((m * steps + i) * dim + k) * dim + j]; }
};

struct DerivativeSolution {
    LinearField gradient;            // (grad Y, grad Z)
    std::vector<std::size_t> anchors;
    std::vector<LinearField> malliavin; // (D_u Y, D_u Z) per anchor, zero before the anchor
};

inline std::vector<std::size_t> default_anchors(std::size_t N) {
    std::vector<std::size_t> a = {0, N / 4, N / 2, 3 * N / 4};
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
}

namespace detail {

inline void terminal_gradient(const Terminal& phi, ConstSpan x, MutSpan out) {
    if (phi.gradient) {
        phi.gradient(x, out);
        return;
    }
    constexpr double h = 1e-5;
    Vec xp(x.begin(), x.end());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double keep = xp[k];
        xp[k] = keep + h;
        const double up = phi.value(xp);
        xp[k] = keep - h;
        const double dn = phi.value(xp);
        xp[k] = keep;
        out[k] = (up - dn) / (2 * h);
    }
}

/// Backward induction for the linear BSDE
///   G_t = grad phi(X_T) J_T + int (g_x J + g_y G + sum_k g_{z_k} H_k) ds - int H dB
/// with J a matrix flow supplied through jac(m, i, out) and jac_inv(m, i, out).
/// Regressions act on the reduced variable G_{i+1} J_{i+1}^{-1}; J_{i+1} is known at t_i
/// under the Euler scheme and multiplies the fitted values back.
template <class Jac, class JacInv>
LinearField solve_linear_flow_bsde(const FBSDEProblem& problem, const PathEnsemble& e, const BackwardSolution& base,
                                   const RegressionBasis& basis, std::size_t start, Jac&& jac, JacInv&& jac_inv,
                                   double terminal_scale) {
    const std::size_t M = e.paths, N = e.steps(), d = e.dim;
    require(base.paths == M && base.steps == N && base.dim == d, Errc::invalid_argument,
            "derivative BSDE: base solution does not match the ensemble");
    require(start <= N, Errc::invalid_argument, "derivative BSDE: anchor beyond grid");
    LinearField f;
    f.paths = M;
    f.steps = N;
    f.dim = d;
    f.start = start;
    f.G.assign(M * (N + 1) * d, 0.0);
    f.H.assign(M * N * d * d, 0.0);
    parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
        Vec grad(d), J(d * d);
        for (std::size_t m = lo; m < hi; ++m) {
            terminal_gradient(problem.terminal, ConstSpan(e.state(m, N), d), grad);
            jac(m, N, J.data());
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t l = 0; l < d; ++l) acc += grad[l] * J[l * d + j];
                f.g(m, N, j) = terminal_scale * acc;
            }
        }
    });
    std::vector<Vec> R(d, Vec(M)), ER(d, Vec(M)), HR(d * d, Vec(M));
    Vec target(M);
    for (std::size_t i = N; i-- > start;) {
        const double dt = e.grid.dt(i);
        const double t = e.grid[i];
        parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
            Vec Jinv(d * d);
            for (std::size_t m = lo; m < hi; ++m) {
                jac_inv(m, i + 1, Jinv.data());
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (std::size_t l = 0; l < d; ++l) acc += f.g(m, i + 1, l) * Jinv[l * d + j];
                    R[j][m] = acc;
                }
            }
        });
        Regressor reg(e.at(i), basis);
        for (std::size_t j = 0; j < d; ++j) reg.fitted(reg.solve(R[j]), ER[j]);
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t j = 0; j < d; ++j) {
                for (std::size_t m = 0; m < M; ++m) target[m] = (R[j][m] - ER[j][m]) * e.dB(m, i, k) / dt;
                reg.fitted(reg.solve(target), HR[k * d + j]);
            }
        parallel_for(0, M, [&](std::size_t lo, std::size_t hi) {
            Vec Jn(d * d), Ji(d * d), E(d);
            DriverGradient dg;
            for (std::size_t m = lo; m < hi; ++m) {
                jac(m, i + 1, Jn.data());
                jac(m, i, Ji.data());
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (std::size_t l = 0; l < d; ++l) acc += ER[l][m] * Jn[l * d + j];
                    E[j] = acc;
                }
                for (std::size_t k = 0; k < d; ++k)
                    for (std::size_t j = 0; j < d; ++j) {
                        double acc = 0.0;
                        for (std::size_t l = 0; l < d; ++l) acc += HR[k * d + l][m] * Jn[l * d + j];
                        f.h(m, i, k, j) = acc;
                    }
                driver_gradient(problem.driver, t, ConstSpan(e.state(m, i), d), base.y(m, i),
                                ConstSpan(&base.Z[(m * N + i) * d], d), base.truncation, dg);
                const double denom = 1.0 - dt * dg.gy;
                require(denom != 0.0 && std::isfinite(denom), Errc::non_finite, "derivative BSDE: singular implicit step");
                for (std::size_t j = 0; j < d; ++j) {
                    double drive = 0.0;
                    for (std::size_t l = 0; l < d; ++l) drive += dg.gx[l] * Ji[l * d + j];
                    drive *= terminal_scale;
                    for (std::size_t k = 0; k < d; ++k) drive += dg.gz[k] * f.h(m, i, k, j);
                    const double v = (E[j] + dt * drive) / denom;
                    require(std::isfinite(v), Errc::non_finite, "derivative BSDE: non-finite value");
                    f.g(m, i, j) = v;
                }
            }
        });
    }
    return f;
}

} // namespace detail

/// Classical derivative (grad Y, grad Z) of the solution with respect to x0.
/// `terminal_scale` multiplies the inhomogeneous data (terminal and g_x terms).
inline LinearField solve_gradient_bsde(const FBSDEProblem& problem, const PathEnsemble& e, const FlowFields& flow,
                                       const BackwardSolution& base, const RegressionBasis& basis,
                                       double terminal_scale = 1.0) {
    const std::size_t d = e.dim;
    require(flow.paths == e.paths && flow.steps == e.steps() && flow.dim == d, Errc::invalid_argument,
            "solve_gradient_bsde: flow does not match the ensemble");
    auto jac = [&](std::size_t m, std::size_t i, double* out) { std::copy_n(flow.J(m, i), d * d, out); };
    auto jac_inv = [&](std::size_t m, std::size_t i, double* out) { std::copy_n(flow.Jinv(m, i), d * d, out); };
    return detail::solve_linear_flow_bsde(problem, e, base, basis, 0, jac, jac_inv, terminal_scale);
}

/// Malliavin derivative (D_u Y, D_u Z) for one anchor index u, using D_u X_t = grad X_t (grad X_u)^{-1}.
inline LinearField solve_malliavin_anchor(const FBSDEProblem& problem, const PathEnsemble& e, const FlowFields& flow,
                                          const BackwardSolution& base, std::size_t anchor,
                                          const RegressionBasis& basis) {
    const std::size_t d = e.dim;
    require(anchor <= e.steps(), Errc::index_order, "solve_malliavin_bsde: anchor beyond grid");
    auto jac = [&](std::size_t m, std::size_t i, double* out) {
        detail::MatMap(out, d, d) = detail::CMatMap(flow.J(m, i), d, d) * detail::CMatMap(flow.Jinv(m, anchor), d, d);
    };
    auto jac_inv = [&](std::size_t m, std::size_t i, double* out) {
        detail::MatMap(out, d, d) = detail::CMatMap(flow.J(m, anchor), d, d) * detail::CMatMap(flow.Jinv(m, i), d, d);
    };
    return detail::solve_linear_flow_bsde(problem, e, base, basis, anchor, jac, jac_inv, 1.0);
}

inline DerivativeSolution solve_malliavin_bsde(const FBSDEProblem& problem, const PathEnsemble& e,
                                               const FlowFields& flow, const BackwardSolution& base,
                                               const std::vector<std::size_t>& anchors,
                                               const RegressionBasis& basis) {
    DerivativeSolution out;
    out.anchors = anchors;
    for (std::size_t u : anchors) out.malliavin.push_back(solve_malliavin_anchor(problem, e, flow, base, u, basis));
    return out;
}

inline DerivativeSolution solve_derivatives(const FBSDEProblem& problem, const PathEnsemble& e, const FlowFields& flow,
                                            const BackwardSolution& base, const std::vector<std::size_t>& anchors,
                                            const RegressionBasis& basis) {
    DerivativeSolution out = solve_malliavin_bsde(problem, e, flow, base, anchors, basis);
    out.gradient = solve_gradient_bsde(problem, e, flow, base, basis);
    return out;
}

// ---------------------------------------------------------------------------
// Representation identities
// ---------------------------------------------------------------------------

struct IdentityDeviation {
    double max_deviation = 0.0; ///< max over grid times of mean|A - B| / mean|B|
    double stderr_at_max = 0.0;
    std::size_t argmax = 0;
    bool relative = true;        ///< false where mean|B| vanished and the absolute deviation is used
};

struct RepresentationReport {
    IdentityDeviation malliavin_y;  ///< D_u Y_t grad X_u vs grad Y_t
    IdentityDeviation z_gradient;   ///< Z_{t_i} grad X_{t_{i+1}} vs grad Y_{t_i}
    IdentityDeviation z_gradient_left; ///< Z_{t_i} grad X_{t_i} vs grad Y_{t_i}
    IdentityDeviation malliavin_z;  ///< D_u Z_t grad X_u vs grad Z_t
};

namespace detail {

/// Accumulates per-time mean |A - B| and mean |B| over paths and components.
class DeviationAccumulator {
public:
    void add_time(std::size_t time, const Vec& diff, const Vec& ref) {
        const std::size_t M = diff.size();
        double sd = 0.0, sr = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            sd += diff[m];
            sr += ref[m];
        }
        const double md = sd / static_cast<double>(M);
        const double mr = sr / static_cast<double>(M);
        double var = 0.0;
        for (std::size_t m = 0; m < M; ++m) var += (diff[m] - md) * (diff[m] - md);
        var /= static_cast<double>(std::max<std::size_t>(M - 1, 1));
        const double se = std::sqrt(var / static_cast<double>(M));
        const bool rel = mr > 0.0;
        const double dev = rel ? md / mr : md;
        const double dse = rel ? se / mr : se;
        if (!seen_ || dev > out_.max_deviation) {
            out_.max_deviation = dev;
            out_.stderr_at_max = dse;
            out_.argmax = time;
            out_.relative = rel;
        }
        seen_ = true;
    }
    IdentityDeviation result() const { return out_; }

private:
    IdentityDeviation out_;
    bool seen_ = false;
};

} // namespace detail

inline RepresentationReport representation_check(const BackwardSolution& base, const DerivativeSolution& deriv,
                                                 const FlowFields& flow) {
    const std::size_t M = base.paths, N = base.steps, d = base.dim;
    const LinearField& gr = deriv.gradient;
    require(gr.paths == M && gr.steps == N, Errc::invalid_argument, "representation_check: gradient field missing");
    RepresentationReport rep;
    Vec diff(M), ref(M);
    // Z grad X vs grad Y, step-end and left pairing.
    for (int pairing = 0; pairing < 2; ++pairing) {
        detail::DeviationAccumulator acc;
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t ji = pairing == 0 ? i + 1 : i;
            for (std::size_t m = 0; m < M; ++m) {
                const double* J = flow.J(m, ji);
                double a = 0.0, b = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double zj = 0.0;
                    for (std::size_t k = 0; k < d; ++k) zj += base.z(m, i, k) * J[k * d + j];
                    a += std::abs(zj - gr.g(m, i, j));
                    b += std::abs(gr.g(m, i, j));
                }
                diff[m] = a;
                ref[m] = b;
            }
            acc.add_time(i, diff, ref);
        }
        (pairing == 0 ? rep.z_gradient : rep.z_gradient_left) = acc.result();
    }
    detail::DeviationAccumulator accY, accZ;
    bool anyY = false, anyZ = false;
    for (std::size_t a = 0; a < deriv.anchors.size(); ++a) {
        const std::size_t u = deriv.anchors[a];
        const LinearField& D = deriv.malliavin[a];
        for (std::size_t i = u; i <= N; ++i) {
            for (std::size_t m = 0; m < M; ++m) {
                const double* Ju = flow.J(m, u);
                double sa = 0.0, sb = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double v = 0.0;
                    for (std::size_t l = 0; l < d; ++l) v += D.g(m, i, l) * Ju[l * d + j];
                    sa += std::abs(v - gr.g(m, i, j));
                    sb += std::abs(gr.g(m, i, j));
                }
                diff[m] = sa;
                ref[m] = sb;
            }
            accY.add_time(i, diff, ref);
            anyY = true;
            if (i == N) continue;
            for (std::size_t m = 0; m < M; ++m) {
                const double* Ju = flow.J(m, u);
                double sa = 0.0, sb = 0.0;
                for (std::size_t k = 0; k < d; ++k)
                    for (std::size_t j = 0; j < d; ++j) {
                        double v = 0.0;
                        for (std::size_t l = 0; l < d; ++l) v += D.h(m, i, k, l) * Ju[l * d + j];
                        sa += std::abs(v - gr.h(m, i, k, j));
                        sb += std::abs(gr.h(m, i, k, j));
                    }
                diff[m] = sa;
                ref[m] = sb;
            }
            accZ.add_time(i, diff, ref);
            anyZ = true;
        }
    }
    if (anyY) rep.malliavin_y = accY.result();
    if (anyZ) rep.malliavin_z = accZ.result();
    return rep;
}

/// Mean relative deviation of D_t Y_t (anchor u, time u) from Z_u, per anchor with u < N.
inline std::vector<double> diagonal_z_deviation(const BackwardSolution& base, const DerivativeSolution& deriv) {
    std::vector<double> out;
    const std::size_t M = base.paths, N = base.steps, d = base.dim;
    for (std::size_t a = 0; a < deriv.anchors.size(); ++a) {
        const std::size_t u = deriv.anchors[a];
        if (u >= N) continue;
        double sd = 0.0, sr = 0.0;
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < d; ++k) {
                sd += std::abs(deriv.malliavin[a].g(m, u, k) - base.z(m, u, k));
                sr += std::abs(base.z(m, u, k));
            }
        out.push_back(sr > 0 ? sd / sr : sd / static_cast<double>(M));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference cross-check
// ---------------------------------------------------------------------------

struct FdGradient {
    Vec value;
    Vec std_error;
};

/// Central difference of Y_0 across x0 +- h e_j with common random numbers.
inline FdGradient fd_gradient(const FBSDEProblem& problem, double h, const RunConfig& cfg, const TimeGrid& grid,
                              Truncation n = untruncated) {
    require(h >= 1e-8, Errc::invalid_argument, "fd_gradient: step below 1e-8");
    const std::size_t d = problem.dim;
    const PathEnsemble noise = sample_brownian(grid, cfg.paths, d, cfg.seed);
    FdGradient out;
    out.value.assign(d, 0.0);
    out.std_error.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        BackwardSolution sol[2];
        for (int side = 0; side < 2; ++side) {
            FBSDEProblem p = problem;
            p.x0[j] += side == 0 ? h : -h;
            PathEnsemble e = noise;
            euler_maruyama(p, e);
            sol[side] = lsmc_solve(p, e, cfg.basis, n, cfg);
        }
        out.value[j] = (sol[0].y0() - sol[1].y0()) / (2 * h);
        const std::size_t M = cfg.paths;
        const std::size_t col = std::min<std::size_t>(1, grid.steps());
        double s = 0.0, s2 = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const double v = (sol[0].y(m, col) - sol[1].y(m, col)) / (2 * h);
            s += v;
            s2 += v * v;
        }
        const double mean = s / static_cast<double>(M);
        const double var = std::max(0.0, (s2 - static_cast<double>(M) * mean * mean) / static_cast<double>(M - 1));
        out.std_error[j] = std::sqrt(var / static_cast<double>(M));
    }
    return out;
}

} // namespace qfbsde
