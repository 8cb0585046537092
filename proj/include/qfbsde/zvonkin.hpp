#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "qfbsde/core.hpp"

namespace qfbsde {

struct SpaceGrid {
    double lo = -5.0;
    double hi = 5.0;
    std::size_t points = 512;

    double step() const { return (hi - lo) / static_cast<double>(points - 1); }
    double operator[](std::size_t j) const { return lo + step() * static_cast<double>(j); }
};

/// Solves u_t + 1/2 u_xx + b u_x - lambda u = -b backwards from u(T) = 0 and exposes
/// Psi = x + u, its inverse, and the transformed coefficients.
class ZvonkinTransform {
public:
    ZvonkinTransform(std::function<double(double, double)> b, double lambda, SpaceGrid space, TimeGrid time)
        : lambda_(lambda), space_(space), time_(std::move(time)) {
        require(lambda > 0.0, Errc::invalid_argument, "zvonkin: lambda must be positive");
        require(space_.points >= 3 && space_.hi > space_.lo, Errc::invalid_argument, "zvonkin: bad space grid");
        const std::size_t J = space_.points, N = time_.steps();
        const double h = space_.step();
        u_.assign((N + 1) * J, 0.0);
        bvals_.assign((N + 1) * J, 0.0);
        for (std::size_t i = 0; i <= N; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                const double v = b(time_[i], space_[j]);
                require(std::isfinite(v), Errc::non_finite, "zvonkin: drift not finite on grid");
                bvals_[i * J + j] = v;
            }
        Vec sub(J), diag(J), sup(J), rhs(J);
        for (std::size_t ii = N; ii-- > 0;) {
            const double dt = time_.dt(ii);
            const double* bi = &bvals_[ii * J];
            const double* next = &u_[(ii + 1) * J];
            for (std::size_t j = 0; j < J; ++j) {
                diag[j] = 1.0 / dt + lambda_ + 1.0 / (h * h);
                rhs[j] = next[j] / dt + bi[j];
                if (j == 0) {
                    sub[j] = 0.0;
                    sup[j] = -1.0 / (h * h);
                } else if (j + 1 == J) {
                    sub[j] = -1.0 / (h * h);
                    sup[j] = 0.0;
                } else {
                    sub[j] = -0.5 / (h * h) + bi[j] / (2 * h);
                    sup[j] = -0.5 / (h * h) - bi[j] / (2 * h);
                }
            }
            thomas(sub, diag, sup, rhs, &u_[ii * J]);
        }
        ux_.assign((N + 1) * J, 0.0);
        min_slope_ = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i <= N; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                double d = 0.0;
                if (j > 0 && j + 1 < J) d = (u(i, j + 1) - u(i, j - 1)) / (2 * h);
                ux_[i * J + j] = d;
                min_slope_ = std::min(min_slope_, 1.0 + d);
            }
        // Psi is piecewise linear between nodes, so its own increments must also be positive.
        for (std::size_t i = 0; i <= N; ++i)
            for (std::size_t j = 0; j + 1 < J; ++j)
                min_slope_ = std::min(min_slope_, 1.0 + (u(i, j + 1) - u(i, j)) / h);
        require(min_slope_ > 0.0, Errc::diffeomorphism,
                "zvonkin: 1 + u_x is not positive; increase lambda or refine the grid");
    }

    double u(std::size_t i, std::size_t j) const { return u_[i * space_.points + j]; }
    double ux(std::size_t i, std::size_t j) const { return ux_[i * space_.points + j]; }
    const SpaceGrid& space() const { return space_; }
    const TimeGrid& time() const { return time_; }
    double lambda() const { return lambda_; }
    double min_one_plus_ux() const { return min_slope_; }

    /// Max over interior nodes and steps of the discrete PDE residual.
    double residual() const {
        const std::size_t J = space_.points, N = time_.steps();
        const double h = space_.step();
        double worst = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double dt = time_.dt(i);
            for (std::size_t j = 1; j + 1 < J; ++j) {
                const double uxx = (u(i, j + 1) - 2 * u(i, j) + u(i, j - 1)) / (h * h);
                const double r = (u(i + 1, j) - u(i, j)) / dt + 0.5 * uxx + bvals_[i * J + j] * ux(i, j) -
                                 lambda_ * u(i, j) + bvals_[i * J + j];
                worst = std::max(worst, std::abs(r));
            }
        }
        return worst;
    }

    /// u(t_i, x) by linear interpolation, held constant outside the grid.
    double u_at(std::size_t i, double x) const { return interp(&u_[i * space_.points], x); }
    double ux_at(std::size_t i, double x) const { return interp(&ux_[i * space_.points], x); }

    double psi(std::size_t i, double x) const { return x + u_at(i, x); }

    double psi_inverse(std::size_t i, double y, double tol = 1e-10) const {
        double umin = u(i, 0), umax = u(i, 0);
        for (std::size_t j = 0; j < space_.points; ++j) {
            umin = std::min(umin, u(i, j));
            umax = std::max(umax, u(i, j));
        }
        double lo = y - umax - 1.0, hi = y - umin + 1.0;
        while (hi - lo > 0.25 * tol) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (psi(i, mid) < y) lo = mid;
            else hi = mid;
        }
        return 0.5 * (lo + hi);
    }

    double b_tilde(std::size_t i, double y) const { return -lambda_ * u_at(i, psi_inverse(i, y)); }
    double sigma_tilde(std::size_t i, double y) const { return 1.0 + ux_at(i, psi_inverse(i, y)); }

private:
    static void thomas(const Vec& a, const Vec& b, const Vec& c, const Vec& d, double* x) {
        const std::size_t n = b.size();
        Vec cp(n), dp(n);
        cp[0] = c[0] / b[0];
        dp[0] = d[0] / b[0];
        for (std::size_t j = 1; j < n; ++j) {
            const double den = b[j] - a[j] * cp[j - 1];
            cp[j] = c[j] / den;
            dp[j] = (d[j] - a[j] * dp[j - 1]) / den;
        }
        x[n - 1] = dp[n - 1];
        for (std::size_t j = n - 1; j-- > 0;) x[j] = dp[j] - cp[j] * x[j + 1];
    }

    double interp(const double* row, double x) const {
        const double h = space_.step();
        if (x <= space_.lo) return row[0];
        if (x >= space_.hi) return row[space_.points - 1];
        const double pos = (x - space_.lo) / h;
        std::size_t j = static_cast<std::size_t>(pos);
        if (j + 1 >= space_.points) j = space_.points - 2;
        const double w = pos - static_cast<double>(j);
        return (1 - w) * row[j] + w * row[j + 1];
    }

    double lambda_;
    SpaceGrid space_;
    TimeGrid time_;
    Vec u_;
    Vec ux_;
    Vec bvals_;
    double min_slope_ = 0.0;
};

inline ZvonkinTransform zvonkin_transform_1d(std::function<double(double, double)> b, double lambda,
                                             SpaceGrid space, TimeGrid time) {
    return ZvonkinTransform(std::move(b), lambda, space, std::move(time));
}

} // namespace qfbsde
