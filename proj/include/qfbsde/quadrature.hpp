#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qfbsde/error.hpp"

namespace qfbsde {

/// Nodes and weights for E[h(xi)], xi ~ N(0,1). Weights sum to one.
struct GaussHermite {
    std::vector<double> nodes;
    std::vector<double> weights;

    double expectation(const std::function<double(double)>& h) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * h(nodes[k]);
        return acc;
    }
};

/// Golub-Welsch on the probabilists' Hermite Jacobi matrix.
inline GaussHermite gauss_hermite(int n) {
    require(n >= 1, Errc::invalid_argument, "gauss_hermite: need at least one node");
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
        jacobi(k - 1, k) = jacobi(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    GaussHermite gh;
    gh.nodes.resize(n);
    gh.weights.resize(n);
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        gh.nodes[k] = eig.eigenvalues()(k);
        const double v = eig.eigenvectors()(0, k);
        gh.weights[k] = v * v;
        total += gh.weights[k];
    }
    for (double& w : gh.weights) w /= total;
    // Symmetrize so odd integrands vanish to the last bit.
    for (int k = 0; k < n / 2; ++k) {
        const double node = 0.5 * (gh.nodes[n - 1 - k] - gh.nodes[k]);
        const double weight = 0.5 * (gh.weights[k] + gh.weights[n - 1 - k]);
        gh.nodes[k] = -node;
        gh.nodes[n - 1 - k] = node;
        gh.weights[k] = gh.weights[n - 1 - k] = weight;
    }
    if (n % 2 == 1) gh.nodes[n / 2] = 0.0;
    return gh;
}

/// Running composite-trapezoid integral of samples on a uniform grid with step h.
inline std::vector<double> cumulative_trapezoid(std::span<const double> values, double h) {
    std::vector<double> out(values.size(), 0.0);
    for (std::size_t i = 1; i < values.size(); ++i)
        out[i] = out[i - 1] + 0.5 * h * (values[i] + values[i - 1]);
    return out;
}

inline double trapezoid(const std::function<double(double)>& fn, double lo, double hi, int steps) {
    require(steps >= 1, Errc::invalid_argument, "trapezoid: steps must be positive");
    if (hi == lo) return 0.0;
    const double h = (hi - lo) / steps;
    double acc = 0.5 * (fn(lo) + fn(hi));
    for (int i = 1; i < steps; ++i) acc += fn(lo + i * h);
    const double result = acc * h;
    require(std::isfinite(result), Errc::non_finite, "trapezoid: non-finite integral");
    return result;
}

/// Piecewise-linear table on sorted abscissae, flat outside the range.
struct Table1D {
    std::vector<double> x;
    std::vector<double> y;

    double operator()(double at) const {
        if (x.empty()) return 0.0;
        if (at <= x.front()) return y.front();
        if (at >= x.back()) return y.back();
        const auto it = std::upper_bound(x.begin(), x.end(), at);
        const std::size_t hi = static_cast<std::size_t>(it - x.begin());
        const std::size_t lo = hi - 1;
        const double w = (at - x[lo]) / (x[hi] - x[lo]);
        return (1.0 - w) * y[lo] + w * y[hi];
    }
};

/// Cubic Hermite interpolant from nodal values and slopes on a sorted grid.
struct HermiteTable {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> dy;

    double operator()(double at) const {
        if (at <= x.front()) return y.front() + dy.front() * (at - x.front());
        if (at >= x.back()) return y.back() + dy.back() * (at - x.back());
        const auto it = std::upper_bound(x.begin(), x.end(), at);
        const std::size_t hi = static_cast<std::size_t>(it - x.begin());
        const std::size_t lo = hi - 1;
        const double h = x[hi] - x[lo];
        const double s = (at - x[lo]) / h;
        const double s2 = s * s;
        const double s3 = s2 * s;
        return (2 * s3 - 3 * s2 + 1) * y[lo] + (s3 - 2 * s2 + s) * h * dy[lo] +
               (-2 * s3 + 3 * s2) * y[hi] + (s3 - s2) * h * dy[hi];
    }

    double derivative(double at) const {
        if (at <= x.front()) return dy.front();
        if (at >= x.back()) return dy.back();
        const auto it = std::upper_bound(x.begin(), x.end(), at);
        const std::size_t hi = static_cast<std::size_t>(it - x.begin());
        const std::size_t lo = hi - 1;
        const double h = x[hi] - x[lo];
        const double s = (at - x[lo]) / h;
        const double s2 = s * s;
        return ((6 * s2 - 6 * s) * y[lo] + (-6 * s2 + 6 * s) * y[hi]) / h +
               (3 * s2 - 4 * s + 1) * dy[lo] + (3 * s2 - 2 * s) * dy[hi];
    }
};

} // namespace qfbsde
