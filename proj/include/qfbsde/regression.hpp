#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qfbsde/error.hpp"

namespace qfbsde {

/// Regression basis for conditional expectations given the Markov state.
///
/// Regressors are standardized per coordinate before the basis is built. Polynomial bases
/// additionally clamp the standardized value to [-winsor, winsor] (0 disables the clamp);
/// high-degree monomials otherwise overshoot in the tails.
struct RegressionBasis {
    enum class Kind { polynomial, piecewise_linear };

    Kind kind = Kind::polynomial;
    int degree = 4;
    int bins = 16;
    double range_lo = -3.0;
    double range_hi = 3.0;
    double winsor = 2.0;
    double ridge = 1e-10;

    static RegressionBasis polynomial(int degree, double winsor = 2.0) {
        RegressionBasis b;
        b.kind = Kind::polynomial;
        b.degree = degree;
        b.winsor = winsor;
        return b;
    }

    static RegressionBasis piecewise_linear(int bins, double lo = -3.0, double hi = 3.0) {
        RegressionBasis b;
        b.kind = Kind::piecewise_linear;
        b.bins = bins;
        b.range_lo = lo;
        b.range_hi = hi;
        return b;
    }

    void validate() const {
        require(degree >= 0, Errc::invalid_argument, "RegressionBasis: degree must be non-negative");
        require(bins >= 2, Errc::invalid_argument, "RegressionBasis: need at least two bins");
        require(range_hi > range_lo, Errc::invalid_argument, "RegressionBasis: empty range");
        require(winsor >= 0.0, Errc::invalid_argument, "RegressionBasis: winsor must be non-negative");
        require(ridge >= 0.0, Errc::invalid_argument, "RegressionBasis: ridge must be non-negative");
    }
};

/// Strided view of an M x d block of states, e.g. X_{t_i} inside a path array.
struct StateView {
    const double* base = nullptr;
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::size_t stride = 0;

    double operator()(std::size_t m, std::size_t k) const { return base[m * stride + k]; }
    const double* row(std::size_t m) const { return base + m * stride; }
};

/// Least-squares projection onto {1} + basis(X). The intercept is handled by centering, so the
/// fitted values always have the target's sample mean and constant targets are reproduced.
class Regressor {
public:
    struct Fit {
        double intercept = 0.0;
        Eigen::VectorXd beta;
    };

    Regressor(StateView x, const RegressionBasis& basis) : basis_(basis), dim_(x.dim) {
        basis_.validate();
        const std::size_t M = x.rows;
        require(M >= 2, Errc::invalid_argument, "Regressor: need at least two samples");
        mean_.assign(dim_, 0.0);
        scale_.assign(dim_, 0.0);
        for (std::size_t k = 0; k < dim_; ++k) {
            double s = 0.0;
            for (std::size_t m = 0; m < M; ++m) s += x(m, k);
            const double mu = s / static_cast<double>(M);
            double v = 0.0;
            for (std::size_t m = 0; m < M; ++m) v += (x(m, k) - mu) * (x(m, k) - mu);
            const double sd = std::sqrt(v / static_cast<double>(M));
            mean_[k] = mu;
            scale_[k] = sd;
            if (sd > 1e-12 * (1.0 + std::abs(mu))) active_.push_back(k);
        }
        build_terms();
        const std::size_t p = columns_;
        require(M > p + 1, Errc::invalid_argument, "Regressor: more basis functions than samples");
        design_.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(p));
        colmean_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
        if (p == 0) return;
        std::vector<double> buf(p);
        for (std::size_t m = 0; m < M; ++m) {
            features(x.row(m), buf.data());
            for (std::size_t j = 0; j < p; ++j) design_(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) = buf[j];
        }
        colmean_ = design_.colwise().mean().transpose();
        design_.rowwise() -= colmean_.transpose();
        Eigen::MatrixXd gram = design_.transpose() * design_;
        // Rank is judged on the unregularized Gram matrix; the ridge only stabilizes the solve.
        ldlt_.compute(gram);
        const auto d = ldlt_.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        const double dmin = d.minCoeff();
        rank_deficient_ = !(dmin > 1e-12 * std::max(dmax, 1e-300)) || ldlt_.info() != Eigen::Success;
        if (rank_deficient_ && basis_.ridge == 0.0)
            throw Error(Errc::rank_deficient, "Regressor: singular design matrix");
        if (basis_.ridge > 0.0) {
            gram.diagonal().array() += basis_.ridge * static_cast<double>(M);
            ldlt_.compute(gram);
        }
    }

    std::size_t columns() const { return columns_ + 1; }
    bool rank_deficient() const { return rank_deficient_; }
    std::size_t samples() const { return static_cast<std::size_t>(design_.rows()); }

    Fit solve(std::span<const double> target) const {
        const std::size_t M = samples();
        require(target.size() == M, Errc::invalid_argument, "Regressor: target length mismatch");
        double mean = 0.0;
        for (double v : target) mean += v;
        mean /= static_cast<double>(M);
        double corr = 0.0;
        for (double v : target) corr += v - mean;
        mean += corr / static_cast<double>(M);
        Fit fit;
        fit.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(columns_));
        if (columns_ > 0) {
            Eigen::VectorXd centered(static_cast<Eigen::Index>(M));
            bool flat = true;
            for (std::size_t m = 0; m < M; ++m) {
                centered(static_cast<Eigen::Index>(m)) = target[m] - mean;
                flat = flat && target[m] == target[0];
            }
            if (!flat) fit.beta = ldlt_.solve(design_.transpose() * centered);
        }
        // Centered design: fitted = mean + (F - colmean) beta.
        fit.intercept = mean;
        for (double v : fit.beta) require(std::isfinite(v), Errc::non_finite, "Regressor: non-finite coefficient");
        return fit;
    }

    /// Fitted values on the training sample.
    void fitted(const Fit& fit, std::span<double> out) const {
        const std::size_t M = samples();
        if (columns_ == 0) {
            std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(M), fit.intercept);
            return;
        }
        const Eigen::VectorXd v = design_ * fit.beta;
        for (std::size_t m = 0; m < M; ++m) out[m] = fit.intercept + v(static_cast<Eigen::Index>(m));
    }

    std::vector<double> fit_values(std::span<const double> target) const {
        std::vector<double> out(samples());
        fitted(solve(target), out);
        return out;
    }

    /// Evaluates the fitted function at a new state.
    double predict(const Fit& fit, const double* x) const {
        if (columns_ == 0) return fit.intercept;
        std::vector<double> buf(columns_);
        features(x, buf.data());
        double acc = fit.intercept;
        for (std::size_t j = 0; j < columns_; ++j) acc += (buf[j] - colmean_(static_cast<Eigen::Index>(j))) * fit.beta(static_cast<Eigen::Index>(j));
        return acc;
    }

private:
    void build_terms() {
        const std::size_t a = active_.size();
        if (a == 0) {
            columns_ = 0;
            return;
        }
        if (basis_.kind == RegressionBasis::Kind::polynomial) {
            // Graded order: all exponent tuples of total degree 1..degree.
            for (int total = 1; total <= basis_.degree; ++total) {
                std::vector<int> e(a, 0);
                enumerate(e, 0, total);
            }
            columns_ = exponents_.size();
        } else {
            columns_ = a * static_cast<std::size_t>(basis_.bins);
        }
    }

    void enumerate(std::vector<int>& e, std::size_t pos, int remaining) {
        if (pos + 1 == e.size()) {
            e[pos] = remaining;
            exponents_.push_back(e);
            e[pos] = 0;
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            e[pos] = k;
            enumerate(e, pos + 1, remaining - k);
        }
        e[pos] = 0;
    }

    void features(const double* x, double* out) const {
        const std::size_t a = active_.size();
        double z[16];
        std::vector<double> zbig;
        double* zs = z;
        if (a > 16) {
            zbig.resize(a);
            zs = zbig.data();
        }
        for (std::size_t j = 0; j < a; ++j) {
            const std::size_t k = active_[j];
            zs[j] = (x[k] - mean_[k]) / scale_[k];
        }
        if (basis_.kind == RegressionBasis::Kind::polynomial) {
            if (basis_.winsor > 0.0)
                for (std::size_t j = 0; j < a; ++j) zs[j] = std::clamp(zs[j], -basis_.winsor, basis_.winsor);
            for (std::size_t c = 0; c < exponents_.size(); ++c) {
                double v = 1.0;
                for (std::size_t j = 0; j < a; ++j)
                    for (int p = 0; p < exponents_[c][j]; ++p) v *= zs[j];
                out[c] = v;
            }
        } else {
            const int bins = basis_.bins;
            const double w = (basis_.range_hi - basis_.range_lo) / bins;
            for (std::size_t j = 0; j < a; ++j) {
                const double zc = std::clamp(zs[j], basis_.range_lo, basis_.range_hi);
                for (int b = 1; b <= bins; ++b) {
                    const double knot = basis_.range_lo + b * w;
                    out[j * static_cast<std::size_t>(bins) + static_cast<std::size_t>(b - 1)] =
                        std::max(0.0, 1.0 - std::abs(zc - knot) / w);
                }
            }
        }
    }

    RegressionBasis basis_;
    std::size_t dim_;
    std::vector<double> mean_;
    std::vector<double> scale_;
    std::vector<std::size_t> active_;
    std::vector<std::vector<int>> exponents_;
    std::size_t columns_ = 0;
    Eigen::MatrixXd design_;
    Eigen::VectorXd colmean_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
    bool rank_deficient_ = false;
};

struct ConditionalFit {
    Regressor regressor;
    Regressor::Fit fit;
    std::vector<double> fitted;

    double operator()(const double* x) const { return regressor.predict(fit, x); }
};

/// Projection of `targets` onto the basis span evaluated at the regressors.
inline ConditionalFit regress_conditional(std::span<const double> targets, StateView regressors,
                                          const RegressionBasis& basis) {
    Regressor reg(regressors, basis);
    auto fit = reg.solve(targets);
    std::vector<double> values(reg.samples());
    reg.fitted(fit, values);
    return ConditionalFit{std::move(reg), std::move(fit), std::move(values)};
}

} // namespace qfbsde
