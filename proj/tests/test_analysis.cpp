#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qfbsde/analysis.hpp"
#include "qfbsde/backward.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/registry.hpp"
#include "test_support.hpp"

using namespace qfbsde;

namespace {

BackwardSolution constant_solution(std::size_t M, std::size_t N, double y, double z) {
    BackwardSolution s;
    s.paths = M;
    s.steps = N;
    s.dim = 1;
    s.Y.assign(M * (N + 1), y);
    s.Z.assign(M * N, z);
    return s;
}

RunConfig config(std::size_t M) {
    RunConfig c;
    c.paths = M;
    return c;
}

FBSDEProblem tanh_zero_driver() {
    FBSDEProblem p;
    p.terminal = registry::make_terminal("tanh", {}, 1);
    return p;
}

FBSDEProblem truncation_problem() {
    FBSDEProblem p;
    p.terminal = registry::make_terminal("tanh", {2.0, 2.0}, 1);
    p.driver = registry::make_driver("general_assumption2", {}, registry::make_f("power", {1.0}), 1);
    return p;
}

} // namespace

TEST(RateFit, ExactPowerLaws) {
    const std::vector<double> a{0.125, 0.0625, 0.03125, 0.015625};
    std::vector<double> e1, e2;
    for (double v : a) {
        e1.push_back(std::sqrt(v));
        e2.push_back(3.0 * v);
    }
    const auto f1 = rate_fit(a, e1);
    EXPECT_NEAR(f1.slope, 0.5, 1e-12);
    EXPECT_NEAR(f1.r2, 1.0, 1e-12);
    const auto f2 = rate_fit(a, e2);
    EXPECT_NEAR(f2.slope, 1.0, 1e-12);
    EXPECT_NEAR(f2.intercept, std::log(3.0), 1e-12);
}

TEST(RateFit, ScaleInvariance) {
    const std::vector<double> a{1, 2, 4, 8, 16};
    const std::vector<double> e{0.9, 0.55, 0.2, 0.12, 0.05};
    std::vector<double> e7;
    for (double v : e) e7.push_back(7.0 * v);
    const auto f = rate_fit(a, e), g = rate_fit(a, e7);
    EXPECT_NEAR(g.slope, f.slope, 1e-12);
    EXPECT_NEAR(g.intercept - f.intercept, std::log(7.0), 1e-12);
    EXPECT_NEAR(g.r2, f.r2, 1e-12);
}

TEST(RateFit, NoisySlopeOne) {
    std::mt19937_64 gen(2024);
    std::normal_distribution<double> noise(0.0, 0.1);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> a, e;
        for (int k = 3; k <= 7; ++k) {
            a.push_back(std::ldexp(1.0, -k));
            e.push_back(a.back() * std::exp(noise(gen)));
        }
        const double s = rate_fit(a, e).slope;
        EXPECT_GE(s, 0.8);
        EXPECT_LE(s, 1.2);
    }
}

TEST(RateFit, RejectsBadInput) {
    EXPECT_THROW(rate_fit({1, 2}, {1, 2}), Error);
    EXPECT_THROW(rate_fit({1, 2, 3}, {1, 0, 2}), Error);
    EXPECT_THROW(rate_fit({1, -2, 3}, {1, 1, 2}), Error);
}

TEST(MonotoneWithin, Tolerance) {
    EXPECT_TRUE(monotone_within({1.0, 0.5, 0.52}, {0.01, 0.01, 0.01}));
    EXPECT_FALSE(monotone_within({1.0, 0.5, 0.6}, {0.01, 0.01, 0.01}));
}

TEST(ZhangZbar, ConstantZ) {
    const auto e = simulate(tanh_zero_driver(), TimeGrid::uniform(1.0, 16), 500, 1);
    const auto s = constant_solution(500, 16, 0.0, 0.35);
    const auto zbar = zhang_zbar(s, e, TimeGrid::uniform(1.0, 4), RegressionBasis::polynomial(3));
    for (double v : zbar) EXPECT_NEAR(v, 0.35, 1e-14);
}

TEST(ZhangZbar, LinearInTimeGivesMidpoint) {
    const std::size_t N = 16;
    const auto e = simulate(tanh_zero_driver(), TimeGrid::uniform(1.0, N), 300, 2);
    auto s = constant_solution(300, N, 0.0, 0.0);
    for (std::size_t m = 0; m < 300; ++m)
        for (std::size_t i = 0; i < N; ++i) s.Z[m * N + i] = 2.0 * e.grid[i] + 1.0;
    // The terminal node reuses Z_{N-1}, so the last coarse interval is checked separately.
    const TimeGrid coarse = TimeGrid::uniform(1.0, 4);
    const auto zbar = zhang_zbar(s, e, coarse, RegressionBasis::polynomial(0));
    for (std::size_t m = 0; m < 300; ++m)
        for (std::size_t i = 0; i + 1 < 4; ++i)
            EXPECT_NEAR(zbar[m * 4 + i], 2.0 * (coarse[i] + 0.5 * coarse.dt(i)) + 1.0, 1e-13);
    EXPECT_THROW(zhang_zbar(s, e, TimeGrid::uniform(1.0, 5), RegressionBasis::polynomial(0)), Error);
}

TEST(PathRegularity, ConstantZIsZero) {
    const auto e = simulate(tanh_zero_driver(), TimeGrid::uniform(1.0, 16), 200, 3);
    const auto s = constant_solution(200, 16, 0.0, -0.4);
    for (auto mode : {RegularityMode::left_endpoint, RegularityMode::zbar})
        EXPECT_NEAR(path_regularity_stat(s, e, TimeGrid::uniform(1.0, 4), 2.0, mode, RegressionBasis::polynomial(2)).value,
                    0.0, 1e-28);
    EXPECT_THROW(path_regularity_stat(s, e, TimeGrid::uniform(1.0, 4), 1.5, RegularityMode::zbar,
                                      RegressionBasis::polynomial(2)),
                 Error);
}

TEST(PathRegularity, HalvesWithMeshAndProjectionBound) {
    const auto p = tanh_zero_driver();
    const std::size_t N = 256;
    const auto basis = RegressionBasis::polynomial(4);
    const auto e = simulate(p, TimeGrid::uniform(1.0, N), 20000, 4);
    const auto s = lsmc_solve(p, e, basis, untruncated, config(20000));
    std::vector<double> mesh, left;
    for (std::size_t Nc : {8, 16, 32, 64, 128}) {
        const TimeGrid coarse = TimeGrid::uniform(1.0, Nc);
        const auto l = path_regularity_stat(s, e, coarse, 2.0, RegularityMode::left_endpoint, basis);
        const auto z = path_regularity_stat(s, e, coarse, 2.0, RegularityMode::zbar, basis);
        EXPECT_LE(z.value, l.value) << "Nc=" << Nc;
        if (!left.empty()) {
            const double ratio = l.value / left.back();
            EXPECT_GE(ratio, 0.5 * 0.7) << "Nc=" << Nc;
            EXPECT_LE(ratio, 0.5 * 1.3) << "Nc=" << Nc;
        }
        mesh.push_back(1.0 / static_cast<double>(Nc));
        left.push_back(l.value);
    }
    const auto fit = rate_fit(mesh, left);
    EXPECT_GE(fit.slope, 0.7);
    EXPECT_LE(fit.slope, 1.3);
}

TEST(YIncrement, ConstantAndBrownian) {
    const auto e = simulate(tanh_zero_driver(), TimeGrid::uniform(1.0, 128), 20000, 5);
    const auto flat = constant_solution(20000, 128, 0.7, 0.0);
    for (const auto& row : y_increment_stat(flat, e.grid, 2.0, {2, 4, 8})) EXPECT_EQ(row.value, 0.0);

    FBSDEProblem p;
    p.terminal = registry::make_terminal("coordinate", {0}, 1);
    const auto s = lsmc_solve(p, e, RegressionBasis::polynomial(1, 0.0), untruncated, config(20000));
    const auto rows = y_increment_stat(s, e.grid, 2.0, {2, 4, 8, 16});
    double lo = rows[0].ratio, hi = rows[0].ratio;
    for (const auto& r : rows) {
        lo = std::min(lo, r.ratio);
        hi = std::max(hi, r.ratio);
    }
    EXPECT_GT(lo, 0.0);
    EXPECT_LE(hi / lo, 1.5);
    EXPECT_THROW(y_increment_stat(s, e.grid, 2.0, {0}), Error);
}

TEST(TruncationCurve, StabilizesToExactZero) {
    const auto p = truncation_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 40), 20000, 6);
    const auto basis = RegressionBasis::polynomial(4);
    const auto c = truncation_error_curve(p, e, basis, {1, 2, 3, 4, 5, 6, 7, 8}, TruncationReference::large_n, config(20000));
    ASSERT_TRUE(c.stabilization.has_value());
    const auto& err = c.report.errors;
    for (std::size_t j = 0; j < err.size(); ++j)
        if (c.report.abscissae[j] >= *c.stabilization) {
            EXPECT_EQ(err[j], 0.0);
            EXPECT_TRUE(c.bit_identical[j]);
        }
    ASSERT_GT(err.front(), 0.0);
    EXPECT_LE(err.back() / err.front(), 0.1);
    EXPECT_TRUE(monotone_within(err, c.report.stderrs, 2.0));
    EXPECT_THROW(truncation_error_curve(p, e, basis, {1, 3, 2}, TruncationReference::large_n, config(20000)), Error);
    EXPECT_THROW(truncation_error_curve(p, e, basis, {1, 2}, TruncationReference::oracle, config(20000)), Error);
}

TEST(Stability, ConstantLadder) {
    const auto p = testing_support::colehopf_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 5000, 7);
    const auto r = stability_experiment(p, {p, p, p}, e, RegressionBasis::polynomial(3), config(5000));
    for (double v : r.report.errors) EXPECT_EQ(v, 0.0);
    for (double v : r.z_errors) EXPECT_EQ(v, 0.0);
}

TEST(Stability, TerminalLadderZeroDriver) {
    const auto p = tanh_zero_driver();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 5000, 8);
    const auto basis = RegressionBasis::polynomial(3);
    std::vector<FBSDEProblem> ladder;
    for (int k = 1; k <= 6; ++k) {
        FBSDEProblem q = p;
        const double w = 1.0 - 1.0 / k;
        q.terminal.value = [w](ConstSpan x) { return w * std::tanh(x[0]); };
        ladder.push_back(q);
    }
    const auto r = stability_experiment(p, ladder, e, basis, config(5000));
    const auto ref = lsmc_solve(p, e, basis, untruncated, config(5000));
    double sup = 0.0;
    for (double v : ref.Y) sup = std::max(sup, std::abs(v));
    for (int k = 1; k <= 6; ++k) EXPECT_NEAR(r.report.errors[k - 1], sup / k, 1e-12);
}

TEST(Stability, DriverLadderDecays) {
    const auto p = testing_support::colehopf_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 5000, 9);
    std::vector<FBSDEProblem> ladder;
    for (double k : {0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
        FBSDEProblem q = p;
        const auto g = p.driver.g;
        q.driver.g = [g, k](double t, ConstSpan x, double y, ConstSpan z) { return std::min(g(t, x, y, z), k); };
        ladder.push_back(q);
    }
    const auto r = stability_experiment(p, ladder, e, RegressionBasis::polynomial(3), config(5000));
    const auto& err = r.report.errors;
    EXPECT_GT(err.front(), 0.0);
    for (std::size_t j = 1; j < err.size(); ++j) EXPECT_LE(err[j], err[j - 1] + 1e-12);
    EXPECT_LE(err.back(), 1e-3 * err.front());
}
