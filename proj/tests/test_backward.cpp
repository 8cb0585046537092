#include <cmath>

#include <gtest/gtest.h>

#include "qfbsde/backward.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/registry.hpp"
#include "test_support.hpp"

using namespace qfbsde;
using testing_support::colehopf_problem;

namespace {

RunConfig small_config(std::size_t M = 20000) {
    RunConfig c;
    c.paths = M;
    return c;
}

FBSDEProblem zero_driver_problem(const char* terminal = "tanh", std::vector<double> params = {}) {
    FBSDEProblem p;
    p.terminal = registry::make_terminal(terminal, params, 1);
    return p;
}

} // namespace

TEST(Lsmc, ZeroDriverGivesSampleMean) {
    const auto p = zero_driver_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 20000, 1);
    const auto s = lsmc_solve(p, e, RegressionBasis::polynomial(4), untruncated, small_config());
    double mean = 0.0;
    for (std::size_t m = 0; m < e.paths; ++m) mean += std::tanh(e.X(m, 20, 0));
    mean /= static_cast<double>(e.paths);
    EXPECT_NEAR(s.y0(), mean, 1e-12);
    for (std::size_t m = 0; m < e.paths; ++m) EXPECT_EQ(s.y(m, 0), s.y(0, 0));
}

TEST(Lsmc, LinearDriverClosedForm) {
    const double a = 0.5, x0 = 0.5;
    FBSDEProblem p = zero_driver_problem();
    p.x0 = {x0};
    p.driver = registry::make_driver("linear", {a}, nullptr, 1);
    const auto e = simulate(p, TimeGrid::uniform(1.0, 50), 100000, 2);
    const auto s = lsmc_solve(p, e, RegressionBasis::polynomial(4), untruncated, small_config(100000));
    const double exact = std::exp(a) * testing_support::gaussian_expectation([&](double z) { return std::tanh(x0 + z); });
    EXPECT_LE(std::abs(s.y0() / exact - 1.0), 0.02);
}

TEST(Lsmc, ColeHopfMatchesClosedForm) {
    const auto p = colehopf_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 50), 100000, 3);
    const auto s = lsmc_solve(p, e, RegressionBasis::polynomial(4), untruncated, small_config(100000));
    const double exact = testing_support::colehopf_y0([](double x) { return std::tanh(x); }, 0.0, 1.0);
    EXPECT_LE(std::abs(s.y0() - exact), 0.02);
}

TEST(Lsmc, TerminalExactAndFinite) {
    const auto p = colehopf_problem(0.3);
    const auto e = simulate(p, TimeGrid::uniform(1.0, 10), 5000, 4);
    const auto s = lsmc_solve(p, e, RegressionBasis::piecewise_linear(8), 3, small_config(5000));
    for (std::size_t m = 0; m < e.paths; ++m) EXPECT_EQ(s.y(m, 10), std::tanh(e.X(m, 10, 0)));
    for (double v : s.Y) ASSERT_TRUE(std::isfinite(v));
    for (double v : s.Z) ASSERT_TRUE(std::isfinite(v));
}

TEST(Lsmc, PicardResidualsDecreaseAndMeetTolerance) {
    auto p = colehopf_problem();
    p.driver = registry::make_driver("general_assumption2", {}, [](double u) { return 0.5 * u; }, 1);
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 10000, 5);
    const auto cfg = small_config(10000);
    const auto s = lsmc_solve(p, e, RegressionBasis::polynomial(3), untruncated, cfg);
    for (const auto& r : s.picard_residuals) {
        ASSERT_FALSE(r.empty());
        EXPECT_LE(r.back(), cfg.picard_tol);
        for (std::size_t k = 1; k < r.size(); ++k) EXPECT_LE(r[k], r[k - 1]);
    }
}

TEST(Lsmc, PicardDivergenceSignalled) {
    FBSDEProblem p = zero_driver_problem();
    p.driver = registry::make_driver("linear", {120.0}, nullptr, 1);
    const auto e = simulate(p, TimeGrid::uniform(1.0, 50), 2000, 6);
    try {
        lsmc_solve(p, e, RegressionBasis::polynomial(2), untruncated, small_config(2000));
        FAIL() << "expected divergence";
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), Errc::picard_divergence);
    }
}

TEST(Lsmc, NonFiniteDriverSignalled) {
    FBSDEProblem p = zero_driver_problem();
    p.driver.g = [](double, ConstSpan, double y, ConstSpan) { return y > 0.5 ? std::nan("") : 0.0; };
    const auto e = simulate(p, TimeGrid::uniform(1.0, 5), 2000, 7);
    try {
        lsmc_solve(p, e, RegressionBasis::polynomial(2), untruncated, small_config(2000));
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), Errc::non_finite);
    }
}

TEST(Lsmc, ZeroDriverIndependentOfTruncation) {
    const auto p = zero_driver_problem("coordinate", {0});
    const auto e = simulate(p, TimeGrid::uniform(1.0, 10), 5000, 8);
    const auto a = lsmc_solve(p, e, RegressionBasis::polynomial(3), untruncated, small_config(5000));
    const auto b = lsmc_solve(p, e, RegressionBasis::polynomial(3), 1, small_config(5000));
    EXPECT_EQ(a.Y, b.Y);
    EXPECT_EQ(a.Z, b.Z);
}

TEST(Lsmc, TruncatedDriverGrowthBound) {
    const auto p = colehopf_problem();
    const auto& g = p.driver;
    Vec scratch(1);
    for (int n : {1, 3, 8})
        for (double y = -12; y <= 12; y += 0.37)
            for (double z = -15; z <= 15; z += 0.41) {
                const Vec x{0.0}, zz{z};
                const double v = evaluate_driver(g, 0.0, x, y, zz, n, scratch);
                ASSERT_LE(std::abs(v), g.growth_bound(y, zz) * (1 + 1e-12));
            }
}

TEST(Lsmc, StabilizationBitIdentical) {
    const auto p = colehopf_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 20000, 9);
    const auto basis = RegressionBasis::polynomial(4);
    const auto cfg = small_config();
    std::vector<int> levels{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto n = stabilization_level(p, e, basis, levels, cfg);
    ASSERT_TRUE(n.has_value());
    const auto a = lsmc_solve(p, e, basis, *n, cfg);
    const auto b = lsmc_solve(p, e, basis, *n + 5, cfg);
    const auto c = lsmc_solve(p, e, basis, untruncated, cfg);
    EXPECT_EQ(a.Y, b.Y);
    EXPECT_EQ(a.Z, b.Z);
    EXPECT_EQ(a.Y, c.Y);
}

TEST(Lsmc, StabilizationSimpleCases) {
    const auto basis = RegressionBasis::polynomial(4);
    const auto cfg = small_config();
    const auto tanh_zero = zero_driver_problem();
    const auto e = simulate(tanh_zero, TimeGrid::uniform(1.0, 20), 20000, 10);
    const auto n = stabilization_level(tanh_zero, e, basis, {1, 2, 3, 4}, cfg);
    ASSERT_TRUE(n.has_value());
    EXPECT_LE(*n, 2);
    const auto flat = zero_driver_problem("constant", {0.0});
    EXPECT_EQ(stabilization_level(flat, e, basis, {1, 2, 3}, cfg), std::optional<int>(1));
}

TEST(Bmo, ConstantAndZeroFields) {
    const auto p = zero_driver_problem();
    const auto e = simulate(p, TimeGrid::uniform(2.0, 10), 1000, 11);
    BackwardSolution s;
    s.paths = 1000;
    s.steps = 10;
    s.dim = 1;
    s.Y.assign(1000 * 11, 0.0);
    s.Z.assign(1000 * 10, 0.0);
    EXPECT_EQ(estimate_bmo(s, e, RegressionBasis::polynomial(3)), 0.0);
    s.Z.assign(1000 * 10, 0.7);
    EXPECT_NEAR(estimate_bmo(s, e, RegressionBasis::polynomial(3)), 0.7 * std::sqrt(2.0), 1e-12);
}

TEST(Apriori, ZeroDriverBoundedTerminal) {
    const auto p = zero_driver_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 20000, 12);
    const auto s = lsmc_solve_with_bmo(p, e, RegressionBasis::polynomial(4), untruncated, small_config());
    const auto r = apriori_check(s, p);
    EXPECT_DOUBLE_EQ(r.upsilon1, 1.0);
    EXPECT_TRUE(r.y_pass);
}

TEST(Apriori, ZeroTerminalZeroDriver) {
    const auto p = zero_driver_problem("constant", {0.0});
    const auto e = simulate(p, TimeGrid::uniform(1.0, 10), 2000, 13);
    const auto s = lsmc_solve_with_bmo(p, e, RegressionBasis::polynomial(2), untruncated, small_config(2000));
    const auto r = apriori_check(s, p);
    EXPECT_EQ(r.observed_sup_y, 0.0);
    EXPECT_EQ(r.observed_bmo, 0.0);
    EXPECT_TRUE(r.pass());
}

TEST(Apriori, ColeHopfBounds) {
    const auto p = colehopf_problem();
    const auto e = simulate(p, TimeGrid::uniform(1.0, 50), 50000, 14);
    const auto s = lsmc_solve_with_bmo(p, e, RegressionBasis::polynomial(4), untruncated, small_config(50000));
    const auto r = apriori_check(s, p);
    EXPECT_TRUE(r.y_pass);
    EXPECT_TRUE(r.bmo_pass);
}

TEST(RunConfig, Validation) {
    RunConfig c;
    c.paths = 1;
    EXPECT_THROW(c.validate(), Error);
    c.paths = 10;
    c.picard_tol = 0.0;
    EXPECT_THROW(c.validate(), Error);
}
