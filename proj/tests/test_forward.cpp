#include <cmath>
#include <cstdlib>
#include <numbers>

#include <gtest/gtest.h>

#include "qfbsde/forward.hpp"
#include "qfbsde/registry.hpp"

using namespace qfbsde;

namespace {

FBSDEProblem problem_with(Drift b, double x0 = 0.0) {
    FBSDEProblem p;
    p.drift = std::move(b);
    p.x0 = {x0};
    p.terminal = registry::make_terminal("tanh", {}, 1);
    return p;
}

Drift linear_drift(double a) {
    Drift b;
    b.value = [a](double, ConstSpan x, MutSpan o) { o[0] = a * x[0]; };
    b.jacobian = [a](double, ConstSpan, MutSpan j) { j[0] = a; };
    b.bound = std::numeric_limits<double>::infinity();
    return b;
}

} // namespace

TEST(Brownian, Deterministic) {
    const auto g = TimeGrid::uniform(1.0, 10);
    const auto a = sample_brownian(g, 500, 2, 42);
    const auto b = sample_brownian(g, 500, 2, 42);
    EXPECT_EQ(a.increments, b.increments);
    const auto c = sample_brownian(g, 500, 2, 43);
    EXPECT_NE(a.increments, c.increments);
}

TEST(Brownian, IndependentOfWorkerCount) {
    const auto g = TimeGrid::uniform(1.0, 8);
    ::setenv("QFBSDE_THREADS", "1", 1);
    const auto a = sample_brownian(g, 5000, 1, 9);
    ::setenv("QFBSDE_THREADS", "4", 1);
    const auto b = sample_brownian(g, 5000, 1, 9);
    ::unsetenv("QFBSDE_THREADS");
    EXPECT_EQ(a.increments, b.increments);
}

TEST(Brownian, MeanAndVariance) {
    const std::size_t M = 1000000;
    const auto g = TimeGrid(Vec{0.0, 0.25, 1.0});
    const auto e = sample_brownian(g, M, 1, 5);
    for (std::size_t i = 0; i < 2; ++i) {
        const double dt = g.dt(i);
        double s = 0, s2 = 0;
        for (std::size_t m = 0; m < M; ++m) {
            s += e.dB(m, i, 0);
            s2 += e.dB(m, i, 0) * e.dB(m, i, 0);
        }
        EXPECT_LE(std::abs(s / M), 4.0 / std::sqrt(double(M)) * std::sqrt(dt));
        // chi^2 with M degrees of freedom: sd of the sample variance is dt sqrt(2/M).
        EXPECT_LE(std::abs(s2 / M - dt), 6.0 * dt * std::sqrt(2.0 / M));
    }
}

TEST(Euler, ZeroDriftIsBrownianPath) {
    const auto g = TimeGrid::uniform(1.0, 16);
    const auto e = simulate(problem_with(zero_drift(1), 0.3), g, 200, 1);
    for (std::size_t m = 0; m < 200; ++m) {
        double b = 0.3;
        EXPECT_EQ(e.X(m, 0, 0), 0.3);
        for (std::size_t i = 0; i < 16; ++i) {
            b += e.dB(m, i, 0);
            EXPECT_EQ(e.X(m, i + 1, 0), b);
        }
    }
}

TEST(Euler, ConstantDriftExact) {
    const auto g = TimeGrid::uniform(2.0, 20);
    const auto e = simulate(problem_with(registry::make_drift("constant", {0.5}, 1), 1.0), g, 100, 2);
    for (std::size_t m = 0; m < 100; ++m) {
        double bt = 0;
        for (std::size_t i = 0; i < 20; ++i) bt += e.dB(m, i, 0);
        EXPECT_NEAR(e.X(m, 20, 0), 1.0 + 0.5 * 2.0 + bt, 1e-12);
    }
}

TEST(Euler, SignDriftSelfConvergence) {
    // Coarse increments are block sums of the fine ones, so both grids see the same noise.
    const std::size_t M = 100000, Nc = 50, r = 10;
    const auto p = problem_with(registry::make_drift("sign", {}, 1));
    auto fine = sample_brownian(TimeGrid::uniform(1.0, Nc * r), M, 1, 77);
    euler_maruyama(p, fine);
    PathEnsemble coarse;
    coarse.grid = TimeGrid::uniform(1.0, Nc);
    coarse.paths = M;
    coarse.increments.assign(M * Nc, 0.0);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t i = 0; i < Nc * r; ++i) coarse.dB(m, i / r, 0) += fine.dB(m, i, 0);
    euler_maruyama(p, coarse);
    double ef = 0, ec = 0;
    for (std::size_t m = 0; m < M; ++m) {
        ef += fine.X(m, Nc * r, 0) * fine.X(m, Nc * r, 0);
        ec += coarse.X(m, Nc, 0) * coarse.X(m, Nc, 0);
    }
    EXPECT_LE(std::abs(ec / ef - 1.0), 0.02);
}

TEST(Euler, RejectsMissingIncrements) {
    PathEnsemble e;
    e.grid = TimeGrid::uniform(1.0, 4);
    e.paths = 3;
    EXPECT_THROW(euler_maruyama(problem_with(zero_drift(1)), e), Error);
}

TEST(Mollify, ConstantStaysConstant) {
    const Drift m = mollify_drift(registry::make_drift("constant", {0.7}, 1), 0.1);
    for (double x : {-1.3, 0.0, 0.04, 2.5}) {
        double v, g;
        m.value(0, ConstSpan(&x, 1), MutSpan(&v, 1));
        m.jacobian(0, ConstSpan(&x, 1), MutSpan(&g, 1));
        EXPECT_NEAR(v, 0.7, 1e-14);
        EXPECT_NEAR(g, 0.0, 1e-12);
    }
}

TEST(Mollify, LinearIsPreserved) {
    Drift id;
    id.value = [](double, ConstSpan x, MutSpan o) { o[0] = x[0]; };
    id.bound = 10.0;
    const Drift m = mollify_drift(id, 0.1);
    for (double x : {-0.9, 0.0, 0.013, 0.5}) {
        double v, g;
        m.value(0, ConstSpan(&x, 1), MutSpan(&v, 1));
        m.jacobian(0, ConstSpan(&x, 1), MutSpan(&g, 1));
        // Kernel truncated at about 6.4 eps: Gaussian tail mass ~2e-9.
        EXPECT_NEAR(v, x, 1e-8);
        EXPECT_NEAR(g, 1.0, 1e-8);
    }
}

// The jump of sign sits on a lattice node, so the kernel sum is a trapezoid rule for a
// kinked integrand: relative error about (h / eps)^2 / 12 with h = 12 eps / points.
TEST(Mollify, SignAtOrigin) {
    const double exact = std::sqrt(2.0 / std::numbers::pi) / 0.1;
    for (int points : {32, 128}) {
        const Drift m = mollify_drift(registry::make_drift("sign", {}, 1), 0.1, points);
        double x = 0.0, v, g;
        m.value(0, ConstSpan(&x, 1), MutSpan(&v, 1));
        m.jacobian(0, ConstSpan(&x, 1), MutSpan(&g, 1));
        const double rel = std::pow(12.0 / points, 2) / 12.0;
        EXPECT_NEAR(v, 0.0, 1e-12);
        EXPECT_NEAR(g, exact, 1.05 * rel * exact) << points;
    }
}

TEST(Mollify, BoundRespected) {
    for (const char* name : {"sign", "holder_sqrt"}) {
        const Drift b = registry::make_drift(name, {}, 1);
        const Drift m = mollify_drift(b, 0.05);
        EXPECT_LE(m.bound, b.bound);
        for (int k = -400; k <= 400; ++k) {
            double x = 0.01 * k + 0.0037, v;
            m.value(0, ConstSpan(&x, 1), MutSpan(&v, 1));
            ASSERT_LE(std::abs(v), b.bound * (1 + 1e-14));
        }
    }
}

TEST(Mollify, TwoDimensionalDiagonal) {
    const Drift m = mollify_drift(registry::make_drift("sign", {}, 2), 0.2, 16);
    const Vec x{0.0, 0.5};
    Vec v(2), j(4);
    m.value(0, x, v);
    m.jacobian(0, x, j);
    EXPECT_NEAR(v[0], 0.0, 1e-12);
    EXPECT_NEAR(v[1], std::erf(0.5 / (0.2 * std::sqrt(2.0))), std::pow(12.0 / 16, 2) / 12.0);
    EXPECT_NEAR(j[1], 0.0, 1e-10);
    EXPECT_NEAR(j[2], 0.0, 1e-10);
}

TEST(Tabulate, MatchesSourceDrift) {
    const Drift m = mollify_drift(registry::make_drift("sign", {}, 1), 0.1);
    const Drift t = tabulate_drift_1d(m, -3, 3, 4001);
    for (double x : {-2.71, -0.05, 0.0, 0.011, 1.9}) {
        double a, b, ga, gb;
        m.value(0, ConstSpan(&x, 1), MutSpan(&a, 1));
        t.value(0, ConstSpan(&x, 1), MutSpan(&b, 1));
        m.jacobian(0, ConstSpan(&x, 1), MutSpan(&ga, 1));
        t.jacobian(0, ConstSpan(&x, 1), MutSpan(&gb, 1));
        EXPECT_NEAR(a, b, 1e-7);
        EXPECT_NEAR(ga, gb, 1e-4);
    }
}

TEST(Flow, ZeroDriftIdentity) {
    const auto p = problem_with(zero_drift(1));
    const auto e = simulate(p, TimeGrid::uniform(1.0, 10), 50, 3);
    const auto f = variational_flow(p, e);
    for (double v : f.nablaX) EXPECT_EQ(v, 1.0);
    for (double v : f.nablaX_inv) EXPECT_EQ(v, 1.0);
    const Vec d = malliavin_forward(f, 2, 7);
    for (double v : d) EXPECT_EQ(v, 1.0);
}

TEST(Flow, LinearDriftExponential) {
    const double a = 0.8;
    const std::size_t N = 1000;
    const auto p = problem_with(linear_drift(a), 0.2);
    const auto e = simulate(p, TimeGrid::uniform(1.0, N), 10, 4);
    const auto f = variational_flow(p, e);
    const double dt = 1.0 / N;
    for (std::size_t m = 0; m < 10; ++m) {
        EXPECT_NEAR(f.J(m, N)[0], std::exp(a), 2 * a * a * dt * std::exp(a));
        const Vec d = malliavin_forward(f, 250, 750);
        EXPECT_NEAR(d[m], std::exp(a * 0.5), 2 * a * a * dt * std::exp(a));
    }
}

TEST(Flow, MissingGradientRejected) {
    const auto p = problem_with(registry::make_drift("sign", {}, 1));
    const auto e = simulate(p, TimeGrid::uniform(1.0, 4), 10, 5);
    try {
        variational_flow(p, e);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), Errc::missing_gradient);
    }
}

TEST(Flow, InverseAndCompositionForMollifiedSign) {
    const auto p = problem_with(mollify_drift(registry::make_drift("sign", {}, 1), 0.1));
    const auto e = simulate(p, TimeGrid::uniform(1.0, 40), 2000, 6);
    const auto f = variational_flow(p, e, 0.1);
    EXPECT_LE(flow_inverse_defect(f), 1e-10);
    const Vec st = malliavin_forward(f, 5, 30), su = malliavin_forward(f, 5, 17), ut = malliavin_forward(f, 17, 30);
    for (std::size_t m = 0; m < 2000; ++m) EXPECT_NEAR(st[m], su[m] * ut[m], 1e-8 * std::abs(st[m]));
    for (double v : malliavin_forward(f, 12, 12)) EXPECT_EQ(v, 1.0);
    EXPECT_THROW(malliavin_forward(f, 9, 3), Error);
}

TEST(Flow, MultiDimensionalInverse) {
    FBSDEProblem p;
    p.dim = 2;
    p.x0 = {0.1, -0.2};
    p.drift = registry::make_drift("smooth_sin", {1.5}, 2);
    p.terminal = registry::make_terminal("tanh", {}, 2);
    const auto e = simulate(p, TimeGrid::uniform(1.0, 20), 300, 7);
    const auto f = variational_flow(p, e);
    EXPECT_LE(flow_inverse_defect(f), 1e-10);
}

TEST(Continuity, ZeroDriftExactCases) {
    const auto p = problem_with(zero_drift(1));
    std::vector<ContinuityProbe> probes{{0.5, 0.5, Vec{0.2}, Vec{-0.4}}, {0.2, 0.7, Vec{0.1}, Vec{0.1}}};
    const auto rep = continuity_diagnostic(p, probes, 100000, 8, 64);
    EXPECT_NEAR(rep.ratios[0], 1.0, 1e-10);
    EXPECT_NEAR(rep.ratios[1], 1.0, 5 * rep.stderrs[1]);
}

TEST(Continuity, DegenerateProbeRejected) {
    const auto p = problem_with(zero_drift(1));
    std::vector<ContinuityProbe> probes{{0.3, 0.3, Vec{0.2}, Vec{0.2}}};
    EXPECT_THROW(continuity_diagnostic(p, probes, 10, 1, 8), Error);
}
