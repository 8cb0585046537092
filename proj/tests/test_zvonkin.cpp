#include <cmath>

#include <gtest/gtest.h>

#include "qfbsde/zvonkin.hpp"

using namespace qfbsde;

namespace {

double holder_sqrt(double, double x) {
    const double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    return std::clamp(s * std::sqrt(std::abs(x)), -1.0, 1.0);
}

} // namespace

TEST(Zvonkin, ZeroDriftIsIdentity) {
    const auto z = zvonkin_transform_1d([](double, double) { return 0.0; }, 10.0, SpaceGrid{}, TimeGrid::uniform(1.0, 32));
    for (std::size_t i = 0; i <= 32; i += 8)
        for (double x : {-2.0, 0.0, 1.3}) {
            EXPECT_EQ(z.u_at(i, x), 0.0);
            EXPECT_EQ(z.psi(i, x), x);
            EXPECT_NEAR(z.b_tilde(i, x), 0.0, 1e-15);
            EXPECT_NEAR(z.sigma_tilde(i, x), 1.0, 1e-15);
        }
}

TEST(Zvonkin, ConstantDriftStationary) {
    const double c = 0.6, lambda = 10.0;
    const auto z = zvonkin_transform_1d([c](double, double) { return c; }, lambda, SpaceGrid{-3, 3, 64},
                                        TimeGrid::uniform(6.0, 600));
    for (double x : {-2.5, 0.0, 1.7}) {
        EXPECT_NEAR(z.u_at(0, x), c / lambda, 1e-12);
        EXPECT_NEAR(z.psi(0, x), x + c / lambda, 1e-12);
    }
}

TEST(Zvonkin, HolderSqrtResidualAndDiffeomorphism) {
    const auto z = zvonkin_transform_1d(holder_sqrt, 10.0, SpaceGrid{-5, 5, 512}, TimeGrid::uniform(1.0, 256));
    EXPECT_LE(z.residual(), 1e-4);
    EXPECT_GT(z.min_one_plus_ux(), 0.0);
    for (std::size_t j = 0; j < 512; ++j) EXPECT_GT(1.0 + z.ux(0, j), 0.0);
}

TEST(Zvonkin, PsiMonotoneAndInverse) {
    const auto z = zvonkin_transform_1d(holder_sqrt, 10.0, SpaceGrid{-5, 5, 256}, TimeGrid::uniform(1.0, 64));
    for (std::size_t i : {0u, 20u, 63u}) {
        double prev = -1e300;
        for (int k = -400; k <= 400; ++k) {
            const double x = 0.01 * k;
            const double p = z.psi(i, x);
            ASSERT_GT(p, prev);
            prev = p;
            EXPECT_NEAR(z.psi(i, z.psi_inverse(i, p)), p, 1e-10);
        }
    }
}

TEST(Zvonkin, TransformedCoefficients) {
    const auto z = zvonkin_transform_1d(holder_sqrt, 10.0, SpaceGrid{-5, 5, 256}, TimeGrid::uniform(1.0, 64));
    const double y = 0.4;
    const double x = z.psi_inverse(0, y);
    EXPECT_NEAR(z.b_tilde(0, y), -10.0 * z.u_at(0, x), 1e-12);
    EXPECT_NEAR(z.sigma_tilde(0, y), 1.0 + z.ux_at(0, x), 1e-12);
}

TEST(Zvonkin, SmallLambdaFailsDiffeomorphism) {
    // Drift well above 1/h: the coarse grid cannot resolve it.
    auto steep = [](double, double x) { return -100.0 * std::tanh(40.0 * x); };
    try {
        zvonkin_transform_1d(steep, 0.05, SpaceGrid{-2, 2, 256}, TimeGrid::uniform(2.0, 128));
        FAIL() << "expected diffeomorphism failure";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::diffeomorphism);
    }
}

TEST(Zvonkin, RejectsBadInputs) {
    EXPECT_THROW(zvonkin_transform_1d(holder_sqrt, 0.0, SpaceGrid{}, TimeGrid::uniform(1.0, 8)), Error);
    EXPECT_THROW(zvonkin_transform_1d(holder_sqrt, 1.0, SpaceGrid{1, -1, 32}, TimeGrid::uniform(1.0, 8)), Error);
}
