#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ezbsde/generator.hpp"

using namespace ezbsde;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }
Mat m1(double x) { return Mat::Constant(1, 1, x); }

const Preferences kUnit = Preferences::make(2.0, 2.0, 1.0);

Coefficients random_coefficients(std::mt19937_64& rng, int d, int n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        Mat s(d, n);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < n; ++j) s(i, j) = 0.5 * u(rng);
        Eigen::SelfAdjointEigenSolver<Mat> eig(s * s.transpose());
        if (eig.eigenvalues().minCoeff() < 1e-4 * eig.eigenvalues().maxCoeff()) continue;
        Vec mu(d);
        for (int i = 0; i < d; ++i) mu(i) = 0.2 * u(rng);
        return Coefficients::make(0.05 * u(rng), mu, s);
    }
}

}  // namespace

TEST(Generator, HandSubstitutedValues) {
    const Coefficients flat = Coefficients::make(0.0, v1(0.0), m1(1.0));
    EXPECT_NEAR(generator_H(0.0, v1(0.0), flat, kUnit), 1.0, 1e-14);
    const Coefficients rate = Coefficients::make(1.0, v1(0.0), m1(1.0));
    EXPECT_NEAR(generator_H(0.0, v1(0.0), rate, kUnit), 0.0, 1e-14);
    const Coefficients risky = Coefficients::make(0.0, v1(1.0), m1(1.0));
    EXPECT_NEAR(generator_H(0.0, v1(1.0), risky, kUnit), 0.5, 1e-14);
}

TEST(Generator, DecreasingInY) {
    const Coefficients c = Coefficients::make(0.03, v1(0.05), m1(0.2));
    double prev = generator_H(-3.0, v1(0.1), c, kUnit);
    for (double y = -2.9; y < 3.0; y += 0.1) {
        const double h = generator_H(y, v1(0.1), c, kUnit);
        EXPECT_LT(h, prev);
        prev = h;
    }
}

TEST(Generator, OverflowBeyondCap) {
    const Coefficients c = Coefficients::make(0.0, v1(0.0), m1(1.0));
    EXPECT_THROW(generator_H(800.0, v1(0.0), c, kUnit), OverflowError);
    EXPECT_THROW(generator_H(std::log(10.0) + 1e-9, v1(0.0), c, kUnit, 10.0), OverflowError);
}

TEST(Truncation, NoTruncationIsIdentity) {
    const Coefficients c = Coefficients::make(0.03, v1(0.05), m1(0.2));
    const Truncation none{};
    EXPECT_FALSE(none.active());
    for (double y : {-2.0, 0.0, 1.5})
        EXPECT_DOUBLE_EQ(generator_truncated(y, v1(0.3), none, 100.0, c, kUnit), generator_H(y, v1(0.3), c, kUnit));
}

TEST(Truncation, ExponentialTermClampedAtM) {
    const Coefficients c = Coefficients::make(0.0, v1(0.0), m1(1.0));
    // theta/psi delta^psi min(e^y, m) - delta theta = -min(e^y, 2) + 2
    EXPECT_NEAR(generator_capped(5.0, v1(0.0), c, kUnit, 2.0), 0.0, 1e-14);
    EXPECT_NEAR(generator_capped(50.0, v1(0.0), c, kUnit, 2.0), 0.0, 1e-14);
    EXPECT_NEAR(generator_capped(0.0, v1(0.0), c, kUnit, 2.0), 1.0, 1e-14);
    EXPECT_DOUBLE_EQ(generator_truncated_dy(5.0, v1(0.0), {2.0, kInf, kInf}, 0.0, c, kUnit), 0.0);
}

TEST(Truncation, IndicatorsZeroTheirPart) {
    const Coefficients c = Coefficients::make(0.0, v1(0.0), m1(1.0));
    const Truncation t{kInf, 5.0, 1.0};
    // H(0, 0) = 1 > 0 survives up to the n-level
    EXPECT_NEAR(generator_truncated(0.0, v1(0.0), t, 3.0, c, kUnit), 1.0, 1e-14);
    EXPECT_DOUBLE_EQ(generator_truncated(0.0, v1(0.0), t, 6.0, c, kUnit), 0.0);
    // H(2, 0) = 2 - e^2 < 0 is dropped once the running integral passes the k-level
    const double neg = generator_H(2.0, v1(0.0), c, kUnit);
    ASSERT_LT(neg, 0.0);
    EXPECT_DOUBLE_EQ(generator_truncated(2.0, v1(0.0), t, 0.5, c, kUnit), neg);
    EXPECT_DOUBLE_EQ(generator_truncated(2.0, v1(0.0), t, 3.0, c, kUnit), 0.0);
    EXPECT_DOUBLE_EQ(generator_truncated_dy(2.0, v1(0.0), t, 3.0, c, kUnit), 0.0);
}

TEST(Truncation, DerivativeMatchesCentralDifference) {
    const Coefficients c = Coefficients::make(0.02, v1(0.06), m1(0.2));
    const Truncation t{10.0, kInf, kInf};
    for (double y : {-1.0, 0.5, 2.0}) {
        const double h = 1e-6;
        const double fd = (generator_truncated(y + h, v1(0.1), t, 0.0, c, kUnit) -
                           generator_truncated(y - h, v1(0.1), t, 0.0, c, kUnit)) /
                          (2.0 * h);
        EXPECT_NEAR(generator_truncated_dy(y, v1(0.1), t, 0.0, c, kUnit), fd, 1e-6);
        EXPECT_LE(generator_truncated_dy(y, v1(0.1), t, 0.0, c, kUnit), 0.0);
    }
}

TEST(Fenchel, ZeroRiskPremiumAndZeroArgument) {
    const Coefficients c = Coefficients::make(0.03, v1(0.0), m1(0.3));
    for (double y : {-1.0, 0.0, 0.7})
        EXPECT_NEAR(fenchel_transform_J(y, v1(0.0), c, kUnit), generator_H(y, v1(0.0), c, kUnit), 1e-14);
}

TEST(Fenchel, CenteredArgumentLeavesOnlyLevelTerms) {
    const Coefficients c = Coefficients::make(0.03, v1(0.08), m1(0.25));
    const double g = (1.0 - kUnit.gamma) / kUnit.gamma;
    const Vec l = g * c.risk_price;
    const double y = 0.4;
    const double level = kUnit.theta / kUnit.psi * kUnit.delta_pow_psi() * std::exp(kUnit.exp_rate() * y) +
                         0.5 * g * c.risk_price_sq + (1.0 - kUnit.gamma) * c.r - kUnit.delta * kUnit.theta;
    EXPECT_NEAR(fenchel_transform_J(y, l, c, kUnit), level, 1e-14);
}

TEST(Fenchel, InfimumOverGridOfZ) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Coefficients c = Coefficients::make(0.02, v1(0.06), m1(0.2));
    for (int s = 0; s < 50; ++s) {
        const double y = u(rng);
        const Vec l = v1(u(rng));
        double inf = 1e300;
        for (int k = -40000; k <= 40000; ++k) {
            const Vec z = v1(1e-4 * k);
            inf = std::min(inf, generator_H(y, z, c, kUnit) - z.dot(l));
        }
        EXPECT_NEAR(fenchel_transform_J(y, l, c, kUnit), inf, 1e-7);
    }
}

TEST(Maximizer, Values) {
    const Coefficients flat = Coefficients::make(0.0, v1(0.0), m1(1.0));
    EXPECT_NEAR(maximizer_u_star(v1(0.0), flat, kUnit)(0), 0.0, 1e-15);
    EXPECT_NEAR(maximizer_u_star(v1(1.0), flat, kUnit)(0), 0.5, 1e-15);
}

TEST(Maximizer, IsGradientOfH) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int s = 0; s < 100; ++s) {
        const Coefficients c = random_coefficients(rng, 1 + s % 2, 2 + s % 2);
        Vec z(c.noises());
        for (int j = 0; j < z.size(); ++j) z(j) = u(rng);
        const Vec us = maximizer_u_star(z, c, kUnit);
        for (int j = 0; j < z.size(); ++j) {
            Vec e = Vec::Zero(z.size());
            e(j) = 1e-6;
            const double fd = (generator_H(0.1, z + e, c, kUnit) - generator_H(0.1, z - e, c, kUnit)) / 2e-6;
            EXPECT_NEAR(us(j), fd, 1e-7);
        }
    }
}

TEST(Fenchel, TightAtMaximizerAndBelowElsewhere) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int s = 0; s < 500; ++s) {
        const int n = 1 + s % 3;
        const Coefficients c = random_coefficients(rng, 1 + (s / 3) % n, n);
        const Preferences p = Preferences::make(1.2 + 3.0 * (1.0 + u(rng)), 1.5 + (1.0 + u(rng)), 0.1);
        Vec z(n), l(n);
        for (int j = 0; j < n; ++j) {
            z(j) = u(rng);
            l(j) = u(rng);
        }
        const double y = u(rng);
        const double H = generator_H(y, z, c, p);
        EXPECT_NEAR(fenchel_transform_J(y, maximizer_u_star(z, c, p), c, p) + z.dot(maximizer_u_star(z, c, p)), H,
                    1e-10);
        EXPECT_LE(fenchel_transform_J(y, l, c, p) + z.dot(l), H + 1e-12);
    }
}

TEST(Projection, EigenvaluesOfProjection) {
    Mat a(1, 2);
    a << 1.0, 0.0;
    ProjectionSpectrum s = projection_eigencheck(a);
    EXPECT_TRUE(s.is_projection);
    EXPECT_NEAR(s.eigenvalues[0], 0.0, 1e-12);
    EXPECT_NEAR(s.eigenvalues[1], 1.0, 1e-12);
    Mat b(1, 2);
    b << 3.0, 4.0;
    s = projection_eigencheck(b);
    EXPECT_TRUE(s.is_projection);
    EXPECT_EQ(s.unit_count, 1);
    const Coefficients c = Coefficients::make(0.0, v1(0.0), b);
    Mat expected(2, 2);
    expected << 9.0, 12.0, 12.0, 16.0;
    EXPECT_LT((c.projection - expected / 25.0).norm(), 1e-14);
    s = projection_eigencheck(m1(2.0));
    EXPECT_EQ(s.eigenvalues.size(), 1u);
    EXPECT_NEAR(s.eigenvalues[0], 1.0, 1e-14);
}

TEST(Projection, QuadraticFormSandwich) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int s = 0; s < 300; ++s) {
        const int n = 1 + s % 4;
        Coefficients c = random_coefficients(rng, 1 + (s / 4) % n, n);
        c.risk_price.setZero();
        const Preferences p = Preferences::make(1.01 + 9.0 * (0.5 + 0.5 * u(rng)), 2.0, 0.1);
        Vec z(n);
        for (int j = 0; j < n; ++j) z(j) = 3.0 * u(rng);
        const double q = detail::quadratic_part(z, c, p);
        EXPECT_GE(q, z.squaredNorm() / (2.0 * p.gamma) - 1e-10);
        EXPECT_LE(q, 0.5 * z.squaredNorm() + 1e-10);
    }
}

TEST(Projection, RejectsSingularCovariance) {
    Mat s(2, 2);
    s << 1.0, 2.0, 2.0, 4.0;
    Vec mu(2);
    mu << 0.1, 0.2;
    EXPECT_THROW(Coefficients::make(0.0, mu, s), DegenerateCovariance);
    EXPECT_THROW(Coefficients::make(0.0, v1(0.1), Mat::Constant(2, 1, 1.0)), InvalidParameter);
}
