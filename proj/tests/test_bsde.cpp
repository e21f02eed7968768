#include <cmath>

#include <gtest/gtest.h>

#include "ezbsde/bsde.hpp"

using namespace ezbsde;

namespace {

ConstantModel constant_model(double r = 0.02, double mu = 0.06, double sigma = 0.2) {
    ConstantModel c;
    c.rate = r;
    c.mu = Vec::Constant(1, mu);
    c.sigma = Mat::Constant(1, 1, sigma);
    return c;
}

HestonModel heston_model() {
    HestonModel h;
    h.b = 1.0;
    h.l = 0.25;
    h.a = 0.5;
    h.lambda = 0.5;
    h.sigma = 1.0;
    h.rho = -0.5;
    h.x0 = 0.25;
    h.rate = 0.02;
    return h;
}

std::function<Coefficients(double)> constant_coefficients(double r, double mu, double sigma) {
    const Coefficients c = Coefficients::make(r, Vec::Constant(1, mu), Mat::Constant(1, 1, sigma));
    return [c](double) { return c; };
}

}  // namespace

TEST(AssumptionParams, ThresholdNonincreasingInPAndLimit) {
    for (double g : {1.5, 2.0, 5.0}) {
        double prev = kInf;
        for (double p : {2.0, 5.0, 10.0, 100.0}) {
            const double t = q_threshold(p, g);
            EXPECT_LE(t, prev);
            EXPECT_GE(t, 1.0);
            prev = t;
        }
        const double limit = (g - 1.0) * (g + 2.0) / (2.0 * g * g);
        EXPECT_LT(limit, 1.0);
        const double raw = 1e8 * (g - 1.0) * (g + 2.0) / (g * (1.0 + 2.0 * (1e8 - 1.0) * g));
        EXPECT_NEAR(raw, limit, 1e-7);
    }
    // gamma = 5, p = 2: 2*4*7 / (5*11) = 56/55
    EXPECT_NEAR(q_threshold(2.0, 5.0), 56.0 / 55.0, 1e-15);
    EXPECT_DOUBLE_EQ(q_threshold(2.0, 2.0), 1.0);
}

TEST(AssumptionParams, Validation) {
    EXPECT_NO_THROW(AssumptionParams::make(2.0, 2.0, 2.0));
    EXPECT_THROW(AssumptionParams::make(1.0, 2.0, 2.0), InvalidParameter);
    EXPECT_THROW(AssumptionParams::make(2.0, 1.0, 2.0), InvalidParameter);
    EXPECT_THROW(AssumptionParams::make(2.0, 56.0 / 55.0, 5.0), InvalidParameter);
    EXPECT_NO_THROW(AssumptionParams::make(2.0, 1.1, 5.0));
    // coefficient 1 - 1/4 - 1/8 - 1/4 at p = q = gamma = 2
    EXPECT_NEAR(entropy_coefficient(2.0, 2.0, 2.0), 0.375, 1e-15);
}

TEST(Oracle, ZeroHorizon) {
    const auto y = ode_oracle(Preferences::make(2.0, 2.0, 1.0), constant_coefficients(0.02, 0.06, 0.2),
                              TimeGrid::make(0.0, 1));
    ASSERT_EQ(y.size(), 2u);
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 0.0);
}

TEST(Oracle, RefinementBelowTenRejected) {
    EXPECT_THROW(ode_oracle(Preferences::make(2.0, 2.0, 1.0), constant_coefficients(0.0, 0.0, 1.0),
                            TimeGrid::make(1.0, 4), 5),
                 InvalidParameter);
}

TEST(Oracle, ZeroDiscountIsLinear) {
    const Preferences p = Preferences::make_degenerate(3.0, 2.0, 0.0);
    const double r = 0.03, mu = 0.08, sigma = 0.25;
    const auto y = ode_oracle(p, constant_coefficients(r, mu, sigma), TimeGrid::make(2.0, 20));
    const double slope = (1.0 - p.gamma) / (2.0 * p.gamma) * (mu * mu / (sigma * sigma)) + (1.0 - p.gamma) * r;
    for (int i = 0; i <= 20; ++i) EXPECT_NEAR(y[i], slope * (2.0 - 0.1 * i), 1e-13);
}

// With r = mu = 0, gamma = psi = 2, delta = 1 the time-to-go tau solves y' = 2 - e^y,
// y(0) = 0, so y = ln(2 / (1 + e^{-2 tau})).
TEST(Oracle, AutonomousEquationClosedForm) {
    const Preferences p = Preferences::make(2.0, 2.0, 1.0);
    const TimeGrid g = TimeGrid::make(3.0, 30);
    const auto y = ode_oracle(p, constant_coefficients(0.0, 0.0, 1.0), g, 100);
    for (int i = 0; i <= 30; ++i) {
        const double tau = 3.0 - g.time(i);
        EXPECT_NEAR(y[i], std::log(2.0 / (1.0 + std::exp(-2.0 * tau))), 1e-10);
    }
    const auto far = ode_oracle(p, constant_coefficients(0.0, 0.0, 1.0), TimeGrid::make(40.0, 40));
    EXPECT_NEAR(far[0], std::log(2.0), 1e-12);
    EXPECT_NEAR(generator_equilibrium(p), std::log(2.0), 1e-15);
}

// r >= 0 and mu = 0: Y stays below the root of the y-part of the generator.
TEST(Oracle, BoundedByEquilibriumWhenRatesNonnegative) {
    for (double delta : {0.05, 0.5, 2.0}) {
        const Preferences p = Preferences::make(2.5, 1.7, delta);
        const double cap = generator_equilibrium(p);
        EXPECT_NEAR(generator_H(cap, Vec::Zero(1), Coefficients::make(0.0, Vec::Zero(1), Mat::Identity(1, 1)), p),
                    0.0, 1e-12);
        const auto y = ode_oracle(p, constant_coefficients(0.03, 0.0, 0.3), TimeGrid::make(5.0, 50));
        for (double v : y) EXPECT_LE(v, cap + 1e-12);
    }
}

TEST(Solver, ZeroHorizonGivesZero) {
    const MarketPaths paths = simulate_factors(constant_model(), TimeGrid::make(0.0, 1), 100, 3);
    const BsdeSolution sol = solve_bsde(paths, Preferences::make(2.0, 2.0, 1.0));
    EXPECT_EQ(sol.y0, 0.0);
    for (int p = 0; p < 100; ++p) EXPECT_EQ(sol.y(p, 0), 0.0);
}

TEST(Solver, ConstantMarketMatchesOracle) {
    const Preferences p = Preferences::make(2.0, 2.0, 1.0);
    const TimeGrid g = TimeGrid::make(1.0, 50);
    const MarketModel model = constant_model();
    const MarketPaths paths = simulate_factors(model, g, 10000, 42);
    SolverOptions o;
    o.basis_degree = 2;
    const BsdeSolution sol = solve_bsde(paths, p, o);
    const double oracle = ode_oracle(p, *deterministic_coefficients(model), g)[0];
    EXPECT_NEAR(sol.y0, oracle, 0.02);
    double zmax = 0.0;
    for (int q = 0; q < sol.n_paths; ++q)
        for (int i = 0; i < sol.steps(); ++i) zmax = std::max(zmax, sol.z(q, i).cwiseAbs().maxCoeff());
    EXPECT_LE(zmax, 0.01);
    for (int q = 0; q < sol.n_paths; ++q) EXPECT_EQ(sol.y(q, sol.steps()), 0.0);
    EXPECT_EQ(sol.z_cap_hits, 0);
    EXPECT_FALSE(sol.exp_cap_active);
}

// Implicit Euler on a deterministic generator: every path carries the same Y,
// which is the implicit-Euler solution of the oracle ODE.
TEST(Solver, DeterministicHestonMatchesImplicitEuler) {
    HestonModel h = heston_model();
    h.a = 0.0;
    h.x0 = 0.5;
    const Preferences p = Preferences::make(2.0, 1.5, 0.1);
    const TimeGrid g = TimeGrid::make(1.0, 100);
    const MarketPaths paths = simulate_factors(h, g, 50, 1);
    const BsdeSolution sol = solve_bsde(paths, p);
    double y = 0.0;
    for (int i = 99; i >= 0; --i) {
        const Coefficients c = paths.coefficients_at(0, i);
        const Vec z = Vec::Zero(2);
        const double e = y;
        for (int it = 0; it < 100; ++it) {
            const double f = y - g.dt() * generator_H(y, z, c, p) - e;
            const double df = 1.0 + g.dt() * p.delta_pow_psi() * std::exp(p.exp_rate() * y);
            y -= f / df;
        }
    }
    EXPECT_NEAR(sol.y0, y, 1e-10);
    const double oracle = ode_oracle(p, *deterministic_coefficients(h), g)[0];
    EXPECT_NEAR(sol.y0, oracle, 5e-3);
}

TEST(Solver, HestonInstanceIsWellPosed) {
    const Preferences p = Preferences::make(2.0, 2.0, 0.05);
    const MarketPaths paths = simulate_factors(heston_model(), TimeGrid::make(1.0, 20), 4000, 7);
    const BsdeSolution sol = solve_bsde(paths, p);
    EXPECT_EQ(sol.z_cap_hits, 0);
    EXPECT_GT(sol.y0_stderr, 0.0);
    for (int q = 0; q < sol.n_paths; ++q) EXPECT_EQ(sol.y(q, sol.steps()), 0.0);
    // two independent path sets agree to Monte Carlo accuracy
    const BsdeSolution other = solve_bsde(simulate_factors(heston_model(), TimeGrid::make(1.0, 20), 4000, 8), p);
    EXPECT_NEAR(sol.y0, other.y0, 4.0 * std::hypot(sol.y0_stderr, other.y0_stderr) + 1e-3);
}

TEST(Solver, ConvenienceOverloadValidatesParams) {
    const Preferences p = Preferences::make(2.0, 2.0, 1.0);
    EXPECT_THROW(solve_bsde(constant_model(), p, TimeGrid::make(1.0, 5), 100, 2, AssumptionParams{0.5, 2.0}, 1),
                 InvalidParameter);
    const BsdeSolution s =
        solve_bsde(constant_model(), p, TimeGrid::make(1.0, 5), 100, 2, AssumptionParams::make(2.0, 2.0, 2.0), 1);
    EXPECT_EQ(s.n_paths, 100);
}

TEST(Solver, RankDeficientRegressionRaises) {
    HestonModel h = heston_model();
    const MarketPaths paths = simulate_factors(h, TimeGrid::make(1.0, 5), 3, 1);
    SolverOptions o;
    o.basis_degree = 5;
    EXPECT_THROW(solve_bsde(paths, Preferences::make(2.0, 2.0, 0.05), o), NumericalError);
}

TEST(Solver, TruncationOrdering) {
    HestonModel h = heston_model();
    h.lambda = 3.0;
    h.rate = 0.5;
    const Preferences p = Preferences::make(2.0, 2.0, 1.0);
    const MarketPaths paths = simulate_factors(h, TimeGrid::make(2.0, 10), 500, 11);
    auto y0 = [&](double m, double n, double k) {
        SolverOptions o;
        o.basis_degree = 2;
        o.truncation = {m, n, k};
        return solve_bsde(paths, p, o).y0;
    };
    EXPECT_GE(y0(1.0, kInf, kInf), y0(10.0, kInf, kInf));
    EXPECT_GE(y0(10.0, kInf, 1.0), y0(10.0, kInf, kInf));
    EXPECT_LE(y0(10.0, 1.0, kInf), y0(10.0, kInf, kInf));
    EXPECT_GT(y0(1.0, kInf, 1.0) - y0(10.0, 1.0, kInf), 0.1);
}
