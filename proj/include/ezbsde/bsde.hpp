#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ezbsde/errors.hpp"
#include "ezbsde/generator.hpp"
#include "ezbsde/market.hpp"
#include "ezbsde/newton.hpp"
#include "ezbsde/preferences.hpp"
#include "ezbsde/regression.hpp"
#include "ezbsde/stats.hpp"

namespace ezbsde {

/// Lower bound on q given p and gamma:
/// max{ p(gamma-1)(gamma+2) / (gamma (1 + 2(p-1) gamma)), 1 }.
inline double q_threshold(double p, double gamma) {
    return std::max(p * (gamma - 1.0) * (gamma + 2.0) / (gamma * (1.0 + 2.0 * (p - 1.0) * gamma)), 1.0);
}

/// 1 - 1/(2p) + (1-gamma)/(2 p gamma) + (1-gamma)(gamma+2)/(2 gamma^2 q): the
/// coefficient of the relative entropy in the martingale estimate of Q.
inline double entropy_coefficient(double p, double q, double gamma) {
    return 1.0 - 1.0 / (2.0 * p) + (1.0 - gamma) / (2.0 * p * gamma) +
           (1.0 - gamma) * (gamma + 2.0) / (2.0 * gamma * gamma * q);
}

/// Exponential-integrability orders (p, q).
struct AssumptionParams {
    double p = 2.0;
    double q = 2.0;

    static AssumptionParams make(double p, double q, double gamma) {
        if (!(p > 1.0)) throw InvalidParameter("assumption parameter p must exceed 1");
        const double qmin = q_threshold(p, gamma);
        if (!(q > qmin))
            throw InvalidParameter("assumption parameter q = " + std::to_string(q) +
                                   " must exceed its threshold " + std::to_string(qmin));
        if (!(entropy_coefficient(p, q, gamma) > 0.0))
            throw InvalidParameter("entropy coefficient is not positive for (p, q, gamma)");
        return AssumptionParams{p, q};
    }
};

struct SolverOptions {
    int basis_degree = 3;
    /// Exponential-term cap m and running-integral levels. The default cap e^{50}
    /// is always on; hitting it marks the result as not converged in m.
    Truncation truncation{std::exp(50.0), kInf, kInf};
    /// Cap on |Z|; NaN selects max(10 * max market price of risk, 1).
    double z_cap = std::numeric_limits<double>::quiet_NaN();
    double newton_tol = 1e-12;
    int newton_max_iter = 50;
    int batches = 20;
};

/// Pathwise (Y, Z) on the grid plus solver diagnostics.
struct BsdeSolution {
    TimeGrid grid;
    int n_paths = 0;
    int noises = 0;
    std::vector<double> Y;  // n_paths x (steps + 1)
    std::vector<double> Z;  // n_paths x steps x noises
    int basis_degree = 0;
    Truncation truncation;
    double newton_tol = 0.0;
    double z_cap = 0.0;
    long z_cap_hits = 0;
    bool exp_cap_active = false;
    std::vector<double> residuals;  // RMS regression residual of Y_{i+1} per step
    double y0 = 0.0;
    double y0_stderr = 0.0;

    int steps() const { return grid.steps; }
    double y(int p, int i) const { return Y[static_cast<std::size_t>(p) * (grid.steps + 1) + i]; }
    Vec z(int p, int i) const {
        return Eigen::Map<const Vec>(Z.data() + (static_cast<std::size_t>(p) * grid.steps + i) * noises,
                                     noises);
    }
};

namespace detail {

inline Eigen::MatrixXd state_matrix(const MarketPaths& paths, int step) {
    Eigen::MatrixXd f(paths.n_paths(), paths.features());
    for (int p = 0; p < paths.n_paths(); ++p) {
        const auto s = paths.state(p, step);
        for (int j = 0; j < paths.features(); ++j) f(p, j) = s[j];
    }
    return f;
}

/// int_0^{t_i} (|r| + mu'Sigma^{-1}mu) ds by left-point sums, n_paths x (steps + 1).
inline std::vector<double> truncation_clock(const MarketPaths& paths) {
    const int n = paths.steps();
    const double dt = paths.grid().dt();
    std::vector<double> clock(static_cast<std::size_t>(paths.n_paths()) * (n + 1), 0.0);
    for (int p = 0; p < paths.n_paths(); ++p) {
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            clock[static_cast<std::size_t>(p) * (n + 1) + i] = acc;
            if (i < n) acc += (std::abs(paths.rate(p, i)) + paths.risk_price_sq(p, i)) * dt;
        }
    }
    return clock;
}

}  // namespace detail

/// Backward regression Monte Carlo for Y_t = int_t^T H(s, Y, Z) ds - int_t^T Z dW, Y_T = 0.
/// Z_i is the regression of (Y_{i+1} - E_i[Y_{i+1}]) dW_i / dt, Y_i solves the implicit step
/// y = E_i[Y_{i+1}] + H(t_i, y, Z_i) dt by bracketed Newton.
inline BsdeSolution solve_bsde(const MarketPaths& paths, const Preferences& prefs,
                               const SolverOptions& opt = {}) {
    const int m = paths.n_paths();
    const int nsteps = paths.steps();
    const int n = paths.noises();
    const double dt = paths.grid().dt();

    BsdeSolution sol;
    sol.grid = paths.grid();
    sol.n_paths = m;
    sol.noises = n;
    sol.basis_degree = opt.basis_degree;
    sol.truncation = opt.truncation;
    sol.newton_tol = opt.newton_tol;
    sol.z_cap = std::isnan(opt.z_cap) ? std::max(10.0 * paths.max_risk_price(), 1.0) : opt.z_cap;
    sol.Y.assign(static_cast<std::size_t>(m) * (nsteps + 1), 0.0);
    sol.Z.assign(static_cast<std::size_t>(m) * nsteps * n, 0.0);
    sol.residuals.assign(nsteps, 0.0);

    const std::vector<double> clock = detail::truncation_clock(paths);
    auto yat = [&](int p, int i) -> double& { return sol.Y[static_cast<std::size_t>(p) * (nsteps + 1) + i]; };
    const double log_cap = std::log(opt.truncation.m);

    for (int i = nsteps - 1; i >= 0; --i) {
        const Regressor reg(detail::state_matrix(paths, i), opt.basis_degree);
        Eigen::MatrixXd next(m, 1);
        for (int p = 0; p < m; ++p) next(p, 0) = yat(p, i + 1);
        const Eigen::VectorXd ey = reg.fit(next).col(0);
        sol.residuals[i] = std::sqrt((next.col(0) - ey).squaredNorm() / m);

        Eigen::MatrixXd zt(m, n);
        if (dt > 0.0) {
            for (int p = 0; p < m; ++p) {
                const auto dw = paths.increment(p, i);
                for (int k = 0; k < n; ++k) zt(p, k) = (next(p, 0) - ey(p)) * dw[k] / dt;
            }
            zt = reg.fit(zt);
        } else {
            zt.setZero();
        }

        long hits = 0;
        std::vector<std::string> failures;
#pragma omp parallel for schedule(static) reduction(+ : hits)
        for (int p = 0; p < m; ++p) {
            Vec z = zt.row(p).transpose();
            const double norm = z.norm();
            if (norm > sol.z_cap) {
                z *= sol.z_cap / norm;
                ++hits;
            }
            Eigen::Map<Vec>(sol.Z.data() + (static_cast<std::size_t>(p) * nsteps + i) * n, n) = z;

            const Coefficients c = paths.coefficients_at(p, i);
            const double run = clock[static_cast<std::size_t>(p) * (nsteps + 1) + i];
            const double e = ey(p);
            auto h = [&](double y) { return generator_truncated(y, z, opt.truncation, run, c, prefs); };
            auto f = [&](double y) { return y - dt * h(y) - e; };
            auto df = [&](double y) {
                return 1.0 - dt * generator_truncated_dy(y, z, opt.truncation, run, c, prefs);
            };
            const double h0 = h(e);
            const double lo = h0 >= 0.0 ? e : e + dt * h0;
            const double hi = h0 >= 0.0 ? e + dt * h0 : e;
            try {
                yat(p, i) = (lo == hi) ? lo
                                       : solve_monotone_root(f, df, lo, hi, e, opt.newton_tol,
                                                             opt.newton_max_iter, "solve_bsde")
                                             .x;
            } catch (const NumericalError&) {
#pragma omp critical
                failures.push_back("Newton failed at step " + std::to_string(i) + ", path " +
                                   std::to_string(p));
            }
        }
        if (!failures.empty()) throw NumericalError(failures.front());
        sol.z_cap_hits += hits;
    }

    std::vector<double> forward(m, 0.0);
    for (int p = 0; p < m; ++p) {
        double acc = 0.0;
        for (int i = 0; i < nsteps; ++i) {
            const Coefficients c = paths.coefficients_at(p, i);
            const Vec z = sol.z(p, i);
            const double run = clock[static_cast<std::size_t>(p) * (nsteps + 1) + i];
            acc += generator_truncated(sol.y(p, i), z, opt.truncation, run, c, prefs) * dt;
            const auto dw = paths.increment(p, i);
            for (int k = 0; k < n; ++k) acc -= z(k) * dw[k];
            if (opt.truncation.m < kInf && prefs.exp_rate() * sol.y(p, i) >= log_cap)
                sol.exp_cap_active = true;
        }
        forward[p] = acc;
    }
    std::vector<double> y0s(m);
    for (int p = 0; p < m; ++p) y0s[p] = sol.y(p, 0);
    sol.y0 = pairwise_sum(y0s) / m;
    sol.y0_stderr = batch_stats(forward, static_cast<std::size_t>(opt.batches)).std_error;
    return sol;
}

/// Convenience overload: simulate the market with `seed`, then solve.
inline BsdeSolution solve_bsde(const MarketModel& model, const Preferences& prefs, const TimeGrid& grid,
                               int n_paths, int basis_degree, const AssumptionParams& params,
                               std::uint64_t seed) {
    (void)AssumptionParams::make(params.p, params.q, prefs.gamma);
    SolverOptions opt;
    opt.basis_degree = basis_degree;
    return solve_bsde(simulate_factors(model, grid, n_paths, seed), prefs, opt);
}

/// RK4 solution of Y' = -H(t, Y, 0), Y(T) = 0, for deterministic coefficients, on a
/// grid refined `refinement` times. Returns Y at the points of `grid`.
inline std::vector<double> ode_oracle(const Preferences& prefs,
                                      const std::function<Coefficients(double)>& coeffs,
                                      const TimeGrid& grid, int refinement = 10) {
    if (refinement < 10) throw InvalidParameter("ode_oracle: refinement must be at least 10");
    std::vector<double> out(grid.steps + 1, 0.0);
    if (grid.horizon == 0.0) return out;
    const Vec zero = Vec::Zero(coeffs(grid.horizon).noises());
    auto rhs = [&](double t, double y) { return -generator_H(y, zero, coeffs(t), prefs); };
    const double h = grid.dt() / refinement;
    double y = 0.0;
    for (int i = grid.steps; i > 0; --i) {
        for (int s = 0; s < refinement; ++s) {
            const double t = grid.time(i) - s * h;
            if (!(h > 0.0) || t - h == t)
                throw NumericalError("ode_oracle: step size underflow");
            const double k1 = rhs(t, y);
            const double k2 = rhs(t - 0.5 * h, y - 0.5 * h * k1);
            const double k3 = rhs(t - 0.5 * h, y - 0.5 * h * k2);
            const double k4 = rhs(t - h, y - h * k3);
            y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out[i - 1] = y;
    }
    return out;
}

/// Constant y* at which the (mu = 0, r = 0) generator vanishes with z = 0:
/// (theta/psi) delta^psi e^{-(psi/theta) y} = delta theta.
inline double generator_equilibrium(const Preferences& p) {
    return std::log(p.psi * std::pow(p.delta, 1.0 - p.psi)) / p.exp_rate();
}

}  // namespace ezbsde
