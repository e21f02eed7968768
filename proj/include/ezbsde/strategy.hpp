#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ezbsde/bsde.hpp"
#include "ezbsde/errors.hpp"
#include "ezbsde/market.hpp"
#include "ezbsde/preferences.hpp"
#include "ezbsde/recursion.hpp"
#include "ezbsde/stats.hpp"

namespace ezbsde {

/// What a strategy may look at when choosing its step-i control on path p.
struct StrategyContext {
    int path = 0;
    int step = 0;
    double t = 0.0;
    double wealth = 0.0;
    const Coefficients* coeffs = nullptr;
    const MarketPaths* paths = nullptr;
    std::span<const double> wealth_history;  // W_0 .. W_i on this path
};

/// Consumption rate c >= 0 in units of wealth per unit time.
using ConsumptionRule = std::function<double(const StrategyContext&)>;
/// Wealth fractions pi in R^d.
using PortfolioRule = std::function<Vec(const StrategyContext&)>;

struct StrategyPaths {
    TimeGrid grid;
    int n_paths = 0;
    int assets = 0;
    double omega = 1.0;
    double wealth_floor = 0.0;
    std::vector<double> W;   // n_paths x (steps + 1)
    std::vector<double> c;   // n_paths x steps
    std::vector<double> pi;  // n_paths x steps x assets
    std::vector<char> floored;
    long floor_hits = 0;

    int steps() const { return grid.steps; }
    double wealth(int p, int i) const { return W[static_cast<std::size_t>(p) * (grid.steps + 1) + i]; }
    double consumption(int p, int i) const { return c[static_cast<std::size_t>(p) * grid.steps + i]; }
    Vec portfolio(int p, int i) const {
        return Eigen::Map<const Vec>(pi.data() + (static_cast<std::size_t>(p) * grid.steps + i) * assets,
                                     assets);
    }
    int flagged_paths() const {
        int k = 0;
        for (char f : floored) k += f ? 1 : 0;
        return k;
    }
};

/// Log-Euler wealth: on each step W is multiplied by
/// exp((r + pi'mu - c/W - |sigma'pi|^2/2) dt + pi'sigma dW), the exact solution of the
/// wealth equation with controls frozen as fractions of current wealth. Paths that
/// fall below floor_fraction * omega are held at the floor and flagged.
inline StrategyPaths simulate_wealth(const ConsumptionRule& consume, const PortfolioRule& invest,
                                     const MarketPaths& paths, double omega,
                                     double floor_fraction = 1e-10) {
    if (!(omega > 0.0)) throw DomainError("simulate_wealth: initial wealth must be positive");
    const int m = paths.n_paths();
    const int n = paths.steps();
    const int d = paths.assets();
    const double dt = paths.grid().dt();
    StrategyPaths s;
    s.grid = paths.grid();
    s.n_paths = m;
    s.assets = d;
    s.omega = omega;
    s.wealth_floor = floor_fraction * omega;
    s.W.assign(static_cast<std::size_t>(m) * (n + 1), 0.0);
    s.c.assign(static_cast<std::size_t>(m) * n, 0.0);
    s.pi.assign(static_cast<std::size_t>(m) * n * d, 0.0);
    s.floored.assign(m, 0);

    std::vector<std::string> failures;
    long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits)
    for (int p = 0; p < m; ++p) {
        double* w = s.W.data() + static_cast<std::size_t>(p) * (n + 1);
        w[0] = omega;
        for (int i = 0; i < n; ++i) {
            const Coefficients coeffs = paths.coefficients_at(p, i);
            StrategyContext ctx{p, i, s.grid.time(i), w[i], &coeffs, &paths,
                                std::span<const double>(w, static_cast<std::size_t>(i) + 1)};
            const double ci = consume(ctx);
            const Vec pii = invest(ctx);
            if (!(ci >= 0.0) || pii.size() != d || !pii.allFinite()) {
#pragma omp critical
                failures.push_back("simulate_wealth: invalid control at step " + std::to_string(i) +
                                   ", path " + std::to_string(p));
                break;
            }
            s.c[static_cast<std::size_t>(p) * n + i] = ci;
            Eigen::Map<Vec>(s.pi.data() + (static_cast<std::size_t>(p) * n + i) * d, d) = pii;
            const Vec exposure = coeffs.sigma.transpose() * pii;
            const auto dw = paths.increment(p, i);
            double noise = 0.0;
            for (int k = 0; k < exposure.size(); ++k) noise += exposure(k) * dw[k];
            const double drift = coeffs.r + pii.dot(coeffs.mu) - ci / w[i] - 0.5 * exposure.squaredNorm();
            double next = w[i] * std::exp(drift * dt + noise);
            if (!(next >= s.wealth_floor)) {
                next = s.wealth_floor;
                s.floored[p] = 1;
                ++hits;
            }
            w[i + 1] = next;
        }
    }
    if (!failures.empty()) throw DomainError(failures.front());
    s.floor_hits = hits;
    if (s.flagged_paths() == m) throw NumericalError("simulate_wealth: every path hit the wealth floor");
    return s;
}

/// c* = delta^psi e^{-(psi/theta) Y} W.
inline ConsumptionRule optimal_consumption(const BsdeSolution& sol, const Preferences& prefs) {
    return [&sol, prefs](const StrategyContext& ctx) {
        return prefs.delta_pow_psi() * std::exp(prefs.exp_rate() * sol.y(ctx.path, ctx.step)) * ctx.wealth;
    };
}

/// pi* = (1/gamma) Sigma^{-1} (mu + sigma Z').
inline PortfolioRule optimal_portfolio(const BsdeSolution& sol, const Preferences& prefs) {
    return [&sol, prefs](const StrategyContext& ctx) -> Vec {
        const Coefficients& c = *ctx.coeffs;
        const Vec z = sol.z(ctx.path, ctx.step);
        return c.cov_inv * (c.mu + c.sigma * z) / prefs.gamma;
    };
}

inline void require_same_paths(const BsdeSolution& sol, const MarketPaths& paths) {
    if (sol.n_paths != paths.n_paths() || sol.grid.steps != paths.steps() ||
        sol.grid.horizon != paths.grid().horizon)
        throw InvalidParameter("solution and market paths do not share a grid and path set");
}

inline StrategyPaths optimal_controls(const BsdeSolution& sol, const MarketPaths& paths,
                                      const Preferences& prefs, double omega) {
    require_same_paths(sol, paths);
    return simulate_wealth(optimal_consumption(sol, prefs), optimal_portfolio(sol, prefs), paths, omega);
}

/// Recursive utility V_0 of a simulated strategy. `realized` is the reported estimate:
/// the cross-path mean of V(W_T) + sum f(c_i, V_i) dt with its sample standard error.
inline RecursionResult evaluate_recursive_utility(const StrategyPaths& s, const MarketPaths& paths,
                                                  const Preferences& prefs, int basis_degree = 3) {
    const int m = s.n_paths;
    const int n = s.steps();
    RecursionInput in;
    in.paths = &paths;
    in.basis_degree = basis_degree;
    in.excluded = s.floored;
    in.terminal.resize(m);
    for (int p = 0; p < m; ++p) in.terminal[p] = bequest_V(s.wealth(p, n), prefs);
    in.scale = [&s, prefs](int p, int i) { return std::pow(s.wealth(p, i), 1.0 - prefs.gamma); };
    in.driver = [&s, prefs](int p, int i, double v) {
        const double c = s.consumption(p, i);
        return std::pair<double, double>{aggregator_f(c, v, prefs), aggregator_f_dv(c, v, prefs)};
    };
    return backward_utility_recursion(in);
}

/// Utility process G_t = W^{1-gamma} e^{Y}/(1-gamma) + int_0^t f(c, W^{1-gamma} e^{Y}/(1-gamma)) ds.
struct UtilityProcess {
    std::vector<double> G;  // n_paths x (steps + 1)
    double G0 = 0.0;
    SampleStats terminal;  // Ê[G_T]
    double drift = 0.0;    // (Ê[G_T] - G0) / T
    double drift_stderr = 0.0;
};

namespace detail {

/// int_0^dt e^{-kappa s} ds.
inline double decay_weight(double kappa, double dt) {
    const double x = kappa * dt;
    if (std::abs(x) < 1e-8) return dt * (1.0 - 0.5 * x);
    return -std::expm1(-x) / kappa;
}

}  // namespace detail

/// The running integral is taken over each step against the conditional mean of
/// L = W^{1-gamma} e^{Y}/(1-gamma) with controls frozen: f(c, L) is proportional to L,
/// and L decays at the rate kappa implied by the wealth and BSDE dynamics, so the step
/// contributes f_i (1 - e^{-kappa dt})/kappa.
inline UtilityProcess utility_process_G(const StrategyPaths& s, const BsdeSolution& sol,
                                        const MarketPaths& paths, const Preferences& prefs) {
    require_same_paths(sol, paths);
    const int m = s.n_paths;
    const int n = s.steps();
    const double dt = s.grid.dt();
    const double g = prefs.gamma;
    UtilityProcess out;
    out.G.assign(static_cast<std::size_t>(m) * (n + 1), 0.0);
    std::vector<double> g0, gT;
    for (int p = 0; p < m; ++p) {
        double integral = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double w = s.wealth(p, i);
            const double level = std::pow(w, 1.0 - g) * std::exp(sol.y(p, i)) / (1.0 - g);
            out.G[static_cast<std::size_t>(p) * (n + 1) + i] = level + integral;
            if (i == n) break;
            const Coefficients c = paths.coefficients_at(p, i);
            const Vec pi = s.portfolio(p, i);
            const Vec z = sol.z(p, i);
            const Vec exposure = c.sigma.transpose() * pi;
            const double chat = s.consumption(p, i) / w;
            const double growth = (1.0 - g) * (c.r + pi.dot(c.mu) - chat - 0.5 * exposure.squaredNorm()) -
                                  generator_H(sol.y(p, i), z, c, prefs) +
                                  0.5 * ((1.0 - g) * exposure + z).squaredNorm();
            integral += aggregator_f(s.consumption(p, i), level, prefs) * detail::decay_weight(-growth, dt);
        }
        if (s.floored[p]) continue;
        g0.push_back(out.G[static_cast<std::size_t>(p) * (n + 1)]);
        gT.push_back(out.G[static_cast<std::size_t>(p) * (n + 1) + n]);
    }
    out.G0 = pairwise_sum(g0) / static_cast<double>(g0.size());
    out.terminal = sample_stats(gT);
    if (s.grid.horizon > 0.0) {
        out.drift = (out.terminal.mean - out.G0) / s.grid.horizon;
        out.drift_stderr = out.terminal.std_error / s.grid.horizon;
    }
    return out;
}

/// Columns: path, step, t, W, c, pi_1..pi_d, G (c and pi empty at the last step).
inline void write_strategy_csv(std::ostream& os, const StrategyPaths& s, const UtilityProcess* g = nullptr) {
    os << "path,step,t,W,c";
    for (int j = 0; j < s.assets; ++j) os << ",pi_" << j + 1;
    os << ",G\n";
    const int n = s.steps();
    for (int p = 0; p < s.n_paths; ++p) {
        for (int i = 0; i <= n; ++i) {
            os << p << ',' << i << ',' << s.grid.time(i) << ',' << s.wealth(p, i) << ',';
            if (i < n) os << s.consumption(p, i);
            const Vec pi = i < n ? s.portfolio(p, i) : Vec::Zero(s.assets);
            for (int j = 0; j < s.assets; ++j) {
                os << ',';
                if (i < n) os << pi(j);
            }
            os << ',';
            if (g) os << g->G[static_cast<std::size_t>(p) * (n + 1) + i];
            os << '\n';
        }
    }
}

}  // namespace ezbsde
