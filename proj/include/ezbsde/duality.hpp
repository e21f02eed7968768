#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "ezbsde/bsde.hpp"
#include "ezbsde/errors.hpp"
#include "ezbsde/market.hpp"
#include "ezbsde/preferences.hpp"
#include "ezbsde/recursion.hpp"
#include "ezbsde/stats.hpp"
#include "ezbsde/strategy.hpp"

namespace ezbsde {

/// Density paths dD/D = -r dt + xi dW, stored as log D.
struct DualPaths {
    TimeGrid grid;
    int n_paths = 0;
    int noises = 0;
    std::vector<double> logD;  // n_paths x (steps + 1)
    std::vector<double> xi;    // n_paths x steps x noises

    int steps() const { return grid.steps; }
    double log_density(int p, int i) const { return logD[static_cast<std::size_t>(p) * (grid.steps + 1) + i]; }
    double density(int p, int i) const { return std::exp(log_density(p, i)); }
    Vec volatility(int p, int i) const {
        return Eigen::Map<const Vec>(xi.data() + (static_cast<std::size_t>(p) * grid.steps + i) * noises,
                                     noises);
    }
};

/// Density volatility chosen at (path, step) from the local coefficients.
using DensityVolatility = std::function<Vec(int p, int i, const Coefficients&)>;

/// Exact exponential per step: log D_{i+1} = log D_i + (-r - |xi|^2/2) dt + xi . dW_i.
inline DualPaths density_from_volatility(const MarketPaths& paths, const DensityVolatility& vol) {
    const int m = paths.n_paths();
    const int n = paths.steps();
    const int k = paths.noises();
    const double dt = paths.grid().dt();
    DualPaths d;
    d.grid = paths.grid();
    d.n_paths = m;
    d.noises = k;
    d.logD.assign(static_cast<std::size_t>(m) * (n + 1), 0.0);
    d.xi.assign(static_cast<std::size_t>(m) * n * k, 0.0);
#pragma omp parallel for schedule(static)
    for (int p = 0; p < m; ++p) {
        double* ld = d.logD.data() + static_cast<std::size_t>(p) * (n + 1);
        for (int i = 0; i < n; ++i) {
            const Coefficients c = paths.coefficients_at(p, i);
            const Vec xi = vol(p, i, c);
            Eigen::Map<Vec>(d.xi.data() + (static_cast<std::size_t>(p) * n + i) * k, k) = xi;
            const auto dw = paths.increment(p, i);
            double noise = 0.0;
            for (int j = 0; j < k; ++j) noise += xi(j) * dw[j];
            ld[i + 1] = ld[i] + (-c.r - 0.5 * xi.squaredNorm()) * dt + noise;
        }
    }
    return d;
}

/// D0 = e^{-int r} times the stochastic exponential of -int mu'Sigma^{-1}sigma dW.
inline DualPaths minimal_density_D0(const MarketPaths& paths) {
    return density_from_volatility(paths, [](int, int, const Coefficients& c) -> Vec { return -c.risk_price; });
}

/// xi* = Z - mu'Sigma^{-1}sigma - Z sigma'Sigma^{-1}sigma.
inline Vec optimal_xi(const Vec& z, const Coefficients& c) { return z - c.risk_price - c.projection * z; }

inline DualPaths optimal_dual_density(const BsdeSolution& sol, const MarketPaths& paths) {
    require_same_paths(sol, paths);
    return density_from_volatility(
        paths, [&sol](int p, int i, const Coefficients& c) -> Vec { return optimal_xi(sol.z(p, i), c); });
}

/// xi* + eps (I - sigma'Sigma^{-1}sigma) e_j: a perturbation inside the kernel of sigma,
/// so D stays a state price density.
inline DualPaths perturbed_dual_density(const BsdeSolution& sol, const MarketPaths& paths, double eps,
                                        int direction) {
    require_same_paths(sol, paths);
    if (direction < 0 || direction >= paths.noises())
        throw InvalidParameter("perturbed_dual_density: direction out of range");
    return density_from_volatility(paths, [&sol, eps, direction](int p, int i, const Coefficients& c) -> Vec {
        const int n = c.noises();
        const Vec e = Vec::Unit(n, direction);
        return optimal_xi(sol.z(p, i), c) + eps * (e - c.projection * e);
    });
}

/// U_0 = gamma/(1-gamma) y^{(gamma-1)/gamma} e^{Y_0/gamma}.
inline double dual_value(double y, double Y0, const Preferences& prefs) {
    if (!(y > 0.0)) throw DomainError("dual_value: multiplier y must be positive");
    const double g = prefs.gamma;
    return g / (1.0 - g) * std::exp((g - 1.0) / g * std::log(y) + Y0 / g);
}

/// Pathwise U_t = gamma/(1-gamma) (y D_t)^{(gamma-1)/gamma} e^{Y_t/gamma}.
inline std::vector<double> dual_value_paths(const DualPaths& d, const BsdeSolution& sol, double y,
                                            const Preferences& prefs) {
    if (!(y > 0.0)) throw DomainError("dual_value_paths: multiplier y must be positive");
    const double g = prefs.gamma;
    const int n = d.steps();
    std::vector<double> u(static_cast<std::size_t>(d.n_paths) * (n + 1));
    for (int p = 0; p < d.n_paths; ++p)
        for (int i = 0; i <= n; ++i)
            u[static_cast<std::size_t>(p) * (n + 1) + i] =
                g / (1.0 - g) * std::exp((g - 1.0) / g * (std::log(y) + d.log_density(p, i)) + sol.y(p, i) / g);
    return u;
}

/// y* = omega^{-gamma} e^{Y_0}.
inline double optimal_multiplier(double omega, double Y0, const Preferences& prefs) {
    if (!(omega > 0.0)) throw DomainError("optimal_multiplier: initial wealth must be positive");
    return std::exp(-prefs.gamma * std::log(omega) + Y0);
}

struct DualityGap {
    double V0 = 0.0;  // omega^{1-gamma} e^{Y_0}/(1-gamma)
    double U0 = 0.0;  // closed form at y*
    double y_star = 0.0;
    double algebraic_gap = 0.0;
    double primal_estimate = 0.0;
    double dual_estimate = 0.0;  // Monte Carlo U_0 + omega y*
    double mc_gap = 0.0;
    double stderr_combined = 0.0;
};

/// Closed-form identity V_0 = U_0^{y*D*} + omega y* and the Monte Carlo gap between a
/// primal estimate and a dual estimate (the closed form when `dual_mc` is empty).
inline DualityGap duality_gap(double Y0, const Preferences& prefs, double omega, const SampleStats& primal,
                              const std::optional<SampleStats>& dual_mc = std::nullopt) {
    DualityGap g;
    g.V0 = std::pow(omega, 1.0 - prefs.gamma) * std::exp(Y0) / (1.0 - prefs.gamma);
    g.y_star = optimal_multiplier(omega, Y0, prefs);
    g.U0 = dual_value(g.y_star, Y0, prefs);
    g.algebraic_gap = std::abs(g.V0 - (g.U0 + omega * g.y_star));
    g.primal_estimate = primal.mean;
    const double u = dual_mc ? dual_mc->mean : g.U0;
    const double u_se = dual_mc ? dual_mc->std_error : 0.0;
    g.dual_estimate = u + omega * g.y_star;
    g.mc_gap = std::abs(primal.mean - g.dual_estimate);
    g.stderr_combined = std::sqrt(primal.std_error * primal.std_error + u_se * u_se);
    return g;
}

/// Dual utility of yD by backward recursion: u_i = E_i[u_{i+1}] + g(yD_i, u_i/gamma) dt,
/// u_N = U(yD_N). The realized estimator is the reported value.
inline RecursionResult evaluate_dual_utility(const DualPaths& d, const MarketPaths& paths, double y,
                                             const Preferences& prefs, int basis_degree = 3) {
    if (!(y > 0.0)) throw DomainError("evaluate_dual_utility: multiplier y must be positive");
    const int m = d.n_paths;
    const int n = d.steps();
    const double g = prefs.gamma;
    const double log_y = std::log(y);
    RecursionInput in;
    in.paths = &paths;
    in.basis_degree = basis_degree;
    in.terminal.resize(m);
    for (int p = 0; p < m; ++p) in.terminal[p] = dual_terminal_U(std::exp(log_y + d.log_density(p, n)), prefs);
    in.scale = [&d, log_y, g](int p, int i) { return std::exp((g - 1.0) / g * (log_y + d.log_density(p, i))); };
    in.driver = [&d, log_y, g, prefs](int p, int i, double u) {
        const double yd = std::exp(log_y + d.log_density(p, i));
        return std::pair<double, double>{dual_aggregator_g(yd, u / g, prefs),
                                         dual_aggregator_g_du(yd, u / g, prefs) / g};
    };
    return backward_utility_recursion(in);
}

/// R_t = gamma (yD)^{(gamma-1)/gamma} e^{Y/gamma}/(1-gamma) + int_0^t g(yD, (yD)^{(gamma-1)/gamma} e^{Y/gamma}/(1-gamma)) ds.
/// The integral uses the same per-step decay weighting as utility_process_G.
inline UtilityProcess dual_process_R(const DualPaths& d, const BsdeSolution& sol, const MarketPaths& paths,
                                     const Preferences& prefs, double y) {
    require_same_paths(sol, paths);
    if (!(y > 0.0)) throw DomainError("dual_process_R: multiplier y must be positive");
    const int m = d.n_paths;
    const int n = d.steps();
    const double dt = d.grid.dt();
    const double g = prefs.gamma;
    const double log_y = std::log(y);
    UtilityProcess out;
    out.G.assign(static_cast<std::size_t>(m) * (n + 1), 0.0);
    std::vector<double> r0(m), rT(m);
    for (int p = 0; p < m; ++p) {
        double integral = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double ly = log_y + d.log_density(p, i);
            const double base = std::exp((g - 1.0) / g * ly + sol.y(p, i) / g) / (1.0 - g);
            out.G[static_cast<std::size_t>(p) * (n + 1) + i] = g * base + integral;
            if (i == n) break;
            const Coefficients c = paths.coefficients_at(p, i);
            const Vec xi = d.volatility(p, i);
            const Vec z = sol.z(p, i);
            const double growth = (g - 1.0) / g * (-c.r - 0.5 * xi.squaredNorm()) -
                                  generator_H(sol.y(p, i), z, c, prefs) / g +
                                  0.5 * ((g - 1.0) * xi + z).squaredNorm() / (g * g);
            integral += dual_aggregator_g(std::exp(ly), base, prefs) * detail::decay_weight(-growth, dt);
        }
        r0[p] = out.G[static_cast<std::size_t>(p) * (n + 1)];
        rT[p] = out.G[static_cast<std::size_t>(p) * (n + 1) + n];
    }
    out.G0 = pairwise_sum(r0) / m;
    out.terminal = sample_stats(rT);
    if (d.grid.horizon > 0.0) {
        out.drift = (out.terminal.mean - out.G0) / d.grid.horizon;
        out.drift_stderr = out.terminal.std_error / d.grid.horizon;
    }
    return out;
}

}  // namespace ezbsde
