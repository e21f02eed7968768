#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ezbsde/bsde.hpp"
#include "ezbsde/errors.hpp"
#include "ezbsde/market.hpp"
#include "ezbsde/newton.hpp"
#include "ezbsde/regression.hpp"
#include "ezbsde/stats.hpp"

namespace ezbsde {

/// Driver of a negative-valued backward recursion v_i = E_i[v_{i+1}] + F(p, i, v_i) dt:
/// returns (F, dF/dv) at v < 0.
using RecursionDriver = std::function<std::pair<double, double>(int p, int i, double v)>;

/// Backward recursion for recursive utilities on a shared path set. Conditional
/// expectations regress V_{i+1} / s_i on (market state, log s_i), where s is a
/// positive per-path scale carrying the homogeneity in wealth (or density).
struct RecursionInput {
    const MarketPaths* paths = nullptr;
    std::vector<double> terminal;              // V_N per path, < 0
    std::function<double(int p, int i)> scale;  // s_i > 0
    RecursionDriver driver;
    std::vector<char> excluded;  // paths left out of the regression and the averages
    int basis_degree = 3;
    double tol = 1e-12;
    int max_iter = 100;
};

struct RecursionResult {
    std::vector<double> values;  // n_paths x (steps + 1)
    double regression_value = 0.0;  // cross-path mean of V_0
    SampleStats realized;  // mean of V_N + sum F(p, i, V_i) dt
    std::vector<double> realized_paths;
};

namespace detail {

/// Root of v - dt F(v) - e = 0 on v < 0. The map tends to -e > 0 as v -> 0- and to
/// -infinity as v -> -infinity for the Epstein-Zin drivers used here.
inline double solve_negative_step(const RecursionDriver& drv, int p, int i, double e, double dt,
                                  double tol, int max_iter) {
    if (dt == 0.0) return e;
    auto F = [&](double v) { return v - dt * drv(p, i, v).first - e; };
    auto dF = [&](double v) { return 1.0 - dt * drv(p, i, v).second; };
    double hi = e * 1e-14;
    double lo = e;
    for (int k = 0; F(lo) > 0.0; ++k) {
        hi = lo;
        lo *= 2.0;
        if (k > 2000 || !std::isfinite(lo)) throw NumericalError("utility recursion: no lower bracket");
    }
    if (F(hi) < 0.0) throw NumericalError("utility recursion: no upper bracket below zero");
    return solve_monotone_root(F, dF, lo, hi, lo, tol, max_iter, "utility recursion").x;
}

}  // namespace detail

inline RecursionResult backward_utility_recursion(const RecursionInput& in) {
    const MarketPaths& paths = *in.paths;
    const int m = paths.n_paths();
    const int n = paths.steps();
    const double dt = paths.grid().dt();
    std::vector<char> excluded = in.excluded;
    excluded.resize(m, 0);
    std::vector<int> kept;
    for (int p = 0; p < m; ++p)
        if (!excluded[p]) kept.push_back(p);
    if (kept.empty()) throw NumericalError("utility recursion: every path excluded");
    const int mk = static_cast<int>(kept.size());

    RecursionResult out;
    out.values.assign(static_cast<std::size_t>(m) * (n + 1), 0.0);
    auto val = [&](int p, int i) -> double& { return out.values[static_cast<std::size_t>(p) * (n + 1) + i]; };
    for (int p = 0; p < m; ++p) {
        if (!(in.terminal[p] < 0.0) && !excluded[p])
            throw DomainError("utility recursion: terminal value must be negative");
        val(p, n) = in.terminal[p];
    }

    for (int i = n - 1; i >= 0; --i) {
        Eigen::MatrixXd feats(mk, paths.features() + 1);
        Eigen::MatrixXd target(mk, 1);
        std::vector<double> s(mk);
        for (int j = 0; j < mk; ++j) {
            const int p = kept[j];
            const auto st = paths.state(p, i);
            for (int k = 0; k < paths.features(); ++k) feats(j, k) = st[k];
            s[j] = in.scale(p, i);
            if (!(s[j] > 0.0) || !std::isfinite(s[j])) throw NumericalError("utility recursion: bad scale");
            feats(j, paths.features()) = std::log(s[j]);
            target(j, 0) = val(p, i + 1) / s[j];
        }
        const Eigen::VectorXd fitted = Regressor(feats, in.basis_degree).fit(target).col(0);
        std::vector<std::string> failures;
#pragma omp parallel for schedule(static)
        for (int j = 0; j < mk; ++j) {
            const int p = kept[j];
            // a regression that strays to a nonnegative value is pulled back to the sample
            double e = fitted(j) * s[j];
            if (!(e < 0.0)) e = val(p, i + 1);
            try {
                val(p, i) = detail::solve_negative_step(in.driver, p, i, e, dt, in.tol, in.max_iter);
            } catch (const NumericalError& err) {
#pragma omp critical
                failures.push_back(std::string(err.what()) + " at step " + std::to_string(i) + ", path " +
                                   std::to_string(p));
            }
        }
        if (!failures.empty()) throw NumericalError(failures.front());
    }

    std::vector<double> v0(mk);
    out.realized_paths.assign(mk, 0.0);
    for (int j = 0; j < mk; ++j) {
        const int p = kept[j];
        v0[j] = val(p, 0);
        double acc = val(p, n);
        for (int i = 0; i < n; ++i) acc += in.driver(p, i, val(p, i)).first * dt;
        out.realized_paths[j] = acc;
    }
    out.regression_value = pairwise_sum(v0) / mk;
    out.realized = sample_stats(out.realized_paths);
    return out;
}

}  // namespace ezbsde
