#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ezbsde/bsde.hpp"
#include "ezbsde/errors.hpp"
#include "ezbsde/market.hpp"
#include "ezbsde/stats.hpp"
#include "ezbsde/strategy.hpp"

namespace ezbsde {

/// Integrands whose exponential moments control the problem.
enum class Functional { RateNegative, RatePositive, RiskPriceSq, AbsRate };

inline std::string functional_name(Functional f) {
    switch (f) {
        case Functional::RateNegative: return "r_minus";
        case Functional::RatePositive: return "r_plus";
        case Functional::RiskPriceSq: return "mpr2";
        case Functional::AbsRate: return "abs_r";
    }
    return "?";
}

inline Functional parse_functional(const std::string& s) {
    for (Functional f : {Functional::RateNegative, Functional::RatePositive, Functional::RiskPriceSq,
                         Functional::AbsRate})
        if (functional_name(f) == s) return f;
    throw InvalidParameter("unknown functional '" + s + "'");
}

inline double functional_value(Functional f, const MarketPaths& paths, int p, int i) {
    switch (f) {
        case Functional::RateNegative: return negative_part(paths.rate(p, i));
        case Functional::RatePositive: return positive_part(paths.rate(p, i));
        case Functional::RiskPriceSq: return paths.risk_price_sq(p, i);
        case Functional::AbsRate: return std::abs(paths.rate(p, i));
    }
    return 0.0;
}

/// int_0^T functional ds per path (left-point sums).
inline std::vector<double> path_integrals(const MarketPaths& paths, Functional f) {
    const double dt = paths.grid().dt();
    std::vector<double> out(paths.n_paths(), 0.0);
    for (int p = 0; p < paths.n_paths(); ++p) {
        double acc = 0.0;
        for (int i = 0; i < paths.steps(); ++i) acc += functional_value(f, paths, p, i);
        out[p] = acc * dt;
    }
    return out;
}

struct MomentEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    bool tail_flag = false;  // top 1% of samples carry more than half of the sum
    bool overflow = false;
};

/// E[exp(x)] from samples of x with 20-batch standard errors.
inline MomentEstimate exponential_moment_of(const std::vector<double>& exponents, int batches = 20) {
    MomentEstimate e;
    std::vector<double> v(exponents.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = std::exp(exponents[j]);
        if (!std::isfinite(v[j])) e.overflow = true;
    }
    if (e.overflow) {
        e.mean = std::numeric_limits<double>::infinity();
        e.std_error = std::numeric_limits<double>::infinity();
        e.tail_flag = true;
        return e;
    }
    const SampleStats s = v.size() >= static_cast<std::size_t>(2 * batches)
                              ? batch_stats(v, static_cast<std::size_t>(batches))
                              : sample_stats(v);
    e.mean = s.mean;
    e.std_error = s.std_error;
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t top = std::max<std::size_t>(1, (sorted.size() + 99) / 100);
    const double head = pairwise_sum(std::span<const double>(sorted.data(), top));
    e.tail_flag = head > 0.5 * pairwise_sum(sorted);
    return e;
}

/// E[exp(coefficient * int_0^T functional ds)].
inline MomentEstimate estimate_exponential_moment(const MarketPaths& paths, Functional f, double coefficient) {
    std::vector<double> x = path_integrals(paths, f);
    for (double& v : x) v *= coefficient;
    return exponential_moment_of(x);
}

struct ClauseResult {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    std::string relation;  // "<", "<=", ">"
    bool holds = false;
};

/// A sufficient set of clauses: passes when all of them hold.
struct ClauseSet {
    std::string name;
    std::vector<ClauseResult> clauses;
    bool pass() const {
        return std::all_of(clauses.begin(), clauses.end(), [](const ClauseResult& c) { return c.holds; });
    }
};

struct ConditionReport {
    std::string model;
    std::vector<ClauseSet> sets;
    bool pass() const {
        return std::any_of(sets.begin(), sets.end(), [](const ClauseSet& s) { return s.pass(); });
    }
};

namespace detail {

inline ClauseResult clause(std::string name, double lhs, const char* rel, double rhs) {
    bool ok = false;
    const std::string r = rel;
    if (r == "<") ok = lhs < rhs;
    else if (r == "<=") ok = lhs <= rhs;
    else if (r == ">") ok = lhs > rhs;
    return {std::move(name), lhs, rhs, r, ok};
}

inline ConditionReport heston_conditions(const HestonModel& m, double q, double T) {
    const double lam2 = m.lambda * m.lambda;
    const double a2 = m.a * m.a;
    ConditionReport r{"heston", {}};
    r.sets.push_back({"i",
                      {clause("4bl <= a^2", 4.0 * m.b * m.l, "<=", a2),
                       clause("qT lambda^2 a^2 (e^{bT}-1) < 2b sigma^2",
                              q * T * lam2 * a2 * std::expm1(m.b * T), "<", 2.0 * m.b * m.sigma * m.sigma)}});
    r.sets.push_back({"ii",
                      {clause("2bl > a^2", 2.0 * m.b * m.l, ">", a2),
                       clause("2q lambda^2 a^2 < b^2 sigma^2", 2.0 * q * lam2 * a2, "<",
                              m.b * m.b * m.sigma * m.sigma)}});
    return r;
}

inline ConditionReport linear_diffusion_conditions(const LinearDiffusionModel& m, double q, double T) {
    const double c = 2.0 * q * m.lambda1 * m.lambda1;
    const double a2 = m.a * m.a;
    ConditionReport r{"linear_diffusion", {}};
    // some c > 2q lambda1^2 works iff the infimum c = 2q lambda1^2 gives a strict inequality
    r.sets.push_back({"i", {clause("2q lambda1^2 T a^2 (e^{2bT}-1)/b < 1", c * T * a2 * std::expm1(2.0 * m.b * T) / m.b,
                                   "<", 1.0)}});
    r.sets.push_back({"ii", {clause("2q lambda1^2 < b^2/(2a^2)", c, "<", m.b * m.b / (2.0 * a2))}});
    return r;
}

inline ConditionReport cir_conditions(const CirModel& m, double q, double gamma) {
    const double a2 = m.a * m.a;
    ConditionReport r{"cir", {}};
    r.sets.push_back({"i+ii",
                      {clause("(i) 2b > a^2", 2.0 * m.b, ">", a2),
                       clause("(ii) q(gamma-1) < l^2/(2a^2)", q * (gamma - 1.0), "<", m.l * m.l / (2.0 * a2))}});
    return r;
}

}  // namespace detail

/// Evaluates the sufficient parameter conditions for exponential integrability of
/// the Heston, linear-diffusion and CIR examples. A path-dependent rate model is
/// checked through its base model (its rate is bounded by construction).
inline ConditionReport check_model_conditions(const MarketModel& model, double q, double gamma, double T) {
    if (!(q > 1.0)) throw InvalidParameter("check_model_conditions: q must exceed 1");
    if (!(gamma > 1.0)) throw InvalidParameter("check_model_conditions: gamma must exceed 1");
    validate(model);
    if (const auto* h = std::get_if<HestonModel>(&model)) return detail::heston_conditions(*h, q, T);
    if (const auto* l = std::get_if<LinearDiffusionModel>(&model)) return detail::linear_diffusion_conditions(*l, q, T);
    if (const auto* c = std::get_if<CirModel>(&model)) return detail::cir_conditions(*c, q, gamma);
    if (const auto* pd = std::get_if<PathDependentRateModel>(&model)) {
        ConditionReport r = std::visit(
            [&](const auto& base) {
                using B = std::decay_t<decltype(base)>;
                if constexpr (std::is_same_v<B, HestonModel>) return detail::heston_conditions(base, q, T);
                else return detail::linear_diffusion_conditions(base, q, T);
            },
            pd->base);
        r.model = "path_dependent_rate/" + r.model;
        return r;
    }
    throw InvalidParameter("check_model_conditions: no parameter conditions for the " + variant_name(model) +
                           " model");
}

struct QMartingale {
    SampleStats EQ_T;
    SampleStats entropy;  // E[Q_T ln Q_T]
    double coefficient = 0.0;
    double rhs = 0.0;
    double rhs_stderr = 0.0;
    double entropy_bound = 0.0;  // rhs / coefficient
    double entropy_bound_stderr = 0.0;
    MomentEstimate y_plus_sup;     // E[e^{2p (Y^+)_*}]
    MomentEstimate mpr_moment;     // E[e^{q int mu'Sigma^{-1}mu}]
    MomentEstimate r_minus_moment; // E[e^{2p gamma int r^-}]
    std::vector<double> logQ_T;
};

/// Q = stochastic exponential of int ((1-gamma) pi*' sigma + Z) dW, built in log space
/// from the optimal strategy, plus the computable right side of the relative-entropy bound.
inline QMartingale martingale_check_Q(const BsdeSolution& sol, const StrategyPaths& strategy,
                                      const MarketPaths& paths, const Preferences& prefs,
                                      const AssumptionParams& params) {
    require_same_paths(sol, paths);
    const double g = prefs.gamma;
    const double p = params.p;
    const double q = params.q;
    QMartingale out;
    out.coefficient = entropy_coefficient(p, q, g);
    if (!(out.coefficient > 0.0))
        throw InvalidParameter("martingale_check_Q: relative-entropy coefficient is not positive");
    const int m = paths.n_paths();
    const int n = paths.steps();
    const double dt = paths.grid().dt();
    out.logQ_T.assign(m, 0.0);
    std::vector<double> qT(m), qlnq(m), ysup(m);
#pragma omp parallel for schedule(static)
    for (int path = 0; path < m; ++path) {
        double lq = 0.0;
        double sup = 0.0;
        for (int i = 0; i < n; ++i) {
            const Coefficients c = paths.coefficients_at(path, i);
            const Vec u = (1.0 - g) * (c.sigma.transpose() * strategy.portfolio(path, i)) + sol.z(path, i);
            const auto dw = paths.increment(path, i);
            double noise = 0.0;
            for (int k = 0; k < u.size(); ++k) noise += u(k) * dw[k];
            lq += noise - 0.5 * u.squaredNorm() * dt;
            sup = std::max(sup, positive_part(sol.y(path, i)));
        }
        sup = std::max(sup, positive_part(sol.y(path, n)));
        out.logQ_T[path] = lq;
        qT[path] = std::exp(lq);
        qlnq[path] = qT[path] * lq;
        ysup[path] = 2.0 * p * sup;
    }
    out.EQ_T = sample_stats(qT);
    out.entropy = sample_stats(qlnq);

    out.y_plus_sup = exponential_moment_of(ysup);
    out.mpr_moment = estimate_exponential_moment(paths, Functional::RiskPriceSq, q);
    out.r_minus_moment = estimate_exponential_moment(paths, Functional::RateNegative, 2.0 * p * g);
    const double k_mpr = (g - 1.0) * (g + 2.0) / (2.0 * g * g);
    const double T = paths.grid().horizon;
    out.rhs = out.y_plus_sup.mean - (1.0 + std::log(2.0 * p)) / (2.0 * p) + k_mpr * out.mpr_moment.mean +
              (g - 1.0) * out.r_minus_moment.mean - sol.y0 - prefs.delta * prefs.theta * T +
              (1.0 + std::log(q)) / q * (1.0 - g) * (g + 2.0) / (2.0 * g * g) -
              (1.0 + std::log(2.0 * p * g)) / (2.0 * p * g) * (1.0 - g);
    out.rhs_stderr = std::sqrt(std::pow(out.y_plus_sup.std_error, 2) + std::pow(k_mpr * out.mpr_moment.std_error, 2) +
                               std::pow((g - 1.0) * out.r_minus_moment.std_error, 2) +
                               std::pow(sol.y0_stderr, 2));
    out.entropy_bound = out.rhs / out.coefficient;
    out.entropy_bound_stderr = out.rhs_stderr / out.coefficient;
    return out;
}

/// Grid-time expectations of the class-(D) bound processes
///   exp(2p Y^+_t + 2p(gamma-1) int_0^t r^-) and exp(q Y^-_t + q(gamma-1) int_0^t (r^+ + mu'Sigma^{-1}mu/gamma)),
/// with the terminal functionals that dominate them.
struct ClassDBounds {
    std::vector<double> times;
    std::vector<double> upper;  // E[process 1] per grid time
    std::vector<double> lower;  // E[process 2] per grid time
    double upper_bound = 0.0;   // E[exp(2p(gamma-1) int_0^T r^- - 2p delta theta T)]
    double lower_bound = 0.0;   // E[exp(q(gamma-1) int_0^T (r^+ + mu'Sigma^{-1}mu/gamma))] e^{-q theta delta^psi T/psi}
    bool upper_exceeds = false;
    bool lower_exceeds = false;
    bool overflow = false;
};

inline ClassDBounds classD_bound_processes(const BsdeSolution& sol, const MarketPaths& paths,
                                           const Preferences& prefs, const AssumptionParams& params) {
    require_same_paths(sol, paths);
    const double g = prefs.gamma;
    const double p = params.p;
    const double q = params.q;
    const int m = paths.n_paths();
    const int n = paths.steps();
    const double dt = paths.grid().dt();
    const double T = paths.grid().horizon;
    ClassDBounds out;
    out.times.resize(n + 1);
    out.upper.assign(n + 1, 0.0);
    out.lower.assign(n + 1, 0.0);
    std::vector<double> e1(static_cast<std::size_t>(m) * (n + 1)), e2(e1.size());
    std::vector<double> term1(m), term2(m);
    for (int path = 0; path < m; ++path) {
        double rm = 0.0, rp = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double y = sol.y(path, i);
            e1[static_cast<std::size_t>(i) * m + path] = 2.0 * p * positive_part(y) + 2.0 * p * (g - 1.0) * rm;
            e2[static_cast<std::size_t>(i) * m + path] = q * negative_part(y) + q * (g - 1.0) * rp;
            if (i < n) {
                rm += negative_part(paths.rate(path, i)) * dt;
                rp += (positive_part(paths.rate(path, i)) + paths.risk_price_sq(path, i) / g) * dt;
            }
        }
        term1[path] = 2.0 * p * (g - 1.0) * rm - 2.0 * p * prefs.delta * prefs.theta * T;
        term2[path] = q * (g - 1.0) * rp - q * prefs.theta * prefs.delta_pow_psi() * T / prefs.psi;
    }
    for (int i = 0; i <= n; ++i) {
        out.times[i] = paths.grid().time(i);
        const std::vector<double> x1(e1.begin() + static_cast<std::ptrdiff_t>(i) * m,
                                     e1.begin() + static_cast<std::ptrdiff_t>(i + 1) * m);
        const std::vector<double> x2(e2.begin() + static_cast<std::ptrdiff_t>(i) * m,
                                     e2.begin() + static_cast<std::ptrdiff_t>(i + 1) * m);
        const MomentEstimate a = exponential_moment_of(x1);
        const MomentEstimate b = exponential_moment_of(x2);
        out.upper[i] = a.mean;
        out.lower[i] = b.mean;
        out.overflow = out.overflow || a.overflow || b.overflow;
    }
    const MomentEstimate b1 = exponential_moment_of(term1);
    const MomentEstimate b2 = exponential_moment_of(term2);
    out.upper_bound = b1.mean;
    out.lower_bound = b2.mean;
    out.overflow = out.overflow || b1.overflow || b2.overflow;
    out.upper_exceeds = *std::max_element(out.upper.begin(), out.upper.end()) > out.upper_bound;
    out.lower_exceeds = *std::max_element(out.lower.begin(), out.lower.end()) > out.lower_bound;
    return out;
}

/// Everything the diagnostics stage reports.
struct DiagnosticsReport {
    std::map<std::string, MomentEstimate> moments;
    std::optional<ConditionReport> conditions;
    std::optional<QMartingale> q_martingale;
    std::optional<ClassDBounds> classD;
};

}  // namespace ezbsde
