#pragma once

#include <cmath>
#include <string>

#include "ezbsde/errors.hpp"

namespace ezbsde {

inline double derive_theta(double gamma, double psi) {
    if (!(gamma > 1.0)) throw DomainError("risk aversion gamma must exceed 1");
    if (!(psi > 1.0)) throw DomainError("EIS psi must exceed 1");
    return (1.0 - gamma) / (1.0 - 1.0 / psi);
}

/// Epstein-Zin preference parameters. theta is always derived, never set.
struct Preferences {
    double gamma = 2.0;
    double psi = 2.0;
    double delta = 1.0;
    double theta = -2.0;

    static Preferences make(double gamma, double psi, double delta) {
        Preferences p{gamma, psi, delta, derive_theta(gamma, psi)};
        if (!(delta > 0.0)) throw DomainError("discount rate delta must be positive");
        return p;
    }

    /// Same as make() but admits delta == 0; only the ODE oracle accepts this.
    static Preferences make_degenerate(double gamma, double psi, double delta) {
        Preferences p{gamma, psi, delta, derive_theta(gamma, psi)};
        if (!(delta >= 0.0)) throw DomainError("discount rate delta must be nonnegative");
        return p;
    }

    /// Exponent k = -psi/theta > 0 of the e^{k y} term in the generator.
    double exp_rate() const { return -psi / theta; }

    /// delta^psi
    double delta_pow_psi() const { return std::pow(delta, psi); }
};

/// Epstein-Zin aggregator f(c, v) on c >= 0, v < 0.
inline double aggregator_f(double c, double v, const Preferences& p) {
    if (!(c >= 0.0)) throw DomainError("aggregator_f: consumption must be nonnegative");
    if (!(v < 0.0)) throw DomainError("aggregator_f: utility value must be negative");
    const double linear = -p.delta * p.theta * v;
    if (c == 0.0) return linear;
    const double a = 1.0 - 1.0 / p.psi;
    const double b = 1.0 - 1.0 / p.theta;
    const double power = std::exp(a * std::log(c) + b * std::log((1.0 - p.gamma) * v));
    return p.delta / a * power + linear;
}

/// d f / d v, same domain as aggregator_f.
inline double aggregator_f_dv(double c, double v, const Preferences& p) {
    if (!(c >= 0.0)) throw DomainError("aggregator_f_dv: consumption must be nonnegative");
    if (!(v < 0.0)) throw DomainError("aggregator_f_dv: utility value must be negative");
    const double linear = -p.delta * p.theta;
    if (c == 0.0) return linear;
    const double a = 1.0 - 1.0 / p.psi;
    const double b = 1.0 - 1.0 / p.theta;
    const double x = (1.0 - p.gamma) * v;
    const double power = std::exp(a * std::log(c) + (b - 1.0) * std::log(x));
    return p.delta / a * b * (1.0 - p.gamma) * power + linear;
}

/// Bequest utility V(w) = w^{1-gamma} / (1-gamma).
inline double bequest_V(double w, const Preferences& p) {
    if (!(w > 0.0)) throw DomainError("bequest_V: wealth must be positive");
    return std::exp((1.0 - p.gamma) * std::log(w)) / (1.0 - p.gamma);
}

/// Dual aggregator g(d, u) on d > 0, u < 0.
inline double dual_aggregator_g(double d, double u, const Preferences& p) {
    if (!(d > 0.0)) throw DomainError("dual_aggregator_g: density must be positive");
    if (!(u < 0.0)) throw DomainError("dual_aggregator_g: dual value must be negative");
    const double e = 1.0 - p.gamma * p.psi / p.theta;
    const double power = std::exp((1.0 - p.psi) * std::log(d) + e * std::log((1.0 - p.gamma) * u));
    return p.delta_pow_psi() / (p.psi - 1.0) * power - p.delta * p.theta * u;
}

inline double dual_aggregator_g_du(double d, double u, const Preferences& p) {
    if (!(d > 0.0)) throw DomainError("dual_aggregator_g_du: density must be positive");
    if (!(u < 0.0)) throw DomainError("dual_aggregator_g_du: dual value must be negative");
    const double e = 1.0 - p.gamma * p.psi / p.theta;
    const double power =
        std::exp((1.0 - p.psi) * std::log(d) + (e - 1.0) * std::log((1.0 - p.gamma) * u));
    return p.delta_pow_psi() / (p.psi - 1.0) * e * (1.0 - p.gamma) * power - p.delta * p.theta;
}

/// Dual terminal utility U(d) = gamma/(1-gamma) d^{(gamma-1)/gamma}.
inline double dual_terminal_U(double d, const Preferences& p) {
    if (!(d > 0.0)) throw DomainError("dual_terminal_U: density must be positive");
    return p.gamma / (1.0 - p.gamma) * std::exp((p.gamma - 1.0) / p.gamma * std::log(d));
}

}  // namespace ezbsde
