#pragma once

#include <cmath>
#include <limits>

#include "ezbsde/errors.hpp"
#include "ezbsde/market.hpp"
#include "ezbsde/preferences.hpp"
#include "ezbsde/types.hpp"

namespace ezbsde {

/// Largest admissible value of e^{-(psi/theta) y} when no truncation is requested.
inline constexpr double kDefaultExpCap = 1e300;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Truncation levels of the generator: the exponential term is capped at m, the
/// positive part survives while the running integral int(|r| + mu'Sigma^{-1}mu)
/// stays <= n_level, the negative part while it stays <= k_level.
struct Truncation {
    double m = kInf;
    double n_level = kInf;
    double k_level = kInf;

    bool active() const { return m < kInf || n_level < kInf || k_level < kInf; }
};

namespace detail {

/// z (1/2 I + (1-gamma)/(2 gamma) P) z' + (1-gamma)/gamma * (sigma'Sigma^{-1}mu) . z
inline double quadratic_part(const Vec& z, const Coefficients& c, const Preferences& p) {
    const double g = (1.0 - p.gamma) / p.gamma;
    return 0.5 * z.squaredNorm() + 0.5 * g * z.dot(c.projection * z) + g * c.risk_price.dot(z);
}

/// (1-gamma)/(2 gamma) mu'Sigma^{-1}mu + (1-gamma) r - delta theta
inline double constant_part(const Coefficients& c, const Preferences& p) {
    return 0.5 * (1.0 - p.gamma) / p.gamma * c.risk_price_sq + (1.0 - p.gamma) * c.r -
           p.delta * p.theta;
}

/// min(e^{k y}, cap), evaluated without forming e^{k y} when it would overflow.
inline double capped_exp(double y, const Preferences& p, double cap) {
    const double arg = p.exp_rate() * y;
    if (cap < kInf && arg >= std::log(cap)) return cap;
    return std::exp(arg);
}

}  // namespace detail

/// Generator H(t, y, z) of the utility BSDE; `coeffs` carries the time/path point.
inline double generator_H(double y, const Vec& z, const Coefficients& coeffs, const Preferences& p,
                          double exp_cap = kDefaultExpCap) {
    const double arg = p.exp_rate() * y;
    if (!(arg < std::log(exp_cap)))
        throw OverflowError("generator_H: e^{-(psi/theta) y} exceeds the configured cap");
    const double e = std::exp(arg);
    return detail::quadratic_part(z, coeffs, p) + p.theta / p.psi * p.delta_pow_psi() * e +
           detail::constant_part(coeffs, p);
}

/// H^m with the exponential term replaced by min(e^{-(psi/theta) y}, m).
inline double generator_capped(double y, const Vec& z, const Coefficients& coeffs,
                               const Preferences& p, double m) {
    return detail::quadratic_part(z, coeffs, p) +
           p.theta / p.psi * p.delta_pow_psi() * detail::capped_exp(y, p, m) +
           detail::constant_part(coeffs, p);
}

/// H^{m,n,k}: positive part kept while running_integral <= n_level, negative part
/// while running_integral <= k_level.
inline double generator_truncated(double y, const Vec& z, const Truncation& trunc,
                                  double running_integral, const Coefficients& coeffs,
                                  const Preferences& p) {
    const double h = generator_capped(y, z, coeffs, p, trunc.m);
    if (h > 0.0) return running_integral <= trunc.n_level ? h : 0.0;
    return running_integral <= trunc.k_level ? h : 0.0;
}

/// Partial derivative in y of generator_truncated (zero where the cap or an
/// indicator is active). Always <= 0.
inline double generator_truncated_dy(double y, const Vec& z, const Truncation& trunc,
                                     double running_integral, const Coefficients& coeffs,
                                     const Preferences& p) {
    const double h = generator_capped(y, z, coeffs, p, trunc.m);
    const bool live = h > 0.0 ? running_integral <= trunc.n_level : running_integral <= trunc.k_level;
    if (!live) return 0.0;
    const double arg = p.exp_rate() * y;
    if (trunc.m < kInf && arg >= std::log(trunc.m)) return 0.0;
    return -p.delta_pow_psi() * std::exp(arg);
}

/// Legendre-Fenchel transform J(y, l) = inf_z (H(y, z) - z l).
inline double fenchel_transform_J(double y, const Vec& l, const Coefficients& coeffs,
                                  const Preferences& p, double exp_cap = kDefaultExpCap) {
    const int n = coeffs.noises();
    const double g = (1.0 - p.gamma) / p.gamma;
    const Mat inner = Mat::Identity(n, n) + g * coeffs.projection;
    Eigen::LDLT<Mat> ldlt(inner);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
        throw NumericalError("fenchel_transform_J: I + (1-gamma)/gamma P is not positive definite");
    const Vec a = l - g * coeffs.risk_price;
    const double arg = p.exp_rate() * y;
    if (!(arg < std::log(exp_cap)))
        throw OverflowError("fenchel_transform_J: e^{-(psi/theta) y} exceeds the configured cap");
    return -0.5 * a.dot(ldlt.solve(a)) + p.theta / p.psi * p.delta_pow_psi() * std::exp(arg) +
           detail::constant_part(coeffs, p);
}

/// u* = H'_z(y, z) = z (I + (1-gamma)/gamma P) + (1-gamma)/gamma mu'Sigma^{-1}sigma.
inline Vec maximizer_u_star(const Vec& z, const Coefficients& coeffs, const Preferences& p) {
    const double g = (1.0 - p.gamma) / p.gamma;
    return z + g * (coeffs.projection * z) + g * coeffs.risk_price;
}

}  // namespace ezbsde
