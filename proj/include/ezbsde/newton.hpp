#pragma once

#include <cmath>
#include <string>

#include "ezbsde/errors.hpp"

namespace ezbsde {

struct RootResult {
    double x = 0.0;
    int iterations = 0;
};

/// Newton's method for a nondecreasing function on a bracket [lo, hi] with
/// F(lo) <= 0 <= F(hi). Steps leaving the bracket fall back to bisection.
/// Throws NumericalError after max_iter iterations.
template <class F, class DF>
RootResult solve_monotone_root(F&& f, DF&& df, double lo, double hi, double x0, double tol,
                               int max_iter, const char* where = "newton") {
    double x = (x0 >= lo && x0 <= hi) ? x0 : 0.5 * (lo + hi);
    for (int it = 1; it <= max_iter; ++it) {
        const double fx = f(x);
        if (fx == 0.0) return {x, it};
        if (fx < 0.0) lo = x;
        else hi = x;
        const double slope = df(x);
        double next = (slope > 0.0 && std::isfinite(slope)) ? x - fx / slope : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - x);
        x = next;
        if (step <= tol * std::max(1.0, std::abs(x)) || hi - lo <= tol * std::max(1.0, std::abs(x)))
            return {x, it};
    }
    throw NumericalError(std::string(where) + ": no convergence within iteration limit");
}

}  // namespace ezbsde
