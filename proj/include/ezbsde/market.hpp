#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ezbsde/errors.hpp"
#include "ezbsde/random.hpp"
#include "ezbsde/types.hpp"

namespace ezbsde {

/// Uniform grid t_i = i * T / N, i = 0..N. A zero horizon is accepted as the
/// degenerate single-point problem (dt = 0).
struct TimeGrid {
    double horizon = 1.0;
    int steps = 1;

    static TimeGrid make(double horizon, int steps) {
        if (!(horizon >= 0.0) || !std::isfinite(horizon))
            throw InvalidParameter("time grid horizon must be finite and nonnegative");
        if (steps < 1) throw InvalidParameter("time grid needs at least one step");
        return TimeGrid{horizon, steps};
    }

    double dt() const { return horizon / steps; }
    double time(int i) const { return i == steps ? horizon : horizon * i / steps; }
};

/// Market coefficients at one (path, time) point plus the derived quantities the
/// generator needs: P = sigma' Sigma^{-1} sigma, the risk-price vector
/// sigma' Sigma^{-1} mu, and mu' Sigma^{-1} mu.
struct Coefficients {
    double r = 0.0;
    Vec mu;
    Mat sigma;
    Mat cov;
    Mat cov_inv;
    Mat projection;
    Vec risk_price;
    double risk_price_sq = 0.0;
    Vec merton;  // Sigma^{-1} mu

    int assets() const { return static_cast<int>(sigma.rows()); }
    int noises() const { return static_cast<int>(sigma.cols()); }

    static Coefficients make(double r, const Vec& mu, const Mat& sigma) {
        const auto d = sigma.rows();
        const auto n = sigma.cols();
        if (d < 1 || n < 1 || d > kMaxDim || n > kMaxDim)
            throw InvalidParameter("volatility matrix dimensions out of range");
        if (mu.size() != d) throw InvalidParameter("excess return / volatility dimension mismatch");
        if (d > n) throw InvalidParameter("more risky assets than Brownian drivers (need d <= n)");
        Coefficients c;
        c.r = r;
        c.mu = mu;
        c.sigma = sigma;
        c.cov = sigma * sigma.transpose();
        Eigen::SelfAdjointEigenSolver<Mat> eig(c.cov);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        if (!(lo > 1e-14 * std::max(hi, 1e-300)) || !(hi > 0.0))
            throw DegenerateCovariance("Sigma = sigma sigma' is numerically singular");
        c.cov_inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                    eig.eigenvectors().transpose();
        c.projection = sigma.transpose() * c.cov_inv * sigma;
        c.merton = c.cov_inv * mu;
        c.risk_price = sigma.transpose() * c.merton;
        c.risk_price_sq = mu.dot(c.merton);
        return c;
    }
};

// --- model variants -------------------------------------------------------

struct ConstantModel {
    double rate = 0.0;
    Vec mu;
    Mat sigma;
};

/// dX = b(l - X)dt + a sqrt(X) dW1, asset volatility sqrt(X) sigma (rho, sqrt(1-rho^2)),
/// excess return lambda X. `variance_floor` keeps Sigma invertible when the
/// truncated variance touches zero.
struct HestonModel {
    double b = 1.0;
    double l = 0.25;
    double a = 0.5;
    double lambda = 0.5;
    double sigma = 1.0;
    double rho = 0.0;
    double x0 = 0.25;
    double rate = 0.0;
    double variance_floor = 1e-8;
};

/// dX = -bX dt + a dW1, excess return sigma(lambda0 + lambda1 X).
struct LinearDiffusionModel {
    double b = 1.0;
    double a = 0.5;
    double sigma = 0.2;
    double lambda0 = 0.1;
    double lambda1 = 0.2;
    double rho = 0.0;
    double x0 = 0.0;
    double rate = 0.0;
};

/// Short rate dr = (b - l r)dt + a sqrt(r) dW1; bounded excess return and a
/// volatility confined to [epsilon, 1/epsilon]. `volatility`, when set, maps
/// (t, r) to the asset volatility and must respect the same bounds.
struct CirModel {
    double b = 0.05;
    double l = 1.0;
    double a = 0.2;
    double r0 = 0.05;
    double mu = 0.05;
    double sigma = 0.2;
    double epsilon = 0.1;
    double rho = 0.0;
    std::function<double(double, double)> volatility;
};

/// r_t = clamp(kappa0 + kappa1 * (1/t) int_0^t X ds, r_min, r_max), r_0 uses X_0.
struct RunningAverageRate {
    double kappa0 = 0.02;
    double kappa1 = 0.0;
    double r_min = 0.0;
    double r_max = 0.1;
};

struct PathDependentRateModel {
    std::variant<HestonModel, LinearDiffusionModel> base;
    RunningAverageRate rate;
};

using MarketModel =
    std::variant<ConstantModel, HestonModel, LinearDiffusionModel, CirModel, PathDependentRateModel>;

inline std::string variant_name(const MarketModel& m) {
    static constexpr const char* names[] = {"constant", "heston", "linear_diffusion", "cir",
                                            "path_dependent_rate"};
    return names[m.index()];
}

namespace detail {

inline void require(bool ok, const char* what) {
    if (!ok) throw InvalidParameter(what);
}

inline void validate_correlation(double rho) {
    require(rho >= -1.0 && rho <= 1.0, "correlation rho must lie in [-1, 1]");
}

inline void validate(const ConstantModel& m) {
    require(std::isfinite(m.rate), "rate must be finite");
    require(m.sigma.rows() >= 1 && m.sigma.rows() == m.mu.size(),
            "constant model: mu and sigma dimensions differ");
    Coefficients::make(m.rate, m.mu, m.sigma);
}

inline void validate(const HestonModel& m) {
    require(m.b > 0.0 && m.l > 0.0 && m.lambda > 0.0 && m.sigma > 0.0,
            "heston: b, l, lambda, sigma must be positive");
    require(m.a >= 0.0, "heston: a must be nonnegative");
    require(m.x0 >= 0.0, "heston: initial variance must be nonnegative");
    require(m.variance_floor > 0.0, "heston: variance floor must be positive");
    require(std::isfinite(m.rate), "heston: rate must be finite");
    validate_correlation(m.rho);
}

inline void validate(const LinearDiffusionModel& m) {
    require(m.b >= 0.0 && m.a >= 0.0, "linear diffusion: a, b must be nonnegative");
    require(m.sigma > 0.0, "linear diffusion: sigma must be positive");
    require(std::isfinite(m.lambda0) && std::isfinite(m.lambda1) && std::isfinite(m.x0),
            "linear diffusion: parameters must be finite");
    require(std::isfinite(m.rate), "linear diffusion: rate must be finite");
    validate_correlation(m.rho);
}

inline void validate(const CirModel& m) {
    require(m.epsilon > 0.0 && m.epsilon < 1.0, "cir: epsilon must lie in (0, 1)");
    require(m.b >= 0.0 && m.l >= 0.0 && m.a >= 0.0, "cir: b, l, a must be nonnegative");
    require(m.r0 >= 0.0, "cir: initial rate must be nonnegative");
    require(m.sigma >= m.epsilon && m.sigma <= 1.0 / m.epsilon,
            "cir: volatility must lie in [epsilon, 1/epsilon]");
    require(std::isfinite(m.mu), "cir: excess return must be finite");
    validate_correlation(m.rho);
}

inline void validate(const PathDependentRateModel& m) {
    std::visit([](const auto& base) { validate(base); }, m.base);
    require(m.rate.r_min <= m.rate.r_max, "running-average rate: r_min must not exceed r_max");
    require(std::isfinite(m.rate.r_min) && std::isfinite(m.rate.r_max),
            "running-average rate: bounds must be finite");
}

inline Mat correlated_row(double scale, double rho) {
    Mat s(1, 2);
    s(0, 0) = scale * rho;
    s(0, 1) = scale * std::sqrt(std::max(0.0, 1.0 - rho * rho));
    return s;
}

inline Vec scalar_vec(double x) {
    Vec v(1);
    v(0) = x;
    return v;
}

}  // namespace detail

inline void validate(const MarketModel& model) {
    std::visit([](const auto& m) { detail::validate(m); }, model);
}

/// Number of Brownian drivers n.
inline int noise_dim(const MarketModel& model) {
    if (const auto* c = std::get_if<ConstantModel>(&model)) return static_cast<int>(c->sigma.cols());
    return 2;
}

/// Number of risky assets d.
inline int asset_dim(const MarketModel& model) {
    if (const auto* c = std::get_if<ConstantModel>(&model)) return static_cast<int>(c->sigma.rows());
    return 1;
}

/// Number of Markov-state features exposed to the regression basis.
inline int feature_dim(const MarketModel& model) {
    switch (model.index()) {
        case 0: return 0;
        case 4: return 2;
        default: return 1;
    }
}

inline double initial_factor(const MarketModel& model) {
    return std::visit(
        [](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, ConstantModel>) return 0.0;
            else if constexpr (std::is_same_v<T, CirModel>) return m.r0;
            else if constexpr (std::is_same_v<T, PathDependentRateModel>)
                return std::visit([](const auto& b) { return b.x0; }, m.base);
            else return m.x0;
        },
        model);
}

/// Model coefficients given the factor value X and its running average up to t.
inline Coefficients model_coefficients(const MarketModel& model, double t, double x, double running_avg) {
    using detail::correlated_row;
    using detail::scalar_vec;
    struct Visitor {
        double t, x, avg;
        Coefficients operator()(const ConstantModel& m) const {
            return Coefficients::make(m.rate, m.mu, m.sigma);
        }
        Coefficients operator()(const HestonModel& m) const {
            const double v = std::max(x, m.variance_floor);
            return Coefficients::make(m.rate, scalar_vec(m.lambda * v),
                                      correlated_row(std::sqrt(v) * m.sigma, m.rho));
        }
        Coefficients operator()(const LinearDiffusionModel& m) const {
            return Coefficients::make(m.rate, scalar_vec(m.sigma * (m.lambda0 + m.lambda1 * x)),
                                      correlated_row(m.sigma, m.rho));
        }
        Coefficients operator()(const CirModel& m) const {
            const double r = std::max(x, 0.0);
            double vol = m.sigma;
            if (m.volatility) {
                vol = m.volatility(t, r);
                if (!(vol >= m.epsilon && vol <= 1.0 / m.epsilon))
                    throw InvalidParameter("cir: volatility hook left [epsilon, 1/epsilon]");
            }
            return Coefficients::make(r, scalar_vec(m.mu), correlated_row(vol, m.rho));
        }
        Coefficients operator()(const PathDependentRateModel& m) const {
            Coefficients c = std::visit([this](const auto& b) { return (*this)(b); }, m.base);
            c.r = std::clamp(m.rate.kappa0 + m.rate.kappa1 * avg, m.rate.r_min, m.rate.r_max);
            return c;
        }
    };
    return std::visit(Visitor{t, x, running_avg}, model);
}

/// Closed-form coefficient path when the factor dynamics have no noise
/// (constant model, or Heston/linear-diffusion/CIR with a = 0).
inline std::optional<std::function<Coefficients(double)>> deterministic_coefficients(
    const MarketModel& model) {
    struct Visitor {
        std::optional<std::function<Coefficients(double)>> operator()(const ConstantModel& m) const {
            const Coefficients c = Coefficients::make(m.rate, m.mu, m.sigma);
            return [c](double) { return c; };
        }
        std::optional<std::function<Coefficients(double)>> operator()(const HestonModel& m) const {
            if (m.a != 0.0) return std::nullopt;
            MarketModel mm = m;
            return [mm, m](double t) {
                const double x = m.l + (m.x0 - m.l) * std::exp(-m.b * t);
                return model_coefficients(mm, t, x, 0.0);
            };
        }
        std::optional<std::function<Coefficients(double)>> operator()(const LinearDiffusionModel& m) const {
            if (m.a != 0.0) return std::nullopt;
            MarketModel mm = m;
            return [mm, m](double t) {
                return model_coefficients(mm, t, m.x0 * std::exp(-m.b * t), 0.0);
            };
        }
        std::optional<std::function<Coefficients(double)>> operator()(const CirModel& m) const {
            if (m.a != 0.0 || m.volatility) return std::nullopt;
            MarketModel mm = m;
            return [mm, m](double t) {
                const double r = m.l > 0.0 ? m.b / m.l + (m.r0 - m.b / m.l) * std::exp(-m.l * t)
                                           : m.r0 + m.b * t;
                return model_coefficients(mm, t, r, 0.0);
            };
        }
        std::optional<std::function<Coefficients(double)>> operator()(const PathDependentRateModel&) const {
            return std::nullopt;
        }
    };
    return std::visit(Visitor{}, model);
}

// --- simulated paths --------------------------------------------------------

struct SimulationOptions {
    /// Any |coefficient| above this raises the overflow flag (not an error).
    double coefficient_cap = 1e6;
};

/// Immutable per-path, per-step storage of factor values, coefficient tuples,
/// and Brownian increments. Coefficients live on steps 0..N, increments on 0..N-1.
class MarketPaths {
public:
    MarketPaths() = default;

    int n_paths() const { return n_paths_; }
    int steps() const { return grid_.steps; }
    int assets() const { return d_; }
    int noises() const { return n_; }
    int features() const { return k_; }
    const TimeGrid& grid() const { return grid_; }
    std::uint64_t seed() const { return seed_; }
    bool overflow() const { return overflow_; }
    /// Steps at which a square-root factor (Heston variance, CIR rate) was <= 0.
    long truncation_events() const { return truncation_events_; }

    double factor(int p, int i) const { return factor_[at(p, i)]; }
    double rate(int p, int i) const { return rate_[at(p, i)]; }
    double risk_price_sq(int p, int i) const { return risk_price_sq_[at(p, i)]; }

    std::span<const double> increment(int p, int i) const {
        return {dw_.data() + (static_cast<std::size_t>(p) * grid_.steps + i) * n_, static_cast<std::size_t>(n_)};
    }
    std::span<const double> state(int p, int i) const {
        return {features_.data() + at(p, i) * k_, static_cast<std::size_t>(k_)};
    }

    Coefficients coefficients_at(int p, int i) const {
        if (p < 0 || p >= n_paths_ || i < 0 || i > grid_.steps)
            throw InvalidParameter("coefficients_at: path or step out of range");
        const std::size_t j = at(p, i);
        Coefficients c;
        c.r = rate_[j];
        c.mu = Eigen::Map<const Vec>(mu_.data() + j * d_, d_);
        c.sigma = Eigen::Map<const Eigen::MatrixXd>(sigma_.data() + j * d_ * n_, d_, n_);
        c.cov = Eigen::Map<const Eigen::MatrixXd>(cov_.data() + j * d_ * d_, d_, d_);
        c.cov_inv = Eigen::Map<const Eigen::MatrixXd>(cov_inv_.data() + j * d_ * d_, d_, d_);
        c.projection = Eigen::Map<const Eigen::MatrixXd>(proj_.data() + j * n_ * n_, n_, n_);
        c.risk_price = Eigen::Map<const Vec>(risk_price_.data() + j * n_, n_);
        c.risk_price_sq = risk_price_sq_[j];
        c.merton = Eigen::Map<const Vec>(merton_.data() + j * d_, d_);
        return c;
    }

    /// Largest market price of risk sqrt(mu' Sigma^{-1} mu) over all stored points.
    double max_risk_price() const {
        double m = 0.0;
        for (double v : risk_price_sq_) m = std::max(m, v);
        return std::sqrt(m);
    }

private:
    std::size_t at(int p, int i) const { return static_cast<std::size_t>(p) * (grid_.steps + 1) + i; }

    void store(int p, int i, double x, const Coefficients& c, std::span<const double> feats) {
        const std::size_t j = at(p, i);
        factor_[j] = x;
        rate_[j] = c.r;
        Eigen::Map<Vec>(mu_.data() + j * d_, d_) = c.mu;
        Eigen::Map<Eigen::MatrixXd>(sigma_.data() + j * d_ * n_, d_, n_) = c.sigma;
        Eigen::Map<Eigen::MatrixXd>(cov_.data() + j * d_ * d_, d_, d_) = c.cov;
        Eigen::Map<Eigen::MatrixXd>(cov_inv_.data() + j * d_ * d_, d_, d_) = c.cov_inv;
        Eigen::Map<Eigen::MatrixXd>(proj_.data() + j * n_ * n_, n_, n_) = c.projection;
        Eigen::Map<Vec>(risk_price_.data() + j * n_, n_) = c.risk_price;
        risk_price_sq_[j] = c.risk_price_sq;
        Eigen::Map<Vec>(merton_.data() + j * d_, d_) = c.merton;
        std::copy(feats.begin(), feats.end(), features_.begin() + static_cast<std::ptrdiff_t>(j * k_));
    }

    void allocate() {
        const std::size_t pts = static_cast<std::size_t>(n_paths_) * (grid_.steps + 1);
        factor_.assign(pts, 0.0);
        rate_.assign(pts, 0.0);
        mu_.assign(pts * d_, 0.0);
        sigma_.assign(pts * d_ * n_, 0.0);
        cov_.assign(pts * d_ * d_, 0.0);
        cov_inv_.assign(pts * d_ * d_, 0.0);
        proj_.assign(pts * n_ * n_, 0.0);
        risk_price_.assign(pts * n_, 0.0);
        risk_price_sq_.assign(pts, 0.0);
        merton_.assign(pts * d_, 0.0);
        features_.assign(pts * k_, 0.0);
        dw_.assign(static_cast<std::size_t>(n_paths_) * grid_.steps * n_, 0.0);
    }

    friend MarketPaths simulate_factors(const MarketModel&, const TimeGrid&, int, std::uint64_t,
                                        const SimulationOptions&);

    TimeGrid grid_;
    int n_paths_ = 0, d_ = 0, n_ = 0, k_ = 0;
    std::uint64_t seed_ = 0;
    bool overflow_ = false;
    long truncation_events_ = 0;
    std::vector<double> factor_, rate_, mu_, sigma_, cov_, cov_inv_, proj_, risk_price_,
        risk_price_sq_, merton_, features_, dw_;
};

namespace detail {

/// Full-truncation Euler drift and diffusion of the factor; returns X_{i+1}.
inline double advance_factor(const MarketModel& model, double x, double dt, double dw1) {
    struct Visitor {
        double x, dt, dw1;
        double operator()(const ConstantModel&) const { return 0.0; }
        double operator()(const HestonModel& m) const {
            const double xp = std::max(x, 0.0);
            return x + m.b * (m.l - xp) * dt + m.a * std::sqrt(xp) * dw1;
        }
        double operator()(const LinearDiffusionModel& m) const {
            return x - m.b * x * dt + m.a * dw1;
        }
        double operator()(const CirModel& m) const {
            const double xp = std::max(x, 0.0);
            return x + (m.b - m.l * xp) * dt + m.a * std::sqrt(xp) * dw1;
        }
        double operator()(const PathDependentRateModel& m) const {
            return std::visit([this](const auto& b) { return (*this)(b); }, m.base);
        }
    };
    return std::visit(Visitor{x, dt, dw1}, model);
}

inline bool square_root_factor(const MarketModel& model) {
    if (std::holds_alternative<HestonModel>(model) || std::holds_alternative<CirModel>(model)) return true;
    if (const auto* p = std::get_if<PathDependentRateModel>(&model))
        return std::holds_alternative<HestonModel>(p->base);
    return false;
}

inline bool exceeds_cap(const Coefficients& c, double cap) {
    return std::abs(c.r) > cap || c.mu.cwiseAbs().maxCoeff() > cap ||
           c.sigma.cwiseAbs().maxCoeff() > cap || c.risk_price_sq > cap;
}

}  // namespace detail

/// Simulate factor paths and per-step coefficients. Path p is a pure function of
/// (seed, p): the Gaussian increments come from a counter-based generator.
inline MarketPaths simulate_factors(const MarketModel& model, const TimeGrid& grid, int n_paths,
                                   std::uint64_t seed, const SimulationOptions& options = {}) {
    if (n_paths < 1) throw InvalidParameter("simulate_factors: need at least one path");
    validate(model);
    MarketPaths out;
    out.grid_ = grid;
    out.n_paths_ = n_paths;
    out.d_ = asset_dim(model);
    out.n_ = noise_dim(model);
    out.k_ = feature_dim(model);
    out.seed_ = seed;
    out.allocate();

    const CounterNormal normal(seed);
    const double dt = grid.dt();
    const double sqdt = std::sqrt(dt);
    const bool sqrt_factor = detail::square_root_factor(model);
    const double x0 = initial_factor(model);

    std::vector<char> overflow(n_paths, 0);
    std::vector<long> truncations(n_paths, 0);

#pragma omp parallel for schedule(static)
    for (int p = 0; p < n_paths; ++p) {
        double x = x0;
        double integral = 0.0;
        double feats[2];
        for (int i = 0; i <= grid.steps; ++i) {
            const double t = grid.time(i);
            const double avg = i == 0 ? x0 : integral / t;
            const Coefficients c = model_coefficients(model, t, x, avg);
            if (detail::exceeds_cap(c, options.coefficient_cap)) overflow[p] = 1;
            feats[0] = x;
            feats[1] = avg;
            out.store(p, i, x, c, std::span<const double>(feats, static_cast<std::size_t>(out.k_)));
            if (i == grid.steps) break;
            double* dw = out.dw_.data() + (static_cast<std::size_t>(p) * grid.steps + i) * out.n_;
            for (int j = 0; j < out.n_; ++j) dw[j] = sqdt * normal(p, i, j);
            if (sqrt_factor && x <= 0.0) ++truncations[p];
            integral += x * dt;
            x = detail::advance_factor(model, x, dt, dw[0]);
        }
        if (sqrt_factor && x <= 0.0) ++truncations[p];
    }
    for (int p = 0; p < n_paths; ++p) {
        out.overflow_ = out.overflow_ || overflow[p];
        out.truncation_events_ += truncations[p];
    }
    return out;
}

struct ProjectionSpectrum {
    std::vector<double> eigenvalues;  // ascending
    int unit_count = 0;
    bool is_projection = false;
};

/// Eigenvalues of sigma' Sigma^{-1} sigma; for full-row-rank sigma they are d ones
/// and n - d zeros.
inline ProjectionSpectrum projection_eigencheck(const Mat& sigma, double tol = 1e-9) {
    Vec mu = Vec::Zero(sigma.rows());
    const Coefficients c = Coefficients::make(0.0, mu, sigma);
    Eigen::SelfAdjointEigenSolver<Mat> eig(c.projection);
    ProjectionSpectrum s;
    bool ok = true;
    for (int i = 0; i < eig.eigenvalues().size(); ++i) {
        const double v = eig.eigenvalues()(i);
        s.eigenvalues.push_back(v);
        if (std::abs(v - 1.0) <= tol) ++s.unit_count;
        else if (std::abs(v) > tol) ok = false;
    }
    s.is_projection = ok && s.unit_count == sigma.rows();
    return s;
}

/// CSV columns: path, step, t, X, r, mu_j..., sigma_j_k..., dW_k... (dW empty at step N).
inline void write_paths_csv(std::ostream& os, const MarketPaths& paths) {
    const int d = paths.assets(), n = paths.noises();
    os << "path,step,t,X,r";
    for (int j = 0; j < d; ++j) os << ",mu_" << j;
    for (int j = 0; j < d; ++j)
        for (int k = 0; k < n; ++k) os << ",sigma_" << j << '_' << k;
    for (int k = 0; k < n; ++k) os << ",dW_" << k;
    os << '\n';
    os.precision(17);
    for (int p = 0; p < paths.n_paths(); ++p) {
        for (int i = 0; i <= paths.steps(); ++i) {
            const Coefficients c = paths.coefficients_at(p, i);
            os << p << ',' << i << ',' << paths.grid().time(i) << ',' << paths.factor(p, i) << ',' << c.r;
            for (int j = 0; j < d; ++j) os << ',' << c.mu(j);
            for (int j = 0; j < d; ++j)
                for (int k = 0; k < n; ++k) os << ',' << c.sigma(j, k);
            for (int k = 0; k < n; ++k) {
                os << ',';
                if (i < paths.steps()) os << paths.increment(p, i)[k];
            }
            os << '\n';
        }
    }
}

}  // namespace ezbsde
