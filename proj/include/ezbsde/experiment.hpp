#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ezbsde/bsde.hpp"
#include "ezbsde/diagnostics.hpp"
#include "ezbsde/duality.hpp"
#include "ezbsde/errors.hpp"
#include "ezbsde/market.hpp"
#include "ezbsde/schema.hpp"
#include "ezbsde/strategy.hpp"

namespace ezbsde {

using json = nlohmann::json;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitConfig = 2, kExitNumerical = 3, kExitAssertion = 4 };

/// Config violations: schema failures and semantic checks done before any computation.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, std::vector<std::string> details = {})
        : std::runtime_error(what), details_(std::move(details)) {}
    const std::vector<std::string>& details() const { return details_; }

private:
    std::vector<std::string> details_;
};

/// A failed hard assertion of the diagnostics stage.
class AssertionFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order{"conditions", "moments", "solve", "verify", "duality"};
    return order;
}

struct ExperimentConfig {
    MarketModel model;
    Preferences prefs;
    TimeGrid grid;
    int n_paths = 0;
    std::uint64_t seed = 0;
    AssumptionParams params;
    int basis_degree = 3;
    double omega = 1.0;
    std::string output_dir = ".";
    bool csv = false;
    std::vector<std::string> experiments;  // in stage order
    json raw;                              // the validated document, echoed in reports

    bool wants(const std::string& stage) const {
        return std::find(experiments.begin(), experiments.end(), stage) != experiments.end();
    }
};

namespace detail {

inline Vec json_vector(const json& a) {
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    return v;
}

inline Mat json_matrix(const json& a) {
    const auto rows = static_cast<Eigen::Index>(a.size());
    const auto cols = static_cast<Eigen::Index>(a[0].size());
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(a[i].size()) != cols) throw ConfigError("model.sigma: ragged rows");
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = a[i][j].get<double>();
    }
    return m;
}

inline HestonModel parse_heston(const json& j) {
    HestonModel h;
    h.b = j.at("b");
    h.l = j.at("l");
    h.a = j.at("a");
    h.lambda = j.at("lambda");
    h.sigma = j.at("sigma");
    h.rho = j.at("rho");
    h.x0 = j.at("x0");
    h.rate = j.at("rate");
    h.variance_floor = j.value("variance_floor", h.variance_floor);
    return h;
}

inline LinearDiffusionModel parse_linear_diffusion(const json& j) {
    LinearDiffusionModel m;
    m.b = j.at("b");
    m.a = j.at("a");
    m.sigma = j.at("sigma");
    m.lambda0 = j.at("lambda0");
    m.lambda1 = j.at("lambda1");
    m.rho = j.at("rho");
    m.x0 = j.at("x0");
    m.rate = j.at("rate");
    return m;
}

}  // namespace detail

inline MarketModel parse_model(const json& j) {
    const std::string type = j.at("type");
    if (type == "constant") {
        ConstantModel c;
        c.rate = j.at("rate");
        c.mu = detail::json_vector(j.at("mu"));
        c.sigma = detail::json_matrix(j.at("sigma"));
        return c;
    }
    if (type == "heston") return detail::parse_heston(j);
    if (type == "linear_diffusion") return detail::parse_linear_diffusion(j);
    if (type == "cir") {
        CirModel c;
        c.b = j.at("b");
        c.l = j.at("l");
        c.a = j.at("a");
        c.r0 = j.at("r0");
        c.mu = j.at("mu");
        c.sigma = j.at("sigma");
        c.epsilon = j.at("epsilon");
        c.rho = j.at("rho");
        return c;
    }
    if (type == "path_dependent_rate") {
        PathDependentRateModel m;
        const json& base = j.at("base");
        const std::string bt = base.value("type", "");
        if (bt == "heston") m.base = detail::parse_heston(base);
        else if (bt == "linear_diffusion") m.base = detail::parse_linear_diffusion(base);
        else throw ConfigError("model.base: type must be heston or linear_diffusion");
        m.rate = {j.at("kappa0"), j.at("kappa1"), j.at("r_min"), j.at("r_max")};
        return m;
    }
    throw ConfigError("model.type: unknown model '" + type + "'");
}

/// Schema validation followed by the semantic checks the schema cannot express.
inline ExperimentConfig parse_config(const json& doc, const json& config_schema) {
    const auto errors = SchemaValidator(config_schema).validate(doc);
    if (!errors.empty()) throw ConfigError("config does not match the schema", errors);
    if (doc.at("model").at("type") == "path_dependent_rate") {
        json base_schema = config_schema["properties"]["model"];
        json base = doc["model"]["base"];
        const auto base_errors = SchemaValidator(base_schema).validate(base);
        if (!base_errors.empty()) throw ConfigError("model.base does not match the schema", base_errors);
    }
    ExperimentConfig c;
    c.raw = doc;
    try {
        c.model = parse_model(doc.at("model"));
        validate(c.model);
        const json& pr = doc.at("preferences");
        c.prefs = Preferences::make(pr.at("gamma"), pr.at("psi"), pr.at("delta"));
        c.grid = TimeGrid::make(doc.at("grid").at("T"), doc.at("grid").at("N"));
        const json as = doc.value("assumption", json{{"p", 2.0}, {"q", 2.0}});
        c.params = AssumptionParams::make(as.at("p"), as.at("q"), c.prefs.gamma);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    c.n_paths = doc.at("n_paths");
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.basis_degree = doc.value("basis_degree", 3);
    c.omega = doc.value("omega", 1.0);
    c.output_dir = doc.value("output_dir", std::string("."));
    c.csv = doc.value("csv", false);
    const std::vector<std::string> requested = doc.value("experiments", std::vector<std::string>{});
    std::set<std::string> want(requested.begin(), requested.end());
    if (want.count("verify") || want.count("duality")) want.insert("solve");
    for (const auto& s : stage_order())
        if (want.count(s)) c.experiments.push_back(s);
    return c;
}

namespace detail {

/// Numbers that may be infinite are written as strings.
inline json number_or_string(double x) {
    if (std::isfinite(x)) return x;
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
}

inline json to_json(const MomentEstimate& m) {
    return {{"mean", number_or_string(m.mean)},
            {"stderr", number_or_string(m.std_error)},
            {"tail_flag", m.tail_flag},
            {"overflow", m.overflow}};
}

inline json to_json(const ConditionReport& r) {
    json sets = json::array();
    for (const auto& s : r.sets) {
        json clauses = json::array();
        for (const auto& c : s.clauses)
            clauses.push_back({{"name", c.name}, {"lhs", c.lhs}, {"relation", c.relation}, {"rhs", c.rhs},
                               {"holds", c.holds}});
        sets.push_back({{"name", s.name}, {"pass", s.pass()}, {"clauses", clauses}});
    }
    return {{"model", r.model}, {"pass", r.pass()}, {"clause_sets", sets}};
}

inline json to_json(const ClassDBounds& b) {
    return {{"times", b.times},
            {"upper", b.upper},
            {"lower", b.lower},
            {"upper_bound", number_or_string(b.upper_bound)},
            {"lower_bound", number_or_string(b.lower_bound)},
            {"upper_exceeds", b.upper_exceeds},
            {"lower_exceeds", b.lower_exceeds},
            {"overflow", b.overflow}};
}

inline void write_bsde_csv(std::ostream& os, const BsdeSolution& sol) {
    os << "path,step,t,Y";
    for (int k = 0; k < sol.noises; ++k) os << ",Z_" << k + 1;
    os << '\n';
    for (int p = 0; p < sol.n_paths; ++p)
        for (int i = 0; i <= sol.steps(); ++i) {
            os << p << ',' << i << ',' << sol.grid.time(i) << ',' << sol.y(p, i);
            const Vec z = i < sol.steps() ? sol.z(p, i) : Vec::Zero(sol.noises);
            for (int k = 0; k < sol.noises; ++k) {
                os << ',';
                if (i < sol.steps()) os << z(k);
            }
            os << '\n';
        }
}

}  // namespace detail

struct ExperimentResult {
    json report;
    DiagnosticsReport diagnostics;
    std::vector<std::string> files;  // written output files
};

/// Runs the requested stages in dependency order on one shared path set.
/// Throws NumericalError (and subclasses) for numerical failures and
/// AssertionFailure for failed hard diagnostics assertions.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_files = true) {
    ExperimentResult res;
    json& rep = res.report;
    rep["schema_version"] = 1;
    rep["config"] = cfg.raw;
    rep["experiments"] = cfg.experiments;
    std::filesystem::path out(cfg.output_dir);
    auto open = [&](const std::string& name) {
        std::filesystem::create_directories(out);
        res.files.push_back((out / name).string());
        std::ofstream f(out / name);
        if (!f) throw std::runtime_error("cannot write " + (out / name).string());
        f.precision(17);
        return f;
    };

    if (cfg.wants("conditions")) {
        ConditionReport cr = check_model_conditions(cfg.model, cfg.params.q, cfg.prefs.gamma, cfg.grid.horizon);
        rep["conditions"] = detail::to_json(cr);
        res.diagnostics.conditions = std::move(cr);
    }

    const bool need_paths = cfg.wants("moments") || cfg.wants("solve");
    if (!need_paths) return res;
    const MarketPaths paths = simulate_factors(cfg.model, cfg.grid, cfg.n_paths, cfg.seed);
    if (paths.overflow()) throw OverflowError("market simulation overflowed the coefficient cap");
    if (write_files && cfg.csv) {
        auto f = open("paths.csv");
        write_paths_csv(f, paths);
    }

    if (cfg.wants("moments")) {
        const double g = cfg.prefs.gamma, p = cfg.params.p, q = cfg.params.q;
        auto& mom = res.diagnostics.moments;
        mom["exp_2p_gamma_int_r_minus"] = estimate_exponential_moment(paths, Functional::RateNegative, 2.0 * p * g);
        mom["exp_q_gamma1_int_r_plus"] = estimate_exponential_moment(paths, Functional::RatePositive, q * (g - 1.0));
        mom["exp_q_int_mpr2"] = estimate_exponential_moment(paths, Functional::RiskPriceSq, q);
        mom["exp_half_int_mpr2"] = estimate_exponential_moment(paths, Functional::RiskPriceSq, 0.5);
        json mj = json::object();
        for (const auto& [k, v] : mom) mj[k] = detail::to_json(v);
        rep["moments"] = mj;
    }

    if (!cfg.wants("solve")) return res;
    SolverOptions opt;
    opt.basis_degree = cfg.basis_degree;
    const BsdeSolution sol = solve_bsde(paths, cfg.prefs, opt);
    for (int p = 0; p < sol.n_paths; ++p)
        if (sol.y(p, sol.steps()) != 0.0) throw AssertionFailure("terminal condition Y_T = 0 violated");
    rep["Y0"] = sol.y0;
    rep["Y0_stderr"] = sol.y0_stderr;
    rep["solver"] = {{"basis_degree", sol.basis_degree},
                     {"truncation_m", sol.truncation.m},
                     {"newton_tol", sol.newton_tol},
                     {"z_cap", sol.z_cap},
                     {"z_cap_hits", sol.z_cap_hits},
                     {"exp_cap_active", sol.exp_cap_active},
                     {"residuals", sol.residuals}};
    if (auto coeffs = deterministic_coefficients(cfg.model)) {
        rep["Y0_oracle"] = ode_oracle(cfg.prefs, *coeffs, cfg.grid, 10)[0];
    }
    if (write_files && cfg.csv) {
        auto f = open("bsde.csv");
        f.precision(17);
        detail::write_bsde_csv(f, sol);
    }

    const StrategyPaths strat = optimal_controls(sol, paths, cfg.prefs, cfg.omega);
    rep["pi_star_t0"] = std::vector<double>(strat.pi.begin(), strat.pi.begin() + strat.assets);
    rep["cons_frac_t0"] = strat.consumption(0, 0) / cfg.omega;

    std::optional<RecursionResult> primal;
    if (cfg.wants("verify") || cfg.wants("duality")) {
        primal = evaluate_recursive_utility(strat, paths, cfg.prefs, cfg.basis_degree);
        rep["V0"] = primal->realized.mean;
        rep["V0_stderr"] = primal->realized.std_error;
    }

    if (cfg.wants("verify")) {
        const UtilityProcess G = utility_process_G(strat, sol, paths, cfg.prefs);
        QMartingale Q = martingale_check_Q(sol, strat, paths, cfg.prefs, cfg.params);
        ClassDBounds cd = classD_bound_processes(sol, paths, cfg.prefs, cfg.params);
        rep["EQ_T"] = Q.EQ_T.mean;
        rep["EQ_T_stderr"] = Q.EQ_T.std_error;
        rep["entropy"] = Q.entropy.mean;
        rep["entropy_stderr"] = Q.entropy.std_error;
        rep["entropy_bound"] = detail::number_or_string(Q.entropy_bound);
        rep["verify"] = {{"G0", G.G0},
                         {"G_T", G.terminal.mean},
                         {"G_T_stderr", G.terminal.std_error},
                         {"drift", G.drift},
                         {"drift_stderr", G.drift_stderr},
                         {"floored_paths", strat.flagged_paths()},
                         {"classD", detail::to_json(cd)}};
        if (!std::isfinite(Q.EQ_T.mean)) throw AssertionFailure("E[Q_T] is not finite");
        if (write_files && cfg.csv) {
            auto f = open("strategy.csv");
            write_strategy_csv(f, strat, &G);
        }
        res.diagnostics.q_martingale = std::move(Q);
        res.diagnostics.classD = std::move(cd);
    }

    if (cfg.wants("duality")) {
        const double ys = optimal_multiplier(cfg.omega, sol.y0, cfg.prefs);
        const DualPaths dstar = optimal_dual_density(sol, paths);
        const RecursionResult dual = evaluate_dual_utility(dstar, paths, ys, cfg.prefs, cfg.basis_degree);
        const DualityGap gap = duality_gap(sol.y0, cfg.prefs, cfg.omega, primal->realized, dual.realized);
        rep["y_star"] = gap.y_star;
        rep["U0"] = gap.U0;
        rep["algebraic_gap"] = gap.algebraic_gap;
        rep["mc_gap"] = gap.mc_gap;
        rep["mc_gap_stderr"] = gap.stderr_combined;
        if (!(gap.algebraic_gap < 1e-12 * std::max(1.0, std::abs(gap.V0))))
            throw AssertionFailure("algebraic duality identity violated");
    }
    return res;
}

/// Fields in stable order; identical inputs give byte-identical output.
inline std::string emit_report_json(const json& report) { return report.dump(2) + "\n"; }

}  // namespace ezbsde
