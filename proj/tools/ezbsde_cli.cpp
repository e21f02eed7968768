#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ezbsde/embedded_schemas.hpp"
#include "ezbsde/experiment.hpp"

namespace {

using ezbsde::json;

struct Overrides {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<int> paths;
};

json load(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw ezbsde::ConfigError("cannot open config file " + file);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ezbsde::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

/// Stages run by each subcommand; `report` runs what the config lists.
std::optional<std::vector<std::string>> stages_for(const std::string& cmd) {
    if (cmd == "simulate") return std::vector<std::string>{"moments"};
    if (cmd == "solve") return std::vector<std::string>{"solve"};
    if (cmd == "verify") return std::vector<std::string>{"solve", "verify"};
    if (cmd == "duality") return std::vector<std::string>{"solve", "duality"};
    if (cmd == "conditions") return std::vector<std::string>{"conditions"};
    return std::nullopt;
}

int run(const std::string& cmd, const Overrides& o) {
    try {
        json doc = load(o.config);
        if (doc.is_object()) {
            if (o.out) doc["output_dir"] = *o.out;
            if (o.seed) doc["seed"] = *o.seed;
            if (o.paths) doc["n_paths"] = *o.paths;
            if (auto st = stages_for(cmd)) doc["experiments"] = *st;
            if (cmd == "simulate") doc["csv"] = true;
        }
        const ezbsde::ExperimentConfig cfg = ezbsde::parse_config(doc, json::parse(ezbsde::schemas::config));
        ezbsde::ExperimentResult res = ezbsde::run_experiment(cfg);
        const std::string text = ezbsde::emit_report_json(res.report);
        std::filesystem::create_directories(cfg.output_dir);
        const auto path = std::filesystem::path(cfg.output_dir) / "report.json";
        std::ofstream(path) << text;
        std::cout << text;
        std::cerr << "wrote " << path.string() << '\n';
        for (const auto& f : res.files) std::cerr << "wrote " << f << '\n';
        return ezbsde::kExitOk;
    } catch (const ezbsde::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        for (const auto& d : e.details()) std::cerr << "  " << d << '\n';
        return ezbsde::kExitConfig;
    } catch (const ezbsde::InvalidParameter& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return ezbsde::kExitConfig;
    } catch (const ezbsde::AssertionFailure& e) {
        std::cerr << "assertion failed: " << e.what() << '\n';
        return ezbsde::kExitAssertion;
    } catch (const ezbsde::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return ezbsde::kExitNumerical;
    } catch (const ezbsde::DomainError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return ezbsde::kExitNumerical;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Epstein-Zin consumption-investment engine"};
    app.require_subcommand(1);
    Overrides o;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "simulate market paths and report exponential moments"},
        {"solve", "solve the BSDE and report Y0 and the time-0 controls"},
        {"verify", "solve, then check the utility and martingale claims"},
        {"duality", "solve, then compare primal and dual values"},
        {"conditions", "evaluate the closed-form model conditions"},
        {"report", "run the stages listed in the config"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "config JSON file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory (overrides output_dir)");
        sub->add_option("--seed", o.seed, "RNG seed (overrides seed)");
        sub->add_option("--paths", o.paths, "number of paths (overrides n_paths)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : ezbsde::kExitUsage;
    }
    for (const auto& [name, help] : commands)
        if (app.got_subcommand(name)) return run(name, o);
    return ezbsde::kExitUsage;
}
