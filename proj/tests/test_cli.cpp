#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "ezbsde/embedded_schemas.hpp"
#include "ezbsde/experiment.hpp"

using namespace ezbsde;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = EZBSDE_SOURCE_DIR;

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json config_schema() { return json::parse(schemas::config); }
json report_schema() { return json::parse(schemas::report); }

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("ezbsde_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

json constant_config() {
    return json::parse(R"({
        "schema_version": 1,
        "model": {"type": "constant", "rate": 0.02, "mu": [0.06], "sigma": [[0.2]]},
        "preferences": {"gamma": 2.0, "psi": 2.0, "delta": 1.0},
        "grid": {"T": 1.0, "N": 50},
        "n_paths": 10000,
        "seed": 42,
        "basis_degree": 2
    })");
}

json heston_config(int paths) {
    json c = read_json(kSource / "configs" / "heston.json");
    c["n_paths"] = paths;
    c["grid"]["N"] = 10;
    c["experiments"] = {"conditions", "moments", "solve", "verify", "duality"};
    return c;
}

ExperimentResult run(json doc, const fs::path& out) {
    doc["output_dir"] = out.string();
    return run_experiment(parse_config(doc, config_schema()));
}

/// Runs the CLI and returns its exit status.
int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(EZBSDE_CLI) + " " + args + " > " + (log / "stdout.txt").string() + " 2> " +
                            (log / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Schema, ShippedFilesMatchEmbeddedCopies) {
    EXPECT_EQ(read_json(kSource / "schemas" / "config.schema.json"), config_schema());
    EXPECT_EQ(read_json(kSource / "schemas" / "report.schema.json"), report_schema());
}

TEST(Schema, ShippedConfigsValidate) {
    const SchemaValidator v(config_schema());
    int count = 0;
    for (const auto& e : fs::directory_iterator(kSource / "configs")) {
        if (e.path().extension() != ".json") continue;
        const auto errors = v.validate(read_json(e.path()));
        EXPECT_TRUE(errors.empty()) << e.path() << ": " << (errors.empty() ? "" : errors.front());
        EXPECT_NO_THROW(parse_config(read_json(e.path()), config_schema())) << e.path();
        ++count;
    }
    EXPECT_GE(count, 4);
}

TEST(Schema, ValidatorCatchesViolations) {
    const SchemaValidator v(config_schema());
    json c = constant_config();
    EXPECT_TRUE(v.accepts(c));
    json bad = c;
    bad.erase("seed");
    EXPECT_FALSE(v.accepts(bad));
    bad = c;
    bad["preferences"]["gamma"] = 1.0;
    EXPECT_FALSE(v.accepts(bad));
    bad = c;
    bad["extra"] = true;
    EXPECT_FALSE(v.accepts(bad));
    bad = c;
    bad["model"]["type"] = "vasicek";
    EXPECT_FALSE(v.accepts(bad));
    bad = c;
    bad["grid"]["N"] = 2.5;
    EXPECT_FALSE(v.accepts(bad));
    bad = c;
    bad["experiments"] = {"solve", "solve"};
    EXPECT_FALSE(v.accepts(bad));
    bad = c;
    bad["schema_version"] = 2;
    EXPECT_FALSE(v.accepts(bad));
}

TEST(Config, SemanticChecksRaiseConfigError) {
    json c = constant_config();
    c["assumption"] = {{"p", 2.0}, {"q", 1.01}};
    c["preferences"]["gamma"] = 5.0;
    EXPECT_THROW(parse_config(c, config_schema()), ConfigError);
    c = constant_config();
    c["model"]["mu"] = {0.06, 0.05};
    c["model"]["sigma"] = {{0.2}, {0.1}};
    EXPECT_THROW(parse_config(c, config_schema()), ConfigError);
    c = constant_config();
    c["model"] = {{"type", "path_dependent_rate"}, {"base", {{"type", "constant"}}},
                  {"kappa0", 0.0}, {"kappa1", 0.1}, {"r_min", 0.0}, {"r_max", 0.1}};
    EXPECT_THROW(parse_config(c, config_schema()), ConfigError);
}

TEST(Config, StagesRunInDependencyOrder) {
    json c = constant_config();
    c["experiments"] = {"duality", "conditions"};
    const ExperimentConfig cfg = parse_config(c, config_schema());
    EXPECT_EQ(cfg.experiments, (std::vector<std::string>{"conditions", "solve", "duality"}));
}

TEST(Report, EmptyExperimentListIsHeaderOnly) {
    const ExperimentResult r = run(constant_config(), scratch("empty"));
    EXPECT_EQ(r.report.size(), 3u);
    EXPECT_EQ(r.report["schema_version"], 1);
    EXPECT_EQ(r.report["config"]["seed"], 42);
    EXPECT_TRUE(r.report["experiments"].empty());
    EXPECT_TRUE(SchemaValidator(report_schema()).accepts(r.report));
}

TEST(Report, ZeroHorizonGivesBequest) {
    json c = read_json(kSource / "configs" / "zero_horizon.json");
    c["experiments"] = {"solve", "verify"};
    const ExperimentResult r = run(c, scratch("zero"));
    EXPECT_EQ(r.report["Y0"].get<double>(), 0.0);
    EXPECT_DOUBLE_EQ(r.report["V0"].get<double>(), -1.0);
}

TEST(Report, ConstantMarketAgreesWithEmittedOracle) {
    json c = constant_config();
    c["experiments"] = {"solve", "duality"};
    const ExperimentResult r = run(c, scratch("constant"));
    ASSERT_TRUE(r.report.contains("Y0_oracle"));
    EXPECT_NEAR(r.report["Y0"].get<double>(), r.report["Y0_oracle"].get<double>(), 0.02);
    EXPECT_NEAR(r.report["pi_star_t0"][0].get<double>(), 0.75, 0.01);
    ASSERT_TRUE(r.report.contains("algebraic_gap"));
    EXPECT_LT(r.report["algebraic_gap"].get<double>(), 1e-12);
    EXPECT_LE(r.report["mc_gap"].get<double>(), 3.0 * r.report["mc_gap_stderr"].get<double>());
}

TEST(Report, FullPipelineIsPopulatedAndSchemaValid) {
    const ExperimentResult r = run(heston_config(1000), scratch("full"));
    for (const char* k : {"Y0", "Y0_stderr", "V0", "V0_stderr", "pi_star_t0", "cons_frac_t0", "y_star", "U0",
                          "algebraic_gap", "mc_gap", "EQ_T", "entropy", "entropy_bound", "conditions", "moments",
                          "solver", "verify"})
        EXPECT_TRUE(r.report.contains(k)) << k;
    EXPECT_FALSE(r.report.contains("Y0_oracle"));
    const auto errors = SchemaValidator(report_schema()).validate(r.report);
    EXPECT_TRUE(errors.empty()) << (errors.empty() ? "" : errors.front());
    EXPECT_TRUE(r.report["conditions"]["pass"].get<bool>());
}

TEST(Report, IdenticalConfigsGiveIdenticalBytes) {
    const std::string a = emit_report_json(run(heston_config(300), scratch("det_a")).report);
    const std::string b = emit_report_json(run(heston_config(300), scratch("det_a")).report);
    EXPECT_EQ(a, b);
}

TEST(Report, CsvDumpsWritten) {
    json c = heston_config(50);
    c["csv"] = true;
    c["experiments"] = {"verify"};
    const fs::path out = scratch("csv");
    const ExperimentResult r = run(c, out);
    for (const char* f : {"paths.csv", "bsde.csv", "strategy.csv"}) {
        ASSERT_TRUE(fs::exists(out / f)) << f;
        EXPECT_GT(fs::file_size(out / f), 100u);
    }
    EXPECT_EQ(read_text(out / "bsde.csv").substr(0, 20), "path,step,t,Y,Z_1,Z_");
}

TEST(Cli, ConditionsOnlyCirPasses) {
    const fs::path out = scratch("cli_cir");
    EXPECT_EQ(cli("conditions --config " + (kSource / "configs" / "cir_conditions.json").string() + " --out " +
                      out.string(),
                  out),
              0);
    const json rep = read_json(out / "report.json");
    EXPECT_TRUE(rep["conditions"]["pass"].get<bool>());
    for (const auto& s : rep["conditions"]["clause_sets"])
        for (const auto& cl : s["clauses"]) EXPECT_TRUE(cl["holds"].get<bool>());
    EXPECT_EQ(read_text(out / "stdout.txt"), read_text(out / "report.json"));
}

TEST(Cli, OverridesApply) {
    const fs::path out = scratch("cli_override");
    ASSERT_EQ(cli("solve --config " + (kSource / "configs" / "zero_horizon.json").string() + " --out " +
                      out.string() + " --seed 5 --paths 20",
                  out),
              0);
    const json rep = read_json(out / "report.json");
    EXPECT_EQ(rep["config"]["seed"], 5);
    EXPECT_EQ(rep["config"]["n_paths"], 20);
    EXPECT_EQ(rep["experiments"], json({"solve"}));
}

TEST(Cli, SchemaViolationExitsTwo) {
    const fs::path out = scratch("cli_bad");
    json c = constant_config();
    c["preferences"]["psi"] = 0.5;
    std::ofstream(out / "bad.json") << c.dump();
    EXPECT_EQ(cli("solve --config " + (out / "bad.json").string() + " --out " + out.string(), out), 2);
    std::ofstream(out / "broken.json") << "{ not json";
    EXPECT_EQ(cli("solve --config " + (out / "broken.json").string() + " --out " + out.string(), out), 2);
    c = constant_config();
    c["assumption"] = {{"p", 2.0}, {"q", 1.0001}};
    c["preferences"]["gamma"] = 5.0;
    std::ofstream(out / "q.json") << c.dump();
    EXPECT_EQ(cli("solve --config " + (out / "q.json").string() + " --out " + out.string(), out), 2);
}

TEST(Cli, NumericalFailureExitsThree) {
    const fs::path out = scratch("cli_numeric");
    json c = heston_config(2);
    c["basis_degree"] = 6;
    std::ofstream(out / "tiny.json") << c.dump();
    EXPECT_EQ(cli("solve --config " + (out / "tiny.json").string() + " --out " + out.string(), out), 3);
}

TEST(Cli, MissingSubcommandIsUsageError) {
    const fs::path out = scratch("cli_usage");
    EXPECT_EQ(cli("", out), 1);
    EXPECT_EQ(cli("solve", out), 1);
}
