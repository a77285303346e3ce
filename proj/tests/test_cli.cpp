#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bridgeflow/cli.hpp"

using namespace bridgeflow;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("bridgeflow_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Json tiny_solve_config(const fs::path& out) {
    Json j;
    j["drift"] = {{"kind", "gradient"}, {"dim", 1}};
    j["endpoints"]["rho0"] = {
        {"weights", {1.0}}, {"means", {{-0.5}}}, {"covariances", {{{0.09}}}}};
    j["endpoints"]["rho1"] = {
        {"weights", {1.0}}, {"means", {{0.6}}}, {"covariances", {{{0.0625}}}}};
    j["solver"] = {{"epsilon", 0.5}, {"gamma", 0.1},   {"num_steps", 25},
                   {"num_samples", 60}, {"tol_sb", 0.05}, {"tol_pr", 1e-6},
                   {"max_iter_sb", 60}, {"max_iter_pr", 5000}, {"seed", 77},
                   {"log_domain", true}};
    j["output"] = {{"snapshot_times", {0.0, 0.48, 1.0}},
                   {"grid_min", {-2.5}},
                   {"grid_max", {2.5}},
                   {"grid_counts", {41}},
                   {"directory", out.string()}};
    j["simulate"] = {{"num_paths", 150}, {"dt", 0.01}};
    return j;
}

fs::path write_config(const Json& j, const fs::path& dir, const std::string& name) {
    fs::path p = dir / name;
    std::ofstream out(p);
    out << j.dump(2);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config validation names the offending key") {
    fs::path dir = temp_dir("badcfg");
    Json j = tiny_solve_config(dir / "out");
    j["solver"]["epsilon"] = -1.0;
    fs::path cfg = write_config(j, dir, "bad.json");
    REQUIRE(cmd_solve(cfg.string(), {.out_dir = {}, .seed = {}, .quiet = true}) == 2);
    try {
        load_config(cfg.string());
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE_THAT(e.key, Catch::Matchers::ContainsSubstring("epsilon"));
    }
}

TEST_CASE("missing config file exits with a usage error") {
    REQUIRE(cmd_solve("/nonexistent/config.json", {.out_dir = {}, .seed = {}, .quiet = true}) == 2);
}

TEST_CASE("solve command produces the advertised artifacts deterministically") {
    fs::path dir = temp_dir("solve");
    fs::path out1 = dir / "run1";
    fs::path out2 = dir / "run2";
    Json j = tiny_solve_config(out1);
    fs::path cfg = write_config(j, dir, "cfg.json");

    REQUIRE(cmd_solve(cfg.string(), {.out_dir = {}, .seed = {}, .quiet = true}) == 0);
    REQUIRE(fs::exists(out1 / "manifest.json"));
    REQUIRE(fs::exists(out1 / "diagnostics.jsonl"));

    Json manifest;
    {
        std::ifstream in(out1 / "manifest.json");
        in >> manifest;
    }
    for (const auto& f : manifest["files"])
        REQUIRE(fs::exists(out1 / f.get<std::string>()));
    REQUIRE_THAT(manifest["config_hash"].get<std::string>(),
                 Catch::Matchers::StartsWith("fnv1a64:"));

    // bit-reproducibility of the CSV outputs for an identical config + seed
    REQUIRE(cmd_solve(cfg.string(),
                      {.out_dir = out2.string(), .seed = {}, .quiet = true}) == 0);
    for (const auto& f : manifest["files"]) {
        std::string name = f.get<std::string>();
        if (name.rfind(".csv") == std::string::npos) continue;
        REQUIRE(slurp(out1 / name) == slurp(out2 / name));
    }
}

TEST_CASE("simulate with a zero-control stub matches the uncontrolled baseline") {
    fs::path dir = temp_dir("simzero");
    fs::path out = dir / "run";
    Json j = tiny_solve_config(out);
    fs::path cfg = write_config(j, dir, "cfg.json");
    REQUIRE(cmd_solve(cfg.string(), {.out_dir = {}, .seed = {}, .quiet = true}) == 0);

    // stub out every stored control field with zeros
    Json manifest;
    {
        std::ifstream in(out / "manifest.json");
        in >> manifest;
    }
    for (const auto& f : manifest["files"]) {
        std::string name = f.get<std::string>();
        if (name.rfind("control_t", 0) != 0) continue;
        std::vector<std::string> header;
        Matrix rows = read_csv(out / name, &header);
        rows.col(1).setZero();             // u1
        rows.col(2).setOnes();             // valid everywhere
        write_csv(out / name, header, rows);
    }

    REQUIRE(cmd_simulate(cfg.string(), out.string(),
                         {.out_dir = {}, .seed = {}, .quiet = true}) == 0);
    Json stats;
    {
        std::ifstream in(out / "simulate" / "stats.json");
        in >> stats;
    }
    double wc = stats["terminal_w2_controlled"].get<double>();
    double wu = stats["terminal_w2_uncontrolled"].get<double>();
    // same law, independent noise: the two ensembles agree within MC noise
    REQUIRE(wc < 1.5 * wu);
    REQUIRE(wu < 1.5 * wc);
}

TEST_CASE("simulate on the real solve output reduces the terminal distance") {
    fs::path dir = temp_dir("simreal");
    fs::path out = dir / "run";
    Json j = tiny_solve_config(out);
    fs::path cfg = write_config(j, dir, "cfg.json");
    REQUIRE(cmd_solve(cfg.string(), {.out_dir = {}, .seed = {}, .quiet = true}) == 0);
    REQUIRE(cmd_simulate(cfg.string(), out.string(),
                         {.out_dir = {}, .seed = {}, .quiet = true}) == 0);
    Json stats;
    {
        std::ifstream in(out / "simulate" / "stats.json");
        in >> stats;
    }
    REQUIRE(stats["terminal_w2_controlled"].get<double>() <
            stats["terminal_w2_uncontrolled"].get<double>());
}

TEST_CASE("simulate without a solution directory fails cleanly") {
    fs::path dir = temp_dir("simmissing");
    Json j = tiny_solve_config(dir / "none");
    fs::path cfg = write_config(j, dir, "cfg.json");
    REQUIRE(cmd_simulate(cfg.string(), (dir / "missing").string(),
                         {.out_dir = {}, .seed = {}, .quiet = true}) == 1);
}

TEST_CASE("classical command emits factors, snapshots and paths") {
    fs::path dir = temp_dir("classical");
    fs::path out = dir / "run";
    Json j;
    j["endpoints"]["rho0"] = {
        {"weights", {1.0}}, {"means", {{-1.5}}}, {"covariances", {{{0.25}}}}};
    j["endpoints"]["rho1"] = {{"weights", {0.5, 0.5}},
                              {"means", {{1.0}, {2.5}}},
                              {"covariances", {{{0.09}}, {{0.09}}}}};
    j["solver"] = {{"epsilon", 0.5}, {"num_steps", 1000}, {"seed", 5}};
    j["classical"] = {{"grid_lo", -6.0}, {"grid_hi", 6.0}, {"grid_points", 201},
                      {"tol", 1e-10},    {"max_iter", 500}, {"num_paths", 20},
                      {"path_dt", 1e-2}};
    j["output"] = {{"snapshot_times", {0.0, 0.5, 1.0}}, {"directory", out.string()}};
    fs::path cfg = write_config(j, dir, "cfg.json");

    REQUIRE(cmd_classical(cfg.string(), {.out_dir = {}, .seed = {}, .quiet = true}) == 0);
    REQUIRE(fs::exists(out / "factors.csv"));
    REQUIRE(fs::exists(out / "density_t0.500.csv"));
    REQUIRE(fs::exists(out / "control_t0.500.csv"));
    REQUIRE(fs::exists(out / "paths.csv"));

    // 2D endpoints are a config error for the classical pipeline
    Json bad = j;
    bad["endpoints"]["rho0"] = {{"weights", {1.0}},
                                {"means", {{0.0, 0.0}}},
                                {"covariances", {{{1.0, 0.0}, {0.0, 1.0}}}}};
    bad["endpoints"]["rho1"] = bad["endpoints"]["rho0"];
    fs::path bad_cfg = write_config(bad, dir, "bad.json");
    REQUIRE(cmd_classical(bad_cfg.string(), {.out_dir = {}, .seed = {}, .quiet = true}) == 2);
}

#ifdef BRIDGEFLOW_CLI_PATH
TEST_CASE("cli binary: unknown subcommand exits with usage code 2") {
    std::string cmd = std::string(BRIDGEFLOW_CLI_PATH) + " frobnicate > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(WEXITSTATUS(status) == 2);
}

TEST_CASE("cli binary: seed override changes the outputs") {
    fs::path dir = temp_dir("seedover");
    fs::path out1 = dir / "a";
    fs::path out2 = dir / "b";
    Json j = tiny_solve_config(out1);
    fs::path cfg = write_config(j, dir, "cfg.json");
    std::string base = std::string(BRIDGEFLOW_CLI_PATH) + " solve --config " + cfg.string();
    REQUIRE(WEXITSTATUS(std::system((base + " --quiet > /dev/null 2>&1").c_str())) == 0);
    REQUIRE(WEXITSTATUS(std::system((base + " --out " + out2.string() +
                                     " --seed 1234 --quiet > /dev/null 2>&1")
                                        .c_str())) == 0);
    REQUIRE(slurp(out1 / "phihat0.csv") != slurp(out2 / "phihat0.csv"));
}
#endif
