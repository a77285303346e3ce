#include <CLI11.hpp>

#include "bridgeflow/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"bridgeflow: Sinkhorn-proximal Schrodinger bridge solver"};
    app.require_subcommand(1);

    std::string config_path;
    std::string solution_dir;
    std::string out_dir;
    std::int64_t seed = -1;
    bool quiet = false;

    auto add_common = [&](CLI::App* sub, bool needs_solution) {
        sub->add_option("--config", config_path, "configuration file (JSON)")->required();
        if (needs_solution)
            sub->add_option("--solution", solution_dir, "directory of a completed solve run")
                ->required();
        sub->add_option("--out", out_dir, "output directory override");
        sub->add_option("--seed", seed, "seed override");
        sub->add_flag("--quiet", quiet, "suppress progress output");
    };

    CLI::App* solve = app.add_subcommand("solve", "solve an SBP with nonlinear prior drift");
    add_common(solve, false);
    CLI::App* classical =
        app.add_subcommand("classical", "solve the classical (zero-drift) SBP on a 1D grid");
    add_common(classical, false);
    CLI::App* simulate =
        app.add_subcommand("simulate", "closed-loop simulation from a stored solve run");
    add_common(simulate, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help() << "\n";
        return 2;
    }

    bridgeflow::CliOptions opts;
    if (!out_dir.empty()) opts.out_dir = out_dir;
    if (seed >= 0) opts.seed = static_cast<std::uint64_t>(seed);
    opts.quiet = quiet;

    if (solve->parsed()) return bridgeflow::cmd_solve(config_path, opts);
    if (classical->parsed()) return bridgeflow::cmd_classical(config_path, opts);
    if (simulate->parsed()) return bridgeflow::cmd_simulate(config_path, solution_dir, opts);
    std::cerr << app.help() << "\n";
    return 2;
}
