// Command-line driver for the synchronization experiments and the two
// verification oracles. Every run is a pure function of (config, seeds);
// rerunning with the same inputs reproduces the report files byte for byte.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtsync/harness.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    int episodes = -1;
    int slots = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON experiment config");
    cmd->add_option("--seed", args.seeds, "run seeds")->delimiter(',');
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--episodes", args.episodes, "training episodes override");
    cmd->add_option("--slots", args.slots, "slots per episode override");
}

dtsync::ExperimentConfig resolve_config(const CommonArgs& args) {
    dtsync::ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = dtsync::load_experiment_config_file(args.config_path);
    if (!args.seeds.empty()) cfg.seeds = args.seeds;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.episodes >= 0) cfg.episodes = args.episodes;
    if (args.slots >= 0) cfg.slots_per_episode = args.slots;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"digital-twin synchronization scheduling experiments"};
    app.require_subcommand(1);

    CommonArgs conv_args, sweep_args, scaling_args, cons_args, cmdp_args, spi_args;
    int oracle_instances = 10;

    CLI::App* conv = app.add_subcommand("convergence", "staged-budget training comparison");
    add_common(conv, conv_args);
    CLI::App* sweep = app.add_subcommand("budget-sweep", "mismatch and NRMSE versus block budget");
    add_common(sweep, sweep_args);
    CLI::App* scaling = app.add_subcommand("device-scaling", "mismatch versus fleet size");
    add_common(scaling, scaling_args);
    CLI::App* cons = app.add_subcommand("consumption", "instantaneous block-usage distribution");
    add_common(cons, cons_args);
    CLI::App* cmdp = app.add_subcommand("oracle-cmdp", "tiny constrained-MDP duality check");
    add_common(cmdp, cmdp_args);
    cmdp->add_option("--instances", oracle_instances, "random instances to check");
    CLI::App* spi = app.add_subcommand("oracle-spi", "tabular soft policy iteration check");
    add_common(spi, spi_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (conv->parsed()) {
            auto cfg = resolve_config(conv_args);
            if (cfg.budget_schedule.empty())
                cfg.budget_schedule = {{0, 30}, {cfg.episodes * 3 / 5, 10}, {cfg.episodes * 4 / 5, 26}};
            dtsync::run_convergence_experiment(cfg);
            std::cout << "wrote " << cfg.out_dir << "/curves.csv and report.json\n";
        } else if (sweep->parsed()) {
            auto cfg = resolve_config(sweep_args);
            dtsync::run_budget_sweep(cfg);
            std::cout << "wrote " << cfg.out_dir << "/sweep.csv and report.json\n";
        } else if (scaling->parsed()) {
            auto cfg = resolve_config(scaling_args);
            dtsync::run_device_scaling(cfg);
            std::cout << "wrote " << cfg.out_dir << "/scaling.csv and report.json\n";
        } else if (cons->parsed()) {
            auto cfg = resolve_config(cons_args);
            dtsync::run_consumption_distribution(cfg);
            std::cout << "wrote " << cfg.out_dir << "/hist.csv and report.json\n";
        } else if (cmdp->parsed()) {
            auto cfg = resolve_config(cmdp_args);
            auto report = dtsync::run_cmdp_oracle(cfg.seeds.front(), oracle_instances, cfg.out_dir);
            std::cout << "worst duality gap: " << report["worst_gap"] << '\n';
        } else if (spi->parsed()) {
            auto cfg = resolve_config(spi_args);
            dtsync::run_spi_oracle(cfg.seeds.front(), 10, cfg.out_dir);
            std::cout << "wrote " << cfg.out_dir << "/report.json\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
