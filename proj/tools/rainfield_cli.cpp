#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "rainfield/harness.hpp"

namespace fs = std::filesystem;
using rainfield::ExperimentConfig;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<double> runtime_cap;
    bool parallel_methods = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_cap) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--out", args.out_dir, "output directory (default: out root / scenario)");
    if (needs_cap) {
        cmd->add_option("--runtime-cap", args.runtime_cap, "per-method runtime cap, seconds");
        cmd->add_flag("--parallel-methods", args.parallel_methods,
                      "run requested methods concurrently");
    }
}

ExperimentConfig resolve(const CommonArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::from_file(args.config_path);
    if (args.seed) cfg.raw["seed"] = *args.seed;
    if (args.runtime_cap) cfg.raw["runtime_cap_seconds"] = *args.runtime_cap;
    cfg.validate();
    return cfg;
}

fs::path resolve_out(const CommonArgs& args, const ExperimentConfig& cfg) {
    if (!args.out_dir.empty()) return fs::path(args.out_dir);
    return rainfield::harness::default_out_root() / cfg.scenario();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rainfield: rain-field reconstruction harness"};
    app.require_subcommand(1);

    CommonArgs sim_args, rec_args, eval_args, oracle_args, em_args;
    add_common(app.add_subcommand("simulate", "generate reference fields and observations"),
               sim_args, false);
    add_common(app.add_subcommand("reconstruct", "run samplers and baselines"), rec_args,
               true);
    add_common(app.add_subcommand("evaluate", "compute metrics and reports"), eval_args,
               false);
    add_common(app.add_subcommand("oracle", "write the closed-form 1-D posterior"),
               oracle_args, false);
    add_common(app.add_subcommand("em-fit", "fit the censored-GP prior by EM"), em_args,
               false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("simulate")) {
            const ExperimentConfig cfg = resolve(sim_args);
            return rainfield::harness::cmd_simulate(cfg, resolve_out(sim_args, cfg));
        }
        if (app.got_subcommand("reconstruct")) {
            const ExperimentConfig cfg = resolve(rec_args);
            return rainfield::harness::cmd_reconstruct(cfg, resolve_out(rec_args, cfg),
                                                       rec_args.parallel_methods);
        }
        if (app.got_subcommand("evaluate")) {
            const ExperimentConfig cfg = resolve(eval_args);
            return rainfield::harness::cmd_evaluate(cfg, resolve_out(eval_args, cfg));
        }
        if (app.got_subcommand("oracle")) {
            const ExperimentConfig cfg = resolve(oracle_args);
            return rainfield::harness::cmd_oracle(cfg, resolve_out(oracle_args, cfg));
        }
        if (app.got_subcommand("em-fit")) {
            const ExperimentConfig cfg = resolve(em_args);
            return rainfield::harness::cmd_em_fit(cfg, resolve_out(em_args, cfg));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
