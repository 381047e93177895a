#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "preflab/harness.hpp"

namespace {

using namespace preflab;

constexpr const char* kSchemeChoices =
    "data-driven|kaiming-uniform|xavier-uniform|orthonormal|zeros|ones";

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    int grid_size = 0;
    double epsilon_init = 0.0;
};

void report_runs(const SweepSummary& summary) {
    for (const ArmSummary& arm : summary.arms) {
        for (const RunMetrics& run : arm.runs) {
            std::cout << arm.arm << " seed " << run.seed;
            if (!run.valid) {
                std::cout << ": FAILED (" << run.error << ")\n";
                continue;
            }
            if (!run.evals.empty())
                std::cout << ": final return " << format_double(run.evals.back().mean_return);
            std::cout << ", oracle labels " << run.oracle_label_count << ", "
                      << format_double(run.wall_seconds) << " s\n";
        }
        if (arm.has_final)
            std::cout << arm.arm << ": mean " << format_double(arm.final_mean) << " +- "
                      << format_double(arm.final_std) << " across seeds\n";
    }
}

int finish_sweep(const ExperimentConfig& config, const SweepSummary& summary) {
    const std::string out_dir = resolve_out_dir(config);
    export_artifacts(config, summary, out_dir);
    report_runs(summary);
    std::cout << "artifacts written to " << out_dir << "\n";
    for (const ArmSummary& arm : summary.arms)
        if (!arm.complete) {
            std::cerr << "arm " << arm.arm << " is incomplete\n";
            return 2;
        }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gridworld lab for reward-model initialization in preference-based RL"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string init_name;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> arm_names;

    CLI::App* run_cmd = app.add_subcommand("run", "single run; exports its artifacts");
    run_cmd->add_option("--config", flags.config_path, "JSON config file");
    CLI::Option* seed_opt = run_cmd->add_option("--seed", seed, "root seed (default 0)");
    CLI::Option* init_opt =
        run_cmd->add_option("--init", init_name, std::string("init scheme: ") + kSchemeChoices);
    CLI::Option* run_grid_opt = run_cmd->add_option("--grid-size", flags.grid_size, "grid side length");
    CLI::Option* run_eps_opt =
        run_cmd->add_option("--epsilon-init", flags.epsilon_init, "data-driven fit target");
    CLI::Option* run_out_opt = run_cmd->add_option("--out-dir", flags.out_dir, "output directory");

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "multi-seed sweep over init schemes");
    sweep_cmd->add_option("--config", flags.config_path, "JSON config file");
    CLI::Option* seeds_opt =
        sweep_cmd->add_option("--seeds", seeds, "seeds, comma separated")->delimiter(',');
    CLI::Option* arms_opt =
        sweep_cmd->add_option("--arms", arm_names, std::string("schemes, comma separated: ") + kSchemeChoices)
            ->delimiter(',');
    CLI::Option* sweep_out_opt = sweep_cmd->add_option("--out-dir", flags.out_dir, "output directory");

    CLI::App* heatmap_cmd = app.add_subcommand("heatmap", "render a reward-net checkpoint");
    std::string checkpoint_path, heatmap_out;
    heatmap_cmd->add_option("--checkpoint", checkpoint_path, "reward-net checkpoint file")
        ->required();
    CLI::Option* hm_grid_opt =
        heatmap_cmd->add_option("--grid-size", flags.grid_size, "grid side length (inferred if omitted)");
    heatmap_cmd->add_option("--out", heatmap_out, "output path prefix (.csv/.pgm appended)")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run_cmd->parsed() || sweep_cmd->parsed()) {
            ExperimentConfig config = default_config();
            if (!flags.config_path.empty()) apply_config_file(config, flags.config_path);
            if (run_grid_opt->count()) config.loop.grid_size = flags.grid_size;
            if (run_eps_opt->count()) config.loop.epsilon_init = flags.epsilon_init;
            if (run_out_opt->count() || sweep_out_opt->count()) config.out_dir = flags.out_dir;

            if (run_cmd->parsed()) {
                if (init_opt->count()) {
                    config.arms = {parse_init_scheme(init_name)};
                } else {
                    config.arms = {config.arms.front()};
                }
                config.seeds = {seed_opt->count() ? seed : config.seeds.front()};
            } else {
                if (seeds_opt->count()) config.seeds = seeds;
                if (arms_opt->count()) {
                    config.arms.clear();
                    for (const std::string& name : arm_names)
                        config.arms.push_back(parse_init_scheme(name));
                }
            }
            config.validate();
            const SweepSummary summary = run_sweep(config);
            return finish_sweep(config, summary);
        }

        if (heatmap_cmd->parsed()) {
            const RewardNet model = load_reward_net(checkpoint_path);
            const int feature_dim = model.members.front().input_dim();
            const int n_from_ckpt = static_cast<int>(std::lround(
                std::sqrt(static_cast<double>(feature_dim - kNumActions))));
            if (n_from_ckpt * n_from_ckpt + kNumActions != feature_dim)
                throw ConfigError("checkpoint input dimension is not n*n+4");
            int n = n_from_ckpt;
            if (hm_grid_opt->count()) {
                if (flags.grid_size != n_from_ckpt)
                    throw ConfigError("--grid-size disagrees with the checkpoint dimensions");
                n = flags.grid_size;
            }
            const GridEnv env(n);
            const Matrix heat = reward_heatmap(model, env);
            write_heatmap_csv(heat, heatmap_out + ".csv");
            write_heatmap_pgm(heat, heatmap_out + ".pgm");
            std::cout << "wrote " << heatmap_out << ".csv and " << heatmap_out << ".pgm\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
