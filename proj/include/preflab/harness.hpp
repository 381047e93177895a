#ifndef PREFLAB_HARNESS_HPP
#define PREFLAB_HARNESS_HPP

#include <string>
#include <vector>

#include "preflab/pbrl_loop.hpp"

namespace preflab {

// A sweep: one LoopConfig shared by every (arm, seed) pair.
struct ExperimentConfig {
    LoopConfig loop;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::vector<InitScheme> arms = {
        InitScheme::DataDriven,     InitScheme::KaimingUniform,
        InitScheme::XavierUniform,  InitScheme::Orthonormal,
        InitScheme::Zeros,          InitScheme::Ones,
    };
    std::string out_dir;  // empty -> $PREF_INIT_LAB_OUT -> "out"
    int workers = 0;      // 0 -> hardware concurrency

    bool operator==(const ExperimentConfig&) const = default;

    // Throws ConfigError naming the offending key.
    void validate() const;
};

ExperimentConfig default_config();

// JSON config file with flat keys mirroring the flag names; unknown keys
// are rejected. Values from the file overwrite defaults already present in
// `config`; CLI flags are applied on top by the caller.
void apply_config_file(ExperimentConfig& config, const std::string& path);
ExperimentConfig parse_config_file(const std::string& path);

std::string write_config(const ExperimentConfig& config);

std::string resolve_out_dir(const ExperimentConfig& config);

struct ArmSummary {
    std::string arm;
    bool complete = false;
    std::vector<EvalPoint> mean_curve;   // mean return across seeds per eval point
    std::vector<double> std_curve;       // sample std across seeds per eval point
    double final_mean = 0.0;             // stats of the last eval point
    double final_std = 0.0;
    bool has_final = false;
    long oracle_labels = 0;              // summed across seeds
    std::vector<RunMetrics> runs;        // one per seed, seed order
};

struct SweepSummary {
    std::vector<ArmSummary> arms;
};

// Runs every (arm, seed) pair, dispatching to a worker pool of
// config.workers threads. Individual run failures mark the arm incomplete
// without aborting the others. Results are deterministic for a fixed
// config regardless of worker count.
SweepSummary run_sweep(const ExperimentConfig& config);

// Writes curve_<arm>.csv, per-run run_<arm>_seed<k>.csv, initial/final
// heatmaps as CSV and 8-bit PGM, final reward-model checkpoints, and
// summary.json under out_dir.
void export_artifacts(const ExperimentConfig& config, const SweepSummary& summary,
                      const std::string& out_dir);

// Shortest round-trip decimal form of a 64-bit float.
std::string format_double(double value);

void write_heatmap_csv(const Matrix& heatmap, const std::string& path);

// P5 PGM mapping the reward codomain [-1, 1] linearly onto [0, 255] so
// heatmaps share one gray scale across arms.
void write_heatmap_pgm(const Matrix& heatmap, const std::string& path);

}  // namespace preflab

#endif
