#ifndef PREFLAB_PBRL_LOOP_HPP
#define PREFLAB_PBRL_LOOP_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "preflab/dqn_agent.hpp"
#include "preflab/grid_env.hpp"
#include "preflab/nn_core.hpp"
#include "preflab/reward_model.hpp"

namespace preflab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything one run needs. Ties are always discarded and resampled (the
// oracle defines no output for equal returns), bounded by
// max_resample_attempts per query slot.
struct LoopConfig {
    int grid_size = 7;
    int max_steps = 0;               // 0 -> 4n
    int pretrain_episodes = 15;
    long total_env_steps = -1;       // -1 -> 50000 below grid size 10, else 120000
    int session_interval_steps = 2000;
    int queries_per_session = 20;
    int segment_length = 10;
    double epsilon_init = 0.4;
    InitScheme init_scheme = InitScheme::DataDriven;
    InitScheme data_driven_base = InitScheme::XavierUniform;
    int max_resample_attempts = 10;
    int ensemble_size = 1;

    // reward-model training session
    int reward_epochs = 50;
    int reward_batch_size = 32;
    double reward_lr = 1e-3;
    RewardFitConfig fit;

    // agent
    double gamma = 0.99;
    double q_lr = 1e-3;
    int batch_size = 64;
    long replay_capacity = 50000;
    int target_sync_interval = 100;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double eps_decay_fraction = 0.3;

    // evaluation
    int eval_interval_steps = 1000;
    int eval_episodes = 5;

    long trajectory_capacity = 4096;

    long resolved_total_steps() const {
        if (total_env_steps >= 0) return total_env_steps;
        return grid_size >= 10 ? 120000 : 50000;
    }
    int resolved_max_steps() const { return max_steps > 0 ? max_steps : 4 * grid_size; }

    // Throws ConfigError naming the offending key.
    void validate() const;
};

struct EvalPoint {
    long env_step = 0;
    double mean_return = 0.0;
};

struct RunMetrics {
    std::string arm;
    std::uint64_t seed = 0;
    std::vector<EvalPoint> evals;
    Matrix initial_heatmap;
    Matrix final_heatmap;
    long oracle_label_count = 0;   // binary feedbacks actually produced
    long tie_discard_count = 0;    // tie queries discarded before resampling
    long eval_episode_count = 0;
    int init_fit_invocations = 0;
    // distinct pretraining (state, action) pairs and the model's predictions
    // on them right after initialization
    std::vector<StateAction> visited_pairs;
    std::vector<double> initial_visited_predictions;
    RewardNet final_model;
    double wall_seconds = 0.0;
    bool valid = false;
    std::string error;
};

// Uniform-random-policy episodes; stores full trajectories, no learning.
TrajectoryBuffer pretrain_collect(const GridEnv& env, int episodes,
                                  std::mt19937_64& rng, long capacity = 4096);

// Uniformly samples a trajectory index and a window offset for each member
// of each pair, independently. Throws when no stored trajectory is long
// enough for the requested window.
std::vector<std::pair<Segment, Segment>> sample_query_pairs(const TrajectoryBuffer& buffer,
                                                            int count, int length,
                                                            std::mt19937_64& rng);

struct LabelStats {
    long labels = 0;
    long ties = 0;
};

// Oracle-labels each pair; tie queries are discarded and replacement pairs
// drawn (up to max_resample_attempts per slot). The result holds only
// y in {0, 1} records, at most one per input pair.
std::vector<PreferenceRecord> label_queries(const GridEnv& env,
                                            const std::vector<std::pair<Segment, Segment>>& pairs,
                                            const TrajectoryBuffer& buffer, int length,
                                            int max_resample_attempts,
                                            std::mt19937_64& rng, LabelStats* stats = nullptr);

// One full experiment: seed-derived init, pretraining collection, the
// one-shot data-driven fit for that scheme, then the PEBBLE-style main loop
// of acting, query sessions, reward updates, relabeling, and periodic greedy
// evaluation. Runtime failures return partial metrics flagged invalid.
RunMetrics run_experiment(const LoopConfig& config, std::uint64_t seed);

}  // namespace preflab

#endif
