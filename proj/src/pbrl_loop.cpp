#include "preflab/pbrl_loop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace preflab {

void LoopConfig::validate() const {
    if (grid_size < 2) throw ConfigError("grid_size must be at least 2");
    if (max_steps != 0 && max_steps < 2 * (grid_size - 1))
        throw ConfigError("max_steps too small for the goal to be reachable");
    if (pretrain_episodes < 1) throw ConfigError("pretrain_episodes must be >= 1");
    if (total_env_steps < -1) throw ConfigError("total_env_steps must be >= 0 (or -1 for auto)");
    if (session_interval_steps < 1) throw ConfigError("session_interval_steps must be >= 1");
    if (queries_per_session < 1) throw ConfigError("queries_per_session must be >= 1");
    if (segment_length < 1) throw ConfigError("segment_length must be >= 1");
    if (segment_length > resolved_max_steps())
        throw ConfigError("segment_length must not exceed max_steps");
    if (!(epsilon_init > -1.0 && epsilon_init < 1.0))
        throw ConfigError("epsilon_init must lie inside the reward bound (-1, 1)");
    if (max_resample_attempts < 0) throw ConfigError("max_resample_attempts must be >= 0");
    if (ensemble_size < 1) throw ConfigError("ensemble_size must be >= 1");
    if (reward_epochs < 0) throw ConfigError("reward_epochs must be >= 0");
    if (reward_batch_size < 1) throw ConfigError("reward_batch_size must be >= 1");
    if (reward_lr <= 0.0) throw ConfigError("reward_lr must be positive");
    if (fit.tol <= 0.0) throw ConfigError("init_fit_tol must be positive");
    if (fit.max_epochs < 1) throw ConfigError("init_fit_max_epochs must be >= 1");
    if (fit.lr <= 0.0) throw ConfigError("init_fit_lr must be positive");
    if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("gamma must lie in [0, 1)");
    if (q_lr <= 0.0) throw ConfigError("q_lr must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (replay_capacity < batch_size)
        throw ConfigError("replay_capacity must be at least batch_size");
    if (target_sync_interval < 1) throw ConfigError("target_sync_interval must be >= 1");
    if (eps_start < 0.0 || eps_start > 1.0) throw ConfigError("eps_start must lie in [0, 1]");
    if (eps_end < 0.0 || eps_end > eps_start)
        throw ConfigError("eps_end must lie in [0, eps_start]");
    if (eps_decay_fraction < 0.0 || eps_decay_fraction > 1.0)
        throw ConfigError("eps_decay_fraction must lie in [0, 1]");
    if (eval_interval_steps < 1) throw ConfigError("eval_interval_steps must be >= 1");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (trajectory_capacity < 1) throw ConfigError("trajectory_capacity must be >= 1");
}

TrajectoryBuffer pretrain_collect(const GridEnv& env, int episodes,
                                  std::mt19937_64& rng, long capacity) {
    if (episodes < 1) throw std::invalid_argument("pretrain episodes must be >= 1");
    TrajectoryBuffer buffer(static_cast<std::size_t>(capacity));
    std::uniform_int_distribution<int> pick(0, kNumActions - 1);
    for (int ep = 0; ep < episodes; ++ep) {
        Trajectory trajectory;
        GridPos s = env.reset();
        for (int t = 0; t < env.max_steps(); ++t) {
            const Action a = static_cast<Action>(pick(rng));
            trajectory.steps.push_back({s, a});
            const StepResult res = env.step(s, a);
            s = res.next;
            if (res.terminal) break;
        }
        buffer.push(std::move(trajectory));
    }
    return buffer;
}

namespace {

Segment window(const Trajectory& trajectory, std::size_t offset, int length) {
    Segment segment;
    segment.steps.assign(trajectory.steps.begin() + offset,
                         trajectory.steps.begin() + offset + length);
    return segment;
}

Segment sample_segment(const TrajectoryBuffer& buffer,
                       const std::vector<std::size_t>& eligible, int length,
                       std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick_traj(0, eligible.size() - 1);
    const Trajectory& trajectory = buffer.trajectories()[eligible[pick_traj(rng)]];
    std::uniform_int_distribution<std::size_t> pick_offset(
        0, trajectory.steps.size() - static_cast<std::size_t>(length));
    return window(trajectory, pick_offset(rng), length);
}

std::vector<std::size_t> eligible_trajectories(const TrajectoryBuffer& buffer, int length) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < buffer.trajectories().size(); ++i)
        if (buffer.trajectories()[i].steps.size() >= static_cast<std::size_t>(length))
            eligible.push_back(i);
    return eligible;
}

}  // namespace

std::vector<std::pair<Segment, Segment>> sample_query_pairs(const TrajectoryBuffer& buffer,
                                                            int count, int length,
                                                            std::mt19937_64& rng) {
    if (count < 0) throw std::invalid_argument("query count must be >= 0");
    if (length < 1) throw std::invalid_argument("segment length must be >= 1");
    std::vector<std::pair<Segment, Segment>> pairs;
    if (count == 0) return pairs;
    const std::vector<std::size_t> eligible = eligible_trajectories(buffer, length);
    if (eligible.empty())
        throw std::invalid_argument(
            "no stored trajectory is long enough for the requested window; "
            "use a smaller segment_length");
    pairs.reserve(count);
    for (int i = 0; i < count; ++i) {
        Segment first = sample_segment(buffer, eligible, length, rng);
        Segment second = sample_segment(buffer, eligible, length, rng);
        pairs.emplace_back(std::move(first), std::move(second));
    }
    return pairs;
}

std::vector<PreferenceRecord> label_queries(const GridEnv& env,
                                            const std::vector<std::pair<Segment, Segment>>& pairs,
                                            const TrajectoryBuffer& buffer, int length,
                                            int max_resample_attempts,
                                            std::mt19937_64& rng, LabelStats* stats) {
    std::vector<PreferenceRecord> records;
    records.reserve(pairs.size());
    const std::vector<std::size_t> eligible = eligible_trajectories(buffer, length);
    LabelStats local;
    for (const auto& [first, second] : pairs) {
        Segment seg0 = first;
        Segment seg1 = second;
        bool filled = false;
        for (int attempt = 0; attempt <= max_resample_attempts; ++attempt) {
            const PrefLabel label = env.oracle_label(seg0, seg1);
            if (label != PrefLabel::Tie) {
                records.push_back({std::move(seg0), std::move(seg1),
                                   label == PrefLabel::Prefer0 ? 0 : 1});
                local.labels += 1;
                filled = true;
                break;
            }
            local.ties += 1;
            if (attempt == max_resample_attempts || eligible.empty()) break;
            seg0 = sample_segment(buffer, eligible, length, rng);
            seg1 = sample_segment(buffer, eligible, length, rng);
        }
        (void)filled;  // an under-filled slot is legal; the caller sees it in counts
    }
    if (stats) *stats = local;
    return records;
}

RunMetrics run_experiment(const LoopConfig& config, std::uint64_t seed) {
    config.validate();
    RunMetrics metrics;
    metrics.arm = to_string(config.init_scheme);
    metrics.seed = seed;
    const auto t_start = std::chrono::steady_clock::now();
    try {
        const GridEnv env(config.grid_size, config.max_steps);
        const long total_steps = config.resolved_total_steps();

        // Stream order is fixed: weights, then environment, then queries.
        std::mt19937_64 rng_weights = make_stream_rng(seed, kStreamWeights);
        std::mt19937_64 rng_env = make_stream_rng(seed, kStreamEnvironment);
        std::mt19937_64 rng_query = make_stream_rng(seed, kStreamQueries);

        const InitScheme base = config.init_scheme == InitScheme::DataDriven
                                    ? config.data_driven_base
                                    : config.init_scheme;
        RewardNet model = make_reward_net(env, base, rng_weights, config.ensemble_size);
        QNet q = make_qnet(env, base, rng_weights);
        QNet target = q;

        TrajectoryBuffer buffer =
            pretrain_collect(env, config.pretrain_episodes, rng_env, config.trajectory_capacity);

        if (config.init_scheme == InitScheme::DataDriven) {
            pretrain_init_fit(model, env, buffer, config.epsilon_init, config.fit);
            metrics.init_fit_invocations += 1;
        }

        metrics.visited_pairs = distinct_visited_pairs(env, buffer);
        metrics.initial_visited_predictions.reserve(metrics.visited_pairs.size());
        for (const StateAction& sa : metrics.visited_pairs)
            metrics.initial_visited_predictions.push_back(
                predict_reward(model, env, sa.state, sa.action));
        metrics.initial_heatmap = reward_heatmap(model, env);

        ReplayBuffer replay(static_cast<std::size_t>(config.replay_capacity));
        AdamState q_adam = make_adam(q, {.lr = config.q_lr});
        const EpsilonSchedule schedule{
            config.eps_start, config.eps_end,
            static_cast<long>(config.eps_decay_fraction * static_cast<double>(total_steps))};

        std::vector<PreferenceRecord> dataset;
        GridPos s = env.reset();
        Trajectory episode;
        long updates = 0;
        for (long step = 1; step <= total_steps; ++step) {
            const Action a = select_action(q, env, s, schedule.value(step - 1), rng_env);
            const StepResult res = env.step(s, a);
            replay.push({s, a, res.next, res.terminal,
                         predict_reward(model, env, s, a)});
            episode.steps.push_back({s, a});
            s = res.next;

            if (replay.size() >= static_cast<std::size_t>(config.batch_size)) {
                td_update(q, target, env,
                          replay.sample(static_cast<std::size_t>(config.batch_size), rng_env),
                          config.gamma, q_adam);
                ++updates;
                if (updates % config.target_sync_interval == 0) sync_target(q, target);
            }

            if (res.terminal ||
                episode.steps.size() >= static_cast<std::size_t>(env.max_steps())) {
                buffer.push(std::move(episode));
                episode = Trajectory{};
                s = env.reset();
            }

            if (step % config.session_interval_steps == 0) {
                LabelStats stats;
                const auto pairs = sample_query_pairs(buffer, config.queries_per_session,
                                                      config.segment_length, rng_query);
                auto records =
                    label_queries(env, pairs, buffer, config.segment_length,
                                  config.max_resample_attempts, rng_query, &stats);
                metrics.oracle_label_count += stats.labels;
                metrics.tie_discard_count += stats.ties;
                std::move(records.begin(), records.end(), std::back_inserter(dataset));
                if (!dataset.empty() && config.reward_epochs > 0) {
                    update_on_preferences(model, env, dataset, config.reward_epochs,
                                          config.reward_batch_size, rng_query,
                                          config.reward_lr);
                    relabel_buffer(replay, model, env);
                }
            }

            if (step % config.eval_interval_steps == 0) {
                metrics.evals.push_back(
                    {step, evaluate_policy(q, env, config.eval_episodes)});
                metrics.eval_episode_count += config.eval_episodes;
            }
        }

        metrics.final_heatmap = reward_heatmap(model, env);
        metrics.final_model = std::move(model);
        metrics.valid = true;
    } catch (const std::exception& e) {
        metrics.valid = false;
        metrics.error = e.what();
    }
    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return metrics;
}

}  // namespace preflab
