#include "preflab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "json.hpp"

namespace preflab {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void ExperimentConfig::validate() const {
    loop.validate();
    if (seeds.empty()) throw ConfigError("seeds must be nonempty");
    std::set<std::uint64_t> unique_seeds(seeds.begin(), seeds.end());
    if (unique_seeds.size() != seeds.size()) throw ConfigError("seeds must be distinct");
    if (arms.empty()) throw ConfigError("arms must be nonempty");
    if (workers < 0) throw ConfigError("workers must be >= 0");
}

ExperimentConfig default_config() { return {}; }

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "grid_size",        "max_steps",          "pretrain_episodes",
        "total_env_steps",  "session_interval_steps", "queries_per_session",
        "segment_length",   "epsilon_init",       "data_driven_base",
        "max_resample_attempts", "ensemble_size", "reward_epochs",
        "reward_batch_size", "reward_lr",         "init_fit_tol",
        "init_fit_max_epochs", "init_fit_lr",     "init_fit_dedup",
        "gamma",            "q_lr",               "batch_size",
        "replay_capacity",  "target_sync_interval", "eps_start",
        "eps_end",          "eps_decay_fraction", "eval_interval_steps",
        "eval_episodes",    "trajectory_capacity", "seeds",
        "arms",             "out_dir",            "workers",
    };
    return keys;
}

long get_integer(const ordered_json& j, const std::string& key) {
    if (!j.is_number_integer())
        throw ConfigError("config key '" + key + "' must be an integer");
    return j.get<long>();
}

double get_number(const ordered_json& j, const std::string& key) {
    if (!j.is_number())
        throw ConfigError("config key '" + key + "' must be a number");
    return j.get<double>();
}

bool get_boolean(const ordered_json& j, const std::string& key) {
    if (!j.is_boolean())
        throw ConfigError("config key '" + key + "' must be a boolean");
    return j.get<bool>();
}

std::string get_string(const ordered_json& j, const std::string& key) {
    if (!j.is_string())
        throw ConfigError("config key '" + key + "' must be a string");
    return j.get<std::string>();
}

InitScheme get_scheme(const ordered_json& j, const std::string& key) {
    const std::string name = get_string(j, key);
    try {
        return parse_init_scheme(name);
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key '" + key + "' has unknown init scheme '" + name + "'");
    }
}

}  // namespace

void apply_config_file(ExperimentConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("malformed config file " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");

    for (const auto& [key, value] : doc.items()) {
        if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
        LoopConfig& loop = config.loop;
        if (key == "grid_size") loop.grid_size = static_cast<int>(get_integer(value, key));
        else if (key == "max_steps") loop.max_steps = static_cast<int>(get_integer(value, key));
        else if (key == "pretrain_episodes") loop.pretrain_episodes = static_cast<int>(get_integer(value, key));
        else if (key == "total_env_steps") loop.total_env_steps = get_integer(value, key);
        else if (key == "session_interval_steps") loop.session_interval_steps = static_cast<int>(get_integer(value, key));
        else if (key == "queries_per_session") loop.queries_per_session = static_cast<int>(get_integer(value, key));
        else if (key == "segment_length") loop.segment_length = static_cast<int>(get_integer(value, key));
        else if (key == "epsilon_init") loop.epsilon_init = get_number(value, key);
        else if (key == "data_driven_base") loop.data_driven_base = get_scheme(value, key);
        else if (key == "max_resample_attempts") loop.max_resample_attempts = static_cast<int>(get_integer(value, key));
        else if (key == "ensemble_size") loop.ensemble_size = static_cast<int>(get_integer(value, key));
        else if (key == "reward_epochs") loop.reward_epochs = static_cast<int>(get_integer(value, key));
        else if (key == "reward_batch_size") loop.reward_batch_size = static_cast<int>(get_integer(value, key));
        else if (key == "reward_lr") loop.reward_lr = get_number(value, key);
        else if (key == "init_fit_tol") loop.fit.tol = get_number(value, key);
        else if (key == "init_fit_max_epochs") loop.fit.max_epochs = static_cast<int>(get_integer(value, key));
        else if (key == "init_fit_lr") loop.fit.lr = get_number(value, key);
        else if (key == "init_fit_dedup") loop.fit.dedup = get_boolean(value, key);
        else if (key == "gamma") loop.gamma = get_number(value, key);
        else if (key == "q_lr") loop.q_lr = get_number(value, key);
        else if (key == "batch_size") loop.batch_size = static_cast<int>(get_integer(value, key));
        else if (key == "replay_capacity") loop.replay_capacity = get_integer(value, key);
        else if (key == "target_sync_interval") loop.target_sync_interval = static_cast<int>(get_integer(value, key));
        else if (key == "eps_start") loop.eps_start = get_number(value, key);
        else if (key == "eps_end") loop.eps_end = get_number(value, key);
        else if (key == "eps_decay_fraction") loop.eps_decay_fraction = get_number(value, key);
        else if (key == "eval_interval_steps") loop.eval_interval_steps = static_cast<int>(get_integer(value, key));
        else if (key == "eval_episodes") loop.eval_episodes = static_cast<int>(get_integer(value, key));
        else if (key == "trajectory_capacity") loop.trajectory_capacity = get_integer(value, key);
        else if (key == "seeds") {
            if (!value.is_array() || value.empty())
                throw ConfigError("config key 'seeds' must be a nonempty array of integers");
            config.seeds.clear();
            for (const auto& entry : value)
                config.seeds.push_back(static_cast<std::uint64_t>(get_integer(entry, key)));
        } else if (key == "arms") {
            if (!value.is_array() || value.empty())
                throw ConfigError("config key 'arms' must be a nonempty array of scheme names");
            config.arms.clear();
            for (const auto& entry : value) config.arms.push_back(get_scheme(entry, key));
        } else if (key == "out_dir") {
            config.out_dir = get_string(value, key);
        } else if (key == "workers") {
            config.workers = static_cast<int>(get_integer(value, key));
        }
    }
}

ExperimentConfig parse_config_file(const std::string& path) {
    ExperimentConfig config = default_config();
    apply_config_file(config, path);
    config.validate();
    return config;
}

std::string write_config(const ExperimentConfig& config) {
    const LoopConfig& loop = config.loop;
    ordered_json doc;
    doc["grid_size"] = loop.grid_size;
    doc["max_steps"] = loop.max_steps;
    doc["pretrain_episodes"] = loop.pretrain_episodes;
    doc["total_env_steps"] = loop.total_env_steps;
    doc["session_interval_steps"] = loop.session_interval_steps;
    doc["queries_per_session"] = loop.queries_per_session;
    doc["segment_length"] = loop.segment_length;
    doc["epsilon_init"] = loop.epsilon_init;
    doc["data_driven_base"] = to_string(loop.data_driven_base);
    doc["max_resample_attempts"] = loop.max_resample_attempts;
    doc["ensemble_size"] = loop.ensemble_size;
    doc["reward_epochs"] = loop.reward_epochs;
    doc["reward_batch_size"] = loop.reward_batch_size;
    doc["reward_lr"] = loop.reward_lr;
    doc["init_fit_tol"] = loop.fit.tol;
    doc["init_fit_max_epochs"] = loop.fit.max_epochs;
    doc["init_fit_lr"] = loop.fit.lr;
    doc["init_fit_dedup"] = loop.fit.dedup;
    doc["gamma"] = loop.gamma;
    doc["q_lr"] = loop.q_lr;
    doc["batch_size"] = loop.batch_size;
    doc["replay_capacity"] = loop.replay_capacity;
    doc["target_sync_interval"] = loop.target_sync_interval;
    doc["eps_start"] = loop.eps_start;
    doc["eps_end"] = loop.eps_end;
    doc["eps_decay_fraction"] = loop.eps_decay_fraction;
    doc["eval_interval_steps"] = loop.eval_interval_steps;
    doc["eval_episodes"] = loop.eval_episodes;
    doc["trajectory_capacity"] = loop.trajectory_capacity;
    doc["seeds"] = config.seeds;
    ordered_json arm_names = ordered_json::array();
    for (InitScheme arm : config.arms) arm_names.push_back(to_string(arm));
    doc["arms"] = arm_names;
    doc["out_dir"] = config.out_dir;
    doc["workers"] = config.workers;
    return doc.dump(2) + "\n";
}

std::string resolve_out_dir(const ExperimentConfig& config) {
    if (!config.out_dir.empty()) return config.out_dir;
    if (const char* env = std::getenv("PREF_INIT_LAB_OUT"); env && *env) return env;
    return "out";
}

SweepSummary run_sweep(const ExperimentConfig& config) {
    config.validate();
    const std::size_t num_arms = config.arms.size();
    const std::size_t num_seeds = config.seeds.size();
    std::vector<RunMetrics> results(num_arms * num_seeds);

    struct Job {
        std::size_t arm_idx;
        std::size_t seed_idx;
    };
    std::vector<Job> jobs;
    jobs.reserve(results.size());
    for (std::size_t a = 0; a < num_arms; ++a)
        for (std::size_t s = 0; s < num_seeds; ++s) jobs.push_back({a, s});

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t pool =
        std::min<std::size_t>(jobs.size(), config.workers > 0 ? config.workers : hw);

    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= jobs.size()) return;
            const Job job = jobs[i];
            LoopConfig run_config = config.loop;
            run_config.init_scheme = config.arms[job.arm_idx];
            RunMetrics& slot = results[job.arm_idx * num_seeds + job.seed_idx];
            try {
                slot = run_experiment(run_config, config.seeds[job.seed_idx]);
            } catch (const std::exception& e) {
                slot.arm = to_string(run_config.init_scheme);
                slot.seed = config.seeds[job.seed_idx];
                slot.valid = false;
                slot.error = e.what();
            }
        }
    };
    if (pool <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < pool; ++i) threads.emplace_back(worker);
        for (std::thread& t : threads) t.join();
    }

    SweepSummary summary;
    for (std::size_t a = 0; a < num_arms; ++a) {
        ArmSummary arm;
        arm.arm = to_string(config.arms[a]);
        arm.complete = true;
        for (std::size_t s = 0; s < num_seeds; ++s) {
            RunMetrics& run = results[a * num_seeds + s];
            if (!run.valid) arm.complete = false;
            arm.oracle_labels += run.oracle_label_count;
            arm.runs.push_back(std::move(run));
        }
        if (arm.complete && !arm.runs.front().evals.empty()) {
            const std::size_t points = arm.runs.front().evals.size();
            for (const RunMetrics& run : arm.runs)
                if (run.evals.size() != points) arm.complete = false;
        }
        if (arm.complete) {
            const std::size_t points = arm.runs.front().evals.size();
            for (std::size_t p = 0; p < points; ++p) {
                double mean = 0.0;
                for (const RunMetrics& run : arm.runs) mean += run.evals[p].mean_return;
                mean /= static_cast<double>(num_seeds);
                double var = 0.0;
                for (const RunMetrics& run : arm.runs) {
                    const double d = run.evals[p].mean_return - mean;
                    var += d * d;
                }
                const double stddev =
                    num_seeds > 1 ? std::sqrt(var / static_cast<double>(num_seeds - 1)) : 0.0;
                arm.mean_curve.push_back({arm.runs.front().evals[p].env_step, mean});
                arm.std_curve.push_back(stddev);
            }
            if (points > 0) {
                arm.final_mean = arm.mean_curve.back().mean_return;
                arm.final_std = arm.std_curve.back();
                arm.has_final = true;
            }
        }
        summary.arms.push_back(std::move(arm));
    }
    return summary;
}

std::string format_double(double value) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

void write_heatmap_csv(const Matrix& heatmap, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (int r = 0; r < heatmap.rows; ++r) {
        for (int c = 0; c < heatmap.cols; ++c) {
            if (c) out << ',';
            out << format_double(heatmap(r, c));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing: " + path);
}

void write_heatmap_pgm(const Matrix& heatmap, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P5\n" << heatmap.cols << ' ' << heatmap.rows << "\n255\n";
    for (int r = 0; r < heatmap.rows; ++r) {
        for (int c = 0; c < heatmap.cols; ++c) {
            const int px = static_cast<int>(std::floor((heatmap(r, c) + 1.0) * 0.5 * 255.0));
            out.put(static_cast<char>(std::clamp(px, 0, 255)));
        }
    }
    if (!out) throw std::runtime_error("failed writing: " + path);
}

namespace {

void write_curve_csv(const ArmSummary& arm, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "env_step,mean_return,std_return\n";
    for (std::size_t p = 0; p < arm.mean_curve.size(); ++p)
        out << arm.mean_curve[p].env_step << ',' << format_double(arm.mean_curve[p].mean_return)
            << ',' << format_double(arm.std_curve[p]) << '\n';
    if (!out) throw std::runtime_error("failed writing: " + path);
}

void write_run_csv(const RunMetrics& run, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "env_step,return\n";
    for (const EvalPoint& point : run.evals)
        out << point.env_step << ',' << format_double(point.mean_return) << '\n';
    if (!out) throw std::runtime_error("failed writing: " + path);
}

}  // namespace

void export_artifacts(const ExperimentConfig& config, const SweepSummary& summary,
                      const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory: " + out_dir);

    ordered_json arms_json;
    for (const ArmSummary& arm : summary.arms) {
        if (arm.complete) write_curve_csv(arm, out_dir + "/curve_" + arm.arm + ".csv");
        ordered_json labels_per_seed = ordered_json::array();
        ordered_json seeds_json = ordered_json::array();
        for (const RunMetrics& run : arm.runs) {
            seeds_json.push_back(run.seed);
            labels_per_seed.push_back(run.oracle_label_count);
            if (!run.valid) continue;
            const std::string tag = arm.arm + "_seed" + std::to_string(run.seed);
            write_run_csv(run, out_dir + "/run_" + tag + ".csv");
            write_heatmap_csv(run.initial_heatmap, out_dir + "/heatmap_" + tag + "_initial.csv");
            write_heatmap_csv(run.final_heatmap, out_dir + "/heatmap_" + tag + "_final.csv");
            write_heatmap_pgm(run.initial_heatmap, out_dir + "/heatmap_" + tag + "_initial.pgm");
            write_heatmap_pgm(run.final_heatmap, out_dir + "/heatmap_" + tag + "_final.pgm");
            if (!run.final_model.members.empty())
                save_reward_net(run.final_model, out_dir + "/checkpoint_" + tag + ".txt");
        }
        ordered_json entry;
        entry["complete"] = arm.complete;
        if (arm.has_final) {
            entry["final_mean"] = arm.final_mean;
            entry["final_std"] = arm.final_std;
        } else {
            entry["final_mean"] = nullptr;
            entry["final_std"] = nullptr;
        }
        entry["oracle_labels"] = arm.oracle_labels;
        entry["oracle_labels_per_seed"] = labels_per_seed;
        entry["seeds"] = seeds_json;
        arms_json[arm.arm] = entry;
    }

    ordered_json doc;
    doc["grid_size"] = config.loop.grid_size;
    doc["total_env_steps"] = config.loop.resolved_total_steps();
    doc["epsilon_init"] = config.loop.epsilon_init;
    doc["arms"] = arms_json;

    std::ofstream out(out_dir + "/summary.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + out_dir + "/summary.json");
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing: " + out_dir + "/summary.json");
}

}  // namespace preflab
