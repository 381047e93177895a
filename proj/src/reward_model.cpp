#include "preflab/reward_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace preflab {

namespace {

std::array<int, 2> sparse_features(const GridEnv& env, GridPos s, Action a) {
    if (!env.in_bounds(s)) throw std::invalid_argument("state out of bounds");
    return {env.state_index(s), env.size() * env.size() + static_cast<int>(a)};
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// -log(sigmoid(x)) without overflow.
double softplus_neg(double x) {
    if (x >= 0.0) return std::log1p(std::exp(-x));
    return -x + std::log1p(std::exp(x));
}

double member_prediction(const DenseNet& net, const GridEnv& env, GridPos s, Action a) {
    const auto active = sparse_features(env, s, a);
    return forward_sparse(net, active)[0];
}

double member_return(const DenseNet& net, const GridEnv& env, const Segment& segment) {
    double total = 0.0;
    for (const StateAction& sa : segment.steps)
        total += member_prediction(net, env, sa.state, sa.action);
    return total;
}

}  // namespace

RewardNet make_reward_net(const GridEnv& env, InitScheme base_scheme,
                          std::mt19937_64& rng, int ensemble_size, int hidden) {
    if (ensemble_size < 1) throw std::invalid_argument("ensemble_size must be >= 1");
    const std::vector<int> dims = {env.feature_dim(), hidden, hidden, 1};
    RewardNet model;
    model.base_init = base_scheme;
    for (int i = 0; i < ensemble_size; ++i)
        model.members.push_back(
            init_weights(base_scheme, dims, OutputActivation::Tanh, rng));
    return model;
}

TrajectoryBuffer::TrajectoryBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("trajectory capacity must be positive");
}

void TrajectoryBuffer::push(Trajectory trajectory) {
    if (trajectory.empty()) throw std::invalid_argument("cannot store an empty trajectory");
    if (trajectories_.size() == capacity_)
        trajectories_.erase(trajectories_.begin());
    trajectories_.push_back(std::move(trajectory));
}

double predict_reward(const RewardNet& model, const GridEnv& env, GridPos s, Action a) {
    double sum = 0.0;
    for (const DenseNet& net : model.members) sum += member_prediction(net, env, s, a);
    return sum / static_cast<double>(model.members.size());
}

double segment_return(const RewardNet& model, const GridEnv& env, const Segment& segment) {
    double total = 0.0;
    for (const StateAction& sa : segment.steps)
        total += predict_reward(model, env, sa.state, sa.action);
    return total;
}

double preference_prob(const RewardNet& model, const GridEnv& env,
                       const Segment& seg0, const Segment& seg1) {
    if (seg0.length() != seg1.length())
        throw std::invalid_argument("preference query with unequal segment lengths");
    const double g0 = segment_return(model, env, seg0);
    const double g1 = segment_return(model, env, seg1);
    return stable_sigmoid(g0 - g1);
}

double ce_loss(const RewardNet& model, const GridEnv& env,
               const std::vector<PreferenceRecord>& batch) {
    if (batch.empty()) throw std::invalid_argument("ce_loss on an empty batch");
    double total = 0.0;
    for (const PreferenceRecord& rec : batch) {
        const double g0 = segment_return(model, env, rec.seg0);
        const double g1 = segment_return(model, env, rec.seg1);
        const double margin = (rec.y == 0) ? g0 - g1 : g1 - g0;
        total += softplus_neg(margin);
    }
    return total / static_cast<double>(batch.size());
}

std::vector<StateAction> distinct_visited_pairs(const GridEnv& env,
                                                const TrajectoryBuffer& buffer) {
    const int n = env.size();
    std::vector<char> seen(static_cast<std::size_t>(n) * n * kNumActions, 0);
    std::vector<StateAction> pairs;
    for (const Trajectory& trajectory : buffer.trajectories()) {
        for (const StateAction& sa : trajectory.steps) {
            const std::size_t key = static_cast<std::size_t>(env.state_index(sa.state)) *
                                        kNumActions +
                                    static_cast<int>(sa.action);
            if (!seen[key]) {
                seen[key] = 1;
                pairs.push_back(sa);
            }
        }
    }
    return pairs;
}

namespace {

void ensure_grad_slots(const RewardNet& model, std::vector<NetGrads>& grads) {
    if (grads.size() != model.members.size()) {
        grads.clear();
        for (const DenseNet& net : model.members) grads.push_back(make_zero_grads(net));
    } else {
        for (NetGrads& g : grads) zero_grads(g);
    }
}

double fit_loss_grads_features(const RewardNet& model,
                               const std::vector<std::array<int, 2>>& features,
                               double target, std::vector<NetGrads>& grads) {
    ensure_grad_slots(model, grads);
    const double inv_count = 1.0 / static_cast<double>(features.size());
    ForwardCache cache;
    double total = 0.0;
    for (std::size_t m = 0; m < model.members.size(); ++m) {
        const DenseNet& net = model.members[m];
        double loss = 0.0;
        for (const auto& active : features) {
            const double pred = forward_sparse(net, active, &cache)[0];
            const double diff = pred - target;
            loss += diff * diff;
            const double grad_y = 2.0 * diff * inv_count;
            backward(net, cache, std::span<const double>(&grad_y, 1), grads[m]);
        }
        total += loss * inv_count;
    }
    return total / static_cast<double>(model.members.size());
}

// Mean per-member CE over the indexed records plus gradients.
double ce_grads_indexed(const RewardNet& model, const GridEnv& env,
                        const std::vector<PreferenceRecord>& dataset,
                        std::span<const std::size_t> indices,
                        std::vector<NetGrads>& grads) {
    ensure_grad_slots(model, grads);
    const double inv_batch = 1.0 / static_cast<double>(indices.size());
    double loss_sum = 0.0;
    std::vector<ForwardCache> caches0, caches1;
    for (std::size_t m = 0; m < model.members.size(); ++m) {
        const DenseNet& net = model.members[m];
        double member_loss = 0.0;
        for (std::size_t idx : indices) {
            const PreferenceRecord& rec = dataset[idx];
            caches0.resize(rec.seg0.length());
            caches1.resize(rec.seg1.length());
            double g0 = 0.0, g1 = 0.0;
            for (std::size_t i = 0; i < rec.seg0.length(); ++i) {
                const auto& sa = rec.seg0.steps[i];
                g0 += forward_sparse(net, sparse_features(env, sa.state, sa.action),
                                     &caches0[i])[0];
            }
            for (std::size_t i = 0; i < rec.seg1.length(); ++i) {
                const auto& sa = rec.seg1.steps[i];
                g1 += forward_sparse(net, sparse_features(env, sa.state, sa.action),
                                     &caches1[i])[0];
            }
            const double margin = (rec.y == 0) ? g0 - g1 : g1 - g0;
            member_loss += softplus_neg(margin);
            // d(-log sigmoid(margin))/d margin = sigmoid(margin) - 1
            const double d_margin = (stable_sigmoid(margin) - 1.0) * inv_batch;
            const double d_g0 = (rec.y == 0) ? d_margin : -d_margin;
            const double d_g1 = -d_g0;
            for (auto& c : caches0)
                backward(net, c, std::span<const double>(&d_g0, 1), grads[m]);
            for (auto& c : caches1)
                backward(net, c, std::span<const double>(&d_g1, 1), grads[m]);
        }
        loss_sum += member_loss * inv_batch;
    }
    return loss_sum / static_cast<double>(model.members.size());
}

}  // namespace

double ce_loss_gradients(const RewardNet& model, const GridEnv& env,
                         const std::vector<PreferenceRecord>& batch,
                         std::vector<NetGrads>& grads) {
    if (batch.empty()) throw std::invalid_argument("ce_loss_gradients on an empty batch");
    std::vector<std::size_t> indices(batch.size());
    std::iota(indices.begin(), indices.end(), 0);
    return ce_grads_indexed(model, env, batch, indices, grads);
}

double init_fit_loss_gradients(const RewardNet& model, const GridEnv& env,
                               const std::vector<StateAction>& pairs, double target,
                               std::vector<NetGrads>& grads) {
    if (pairs.empty()) throw std::invalid_argument("init_fit_loss_gradients on empty pairs");
    std::vector<std::array<int, 2>> features;
    features.reserve(pairs.size());
    for (const StateAction& sa : pairs)
        features.push_back(sparse_features(env, sa.state, sa.action));
    return fit_loss_grads_features(model, features, target, grads);
}

InitFitResult pretrain_init_fit(RewardNet& model, const GridEnv& env,
                                const TrajectoryBuffer& buffer, double eps_init,
                                const RewardFitConfig& cfg) {
    if (buffer.empty()) throw std::invalid_argument("pretraining buffer is empty");
    if (!(eps_init > -1.0 && eps_init < 1.0))
        throw std::invalid_argument(
            "eps_init outside the reward bound (-1, 1): unreachable target");

    std::vector<StateAction> pairs;
    if (cfg.dedup) {
        pairs = distinct_visited_pairs(env, buffer);
    } else {
        for (const Trajectory& trajectory : buffer.trajectories())
            for (const StateAction& sa : trajectory.steps) pairs.push_back(sa);
    }
    std::vector<std::array<int, 2>> features;
    features.reserve(pairs.size());
    for (const StateAction& sa : pairs)
        features.push_back(sparse_features(env, sa.state, sa.action));

    std::vector<AdamState> adam;
    for (DenseNet& net : model.members) adam.push_back(make_adam(net, {.lr = cfg.lr}));
    std::vector<NetGrads> grads;

    InitFitResult result;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double loss = fit_loss_grads_features(model, features, eps_init, grads);
        result.final_loss = loss;
        if (loss < cfg.tol) break;  // converged; result.epochs counts steps taken
        for (std::size_t m = 0; m < model.members.size(); ++m)
            adam_step(model.members[m], grads[m], adam[m]);
        result.epochs = epoch + 1;
    }
    if (result.epochs == cfg.max_epochs)
        result.final_loss = fit_loss_grads_features(model, features, eps_init, grads);
    return result;
}

std::vector<double> update_on_preferences(RewardNet& model, const GridEnv& env,
                                          const std::vector<PreferenceRecord>& dataset,
                                          int epochs, int batch_size,
                                          std::mt19937_64& rng, double lr) {
    if (dataset.empty()) throw std::invalid_argument("preference dataset is empty");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<double> trace;
    if (epochs <= 0) return trace;

    std::vector<AdamState> adam;
    for (DenseNet& net : model.members) adam.push_back(make_adam(net, {.lr = lr}));
    std::vector<NetGrads> grads;

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            epoch_loss += ce_grads_indexed(
                model, env, dataset,
                std::span<const std::size_t>(order.data() + begin, end - begin), grads);
            for (std::size_t m = 0; m < model.members.size(); ++m)
                adam_step(model.members[m], grads[m], adam[m]);
            ++batches;
        }
        trace.push_back(epoch_loss / static_cast<double>(batches));
    }
    return trace;
}

Matrix reward_heatmap(const RewardNet& model, const GridEnv& env) {
    const int n = env.size();
    Matrix heat(n, n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            double best = -1.0;
            for (int a = 0; a < kNumActions; ++a)
                best = std::max(best,
                                predict_reward(model, env, {r, c}, static_cast<Action>(a)));
            heat(r, c) = best;
        }
    }
    return heat;
}

void save_reward_net(const RewardNet& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out << "preflab-reward-net\n";
    out << "base " << to_string(model.base_init) << '\n';
    out << "members " << model.members.size() << '\n';
    for (const DenseNet& net : model.members) save_checkpoint(net, out);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

RewardNet load_reward_net(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string token;
    in >> token;
    RewardNet model;
    if (token == "preflab-reward-net") {
        in >> token;
        if (token != "base") throw std::runtime_error("checkpoint: expected base tag");
        in >> token;
        model.base_init = parse_init_scheme(token);
        in >> token;
        if (token != "members") throw std::runtime_error("checkpoint: expected members tag");
        std::size_t count = 0;
        in >> count;
        if (!in || count == 0) throw std::runtime_error("checkpoint: bad member count");
        for (std::size_t i = 0; i < count; ++i) model.members.push_back(load_checkpoint(in));
    } else if (token == "preflab-net") {
        // plain single-net checkpoint: rewind and wrap it
        in.seekg(0);
        model.members.push_back(load_checkpoint(in));
    } else {
        throw std::runtime_error("not a preflab checkpoint: " + path);
    }
    for (const DenseNet& net : model.members) {
        if (net.output_dim() != 1 || net.output_activation != OutputActivation::Tanh)
            throw std::runtime_error("checkpoint is not a reward net");
    }
    return model;
}

}  // namespace preflab
