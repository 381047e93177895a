#include "preflab/dqn_agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace preflab {

QNet make_qnet(const GridEnv& env, InitScheme scheme, std::mt19937_64& rng, int hidden) {
    const std::vector<int> dims = {env.size() * env.size(), hidden, hidden, kNumActions};
    return init_weights(scheme, dims, OutputActivation::Identity, rng);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("replay capacity must be positive");
    storage_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::push(const ReplayTransition& transition) {
    if (storage_.size() < capacity_) {
        storage_.push_back(transition);
    } else {
        storage_[next_] = transition;
        next_ = (next_ + 1) % capacity_;
    }
}

std::vector<ReplayTransition> ReplayBuffer::sample(std::size_t batch,
                                                   std::mt19937_64& rng) const {
    if (storage_.empty()) throw std::invalid_argument("sampling from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, storage_.size() - 1);
    std::vector<ReplayTransition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(storage_[pick(rng)]);
    return out;
}

double EpsilonSchedule::value(long step) const {
    if (decay_steps <= 0 || step >= decay_steps) return end;
    if (step <= 0) return start;
    const double frac = static_cast<double>(step) / static_cast<double>(decay_steps);
    return start + (end - start) * frac;
}

std::vector<double> q_values(const QNet& q, const GridEnv& env, GridPos s) {
    if (!env.in_bounds(s)) throw std::invalid_argument("state out of bounds");
    const int active = env.state_index(s);
    return forward_sparse(q, std::span<const int>(&active, 1));
}

namespace {

int argmax_lowest(const std::vector<double>& values) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace

Action select_action(const QNet& q, const GridEnv& env, GridPos s, double eps_greedy,
                     std::mt19937_64& rng) {
    if (eps_greedy < 0.0 || eps_greedy > 1.0)
        throw std::invalid_argument("eps_greedy must lie in [0, 1]");
    if (eps_greedy > 0.0) {
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        if (coin(rng) < eps_greedy) {
            std::uniform_int_distribution<int> pick(0, kNumActions - 1);
            return static_cast<Action>(pick(rng));
        }
    }
    return static_cast<Action>(argmax_lowest(q_values(q, env, s)));
}

double td_update(QNet& q, const QNet& target, const GridEnv& env,
                 const std::vector<ReplayTransition>& batch, double gamma,
                 AdamState& adam) {
    if (batch.empty()) throw std::invalid_argument("td_update on an empty batch");
    if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    NetGrads grads = make_zero_grads(q);
    ForwardCache cache;
    std::vector<double> grad_y(kNumActions, 0.0);
    double loss = 0.0;
    for (const ReplayTransition& tr : batch) {
        const int active = env.state_index(tr.s);
        const std::vector<double> qs =
            forward_sparse(q, std::span<const int>(&active, 1), &cache);
        double y = tr.r_hat;
        if (!tr.terminal && gamma > 0.0) {
            const std::vector<double> next = q_values(target, env, tr.s_next);
            y += gamma * *std::max_element(next.begin(), next.end());
        }
        const double diff = qs[static_cast<int>(tr.a)] - y;
        loss += diff * diff;
        std::fill(grad_y.begin(), grad_y.end(), 0.0);
        grad_y[static_cast<int>(tr.a)] = 2.0 * diff * inv_batch;
        backward(q, cache, grad_y, grads);
    }
    adam_step(q, grads, adam);
    return loss * inv_batch;
}

void relabel_buffer(std::vector<ReplayTransition>& transitions, const RewardNet& model,
                    const GridEnv& env) {
    for (ReplayTransition& tr : transitions)
        tr.r_hat = predict_reward(model, env, tr.s, tr.a);
}

void relabel_buffer(ReplayBuffer& replay, const RewardNet& model, const GridEnv& env) {
    relabel_buffer(replay.transitions(), model, env);
}

void sync_target(const QNet& q, QNet& target) {
    if (q.dims != target.dims)
        throw std::invalid_argument("sync_target: shape mismatch");
    target.weights = q.weights;
    target.biases = q.biases;
    target.output_activation = q.output_activation;
}

double evaluate_policy(const QNet& q, const GridEnv& env, int episodes) {
    if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
    double total = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        Trajectory trajectory;
        GridPos s = env.reset();
        for (int t = 0; t < env.max_steps(); ++t) {
            const Action a = static_cast<Action>(argmax_lowest(q_values(q, env, s)));
            trajectory.steps.push_back({s, a});
            const StepResult res = env.step(s, a);
            s = res.next;
            if (res.terminal) break;
        }
        total += env.oracle_return(trajectory);
    }
    return total / static_cast<double>(episodes);
}

}  // namespace preflab
