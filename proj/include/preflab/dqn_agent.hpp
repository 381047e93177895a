#ifndef PREFLAB_DQN_AGENT_HPP
#define PREFLAB_DQN_AGENT_HPP

#include <random>
#include <vector>

#include "preflab/grid_env.hpp"
#include "preflab/nn_core.hpp"
#include "preflab/reward_model.hpp"

namespace preflab {

// Q network: state one-hot in, one value per action out.
using QNet = DenseNet;

inline constexpr int kQNetHidden = 64;

QNet make_qnet(const GridEnv& env, InitScheme scheme, std::mt19937_64& rng,
               int hidden = kQNetHidden);

// Replay entry; r_hat is the learned reward at storage time and is refreshed
// by relabeling. The environment's oracle never flows through here.
struct ReplayTransition {
    GridPos s;
    Action a = Action::Up;
    GridPos s_next;
    bool terminal = false;
    double r_hat = 0.0;
};

class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(const ReplayTransition& transition);
    std::size_t size() const { return storage_.size(); }
    std::vector<ReplayTransition> sample(std::size_t batch, std::mt19937_64& rng) const;
    std::vector<ReplayTransition>& transitions() { return storage_; }
    const std::vector<ReplayTransition>& transitions() const { return storage_; }

  private:
    std::size_t capacity_;
    std::size_t next_ = 0;  // ring cursor once full
    std::vector<ReplayTransition> storage_;
};

struct EpsilonSchedule {
    double start = 1.0;
    double end = 0.05;
    long decay_steps = 1;

    // Linear interpolation, clamped at end.
    double value(long step) const;
};

std::vector<double> q_values(const QNet& q, const GridEnv& env, GridPos s);

// Epsilon-greedy; greedy ties break toward the lowest action index.
Action select_action(const QNet& q, const GridEnv& env, GridPos s, double eps_greedy,
                     std::mt19937_64& rng);

// One Adam step on mean squared TD error with targets
// y = r_hat + gamma * (1 - terminal) * max_a target(s_next, a).
// Returns the pre-step loss.
double td_update(QNet& q, const QNet& target, const GridEnv& env,
                 const std::vector<ReplayTransition>& batch, double gamma,
                 AdamState& adam);

// Recomputes every stored r_hat from the current reward model; every other
// field and the ordering stay untouched.
void relabel_buffer(std::vector<ReplayTransition>& transitions, const RewardNet& model,
                    const GridEnv& env);
void relabel_buffer(ReplayBuffer& replay, const RewardNet& model, const GridEnv& env);

void sync_target(const QNet& q, QNet& target);

// Mean ground-truth oracle return of greedy episodes from the start state.
// The learned reward plays no part here.
double evaluate_policy(const QNet& q, const GridEnv& env, int episodes);

}  // namespace preflab

#endif
