#ifndef PREFLAB_GRID_ENV_HPP
#define PREFLAB_GRID_ENV_HPP

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace preflab {

struct GridPos {
    int row = 0;
    int col = 0;
    bool operator==(const GridPos&) const = default;
};

// Fixed integer encoding, stable across runs.
enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3 };

inline constexpr int kNumActions = 4;

struct StateAction {
    GridPos state;
    Action action = Action::Up;
    bool operator==(const StateAction&) const = default;
};

// A fixed-length window of a trajectory; also used to hold full episodes.
struct Segment {
    std::vector<StateAction> steps;

    std::size_t length() const { return steps.size(); }
    bool empty() const { return steps.empty(); }
};

using Trajectory = Segment;

struct StepResult {
    GridPos next;
    bool terminal = false;
};

enum class PrefLabel : int { Prefer0 = 0, Prefer1 = 1, Tie = 2 };

// Reward-free n x n gridworld. Start is the top-left corner, goal the
// bottom-right one. Rows grow downward. All member functions are pure;
// episode bookkeeping (step counters) belongs to the caller.
class GridEnv {
  public:
    // max_steps == 0 picks the default cap of 4n.
    explicit GridEnv(int n, int max_steps = 0);

    int size() const { return n_; }
    int max_steps() const { return max_steps_; }
    GridPos start() const { return {0, 0}; }
    GridPos goal() const { return {n_ - 1, n_ - 1}; }

    bool in_bounds(GridPos s) const {
        return s.row >= 0 && s.row < n_ && s.col >= 0 && s.col < n_;
    }

    GridPos reset() const { return start(); }

    // Moves one cell in direction a; moves off the boundary leave the agent
    // in place. Terminal iff the successor is the goal. No reward.
    StepResult step(GridPos s, Action a) const;

    // Ground-truth oracle reward: negative euclidean distance to the goal.
    double oracle_reward(GridPos s) const;

    // Sum of oracle_reward over the successor state of every step.
    double oracle_return(const Segment& segment) const;

    // Binary preference per the oracle; Tie when returns are exactly equal.
    // Throws std::invalid_argument on unequal segment lengths.
    PrefLabel oracle_label(const Segment& s0, const Segment& s1) const;

    // One-hot state block (n^2, index row*n+col) followed by a one-hot
    // action block (4). Exactly two entries are 1.
    std::vector<double> encode(GridPos s, Action a) const;

    int state_index(GridPos s) const { return s.row * n_ + s.col; }
    int feature_dim() const { return n_ * n_ + kNumActions; }

    bool transition_consistent(const Segment& segment) const;

  private:
    int n_;
    int max_steps_;
};

}  // namespace preflab

#endif
