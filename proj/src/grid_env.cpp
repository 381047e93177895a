#include "preflab/grid_env.hpp"

#include <cmath>

namespace preflab {

GridEnv::GridEnv(int n, int max_steps) : n_(n), max_steps_(max_steps) {
    if (n < 2) throw std::invalid_argument("grid size must be at least 2");
    if (max_steps_ == 0) max_steps_ = 4 * n;
    if (max_steps_ < 2 * (n - 1))
        throw std::invalid_argument("max_steps too small to reach the goal");
}

StepResult GridEnv::step(GridPos s, Action a) const {
    if (!in_bounds(s)) throw std::invalid_argument("state out of bounds");
    GridPos next = s;
    switch (a) {
        case Action::Up: next.row -= 1; break;
        case Action::Down: next.row += 1; break;
        case Action::Left: next.col -= 1; break;
        case Action::Right: next.col += 1; break;
    }
    if (!in_bounds(next)) next = s;  // boundary clamp
    return {next, next == goal()};
}

double GridEnv::oracle_reward(GridPos s) const {
    if (!in_bounds(s)) throw std::invalid_argument("state out of bounds");
    const double dr = s.row - (n_ - 1);
    const double dc = s.col - (n_ - 1);
    return -std::sqrt(dr * dr + dc * dc);
}

double GridEnv::oracle_return(const Segment& segment) const {
    double total = 0.0;
    for (const StateAction& sa : segment.steps)
        total += oracle_reward(step(sa.state, sa.action).next);
    return total;
}

PrefLabel GridEnv::oracle_label(const Segment& s0, const Segment& s1) const {
    if (s0.length() != s1.length())
        throw std::invalid_argument("preference query with unequal segment lengths");
    const double g0 = oracle_return(s0);
    const double g1 = oracle_return(s1);
    if (g0 > g1) return PrefLabel::Prefer0;
    if (g1 > g0) return PrefLabel::Prefer1;
    return PrefLabel::Tie;
}

std::vector<double> GridEnv::encode(GridPos s, Action a) const {
    if (!in_bounds(s)) throw std::invalid_argument("state out of bounds");
    std::vector<double> features(feature_dim(), 0.0);
    features[state_index(s)] = 1.0;
    features[n_ * n_ + static_cast<int>(a)] = 1.0;
    return features;
}

bool GridEnv::transition_consistent(const Segment& segment) const {
    for (const StateAction& sa : segment.steps)
        if (!in_bounds(sa.state)) return false;
    for (std::size_t i = 0; i + 1 < segment.steps.size(); ++i) {
        const StateAction& sa = segment.steps[i];
        if (!(step(sa.state, sa.action).next == segment.steps[i + 1].state)) return false;
    }
    return true;
}

}  // namespace preflab
