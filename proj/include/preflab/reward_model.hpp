#ifndef PREFLAB_REWARD_MODEL_HPP
#define PREFLAB_REWARD_MODEL_HPP

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "preflab/grid_env.hpp"
#include "preflab/nn_core.hpp"

namespace preflab {

// Learned reward over (state, action): dense net on the one-hot encoding,
// hyperbolic-tangent output, so predictions live strictly in (-1, 1).
// Holds one net by default; with ensemble_size > 1 the prediction is the
// member mean and members train independently on the same batches.
struct RewardNet {
    std::vector<DenseNet> members;
    InitScheme base_init = InitScheme::XavierUniform;
};

inline constexpr int kRewardHidden = 64;

RewardNet make_reward_net(const GridEnv& env, InitScheme base_scheme,
                          std::mt19937_64& rng, int ensemble_size = 1,
                          int hidden = kRewardHidden);

// Preference tuple; y = 0 means the first segment is preferred. Ties are
// never stored.
struct PreferenceRecord {
    Segment seg0;
    Segment seg1;
    int y = 0;
};

// Full-episode trajectories collected during pretraining and training.
// Bounded FIFO.
class TrajectoryBuffer {
  public:
    explicit TrajectoryBuffer(std::size_t capacity = 4096);

    void push(Trajectory trajectory);
    std::size_t size() const { return trajectories_.size(); }
    bool empty() const { return trajectories_.empty(); }
    const std::vector<Trajectory>& trajectories() const { return trajectories_; }

  private:
    std::size_t capacity_;
    std::vector<Trajectory> trajectories_;
};

double predict_reward(const RewardNet& model, const GridEnv& env, GridPos s, Action a);

// Sum of predicted rewards over the segment's (state, action) pairs.
double segment_return(const RewardNet& model, const GridEnv& env, const Segment& segment);

// Bradley-Terry probability of seg0 being preferred: softmax over the two
// predicted returns, computed in overflow-free form. Strictly in (0, 1).
double preference_prob(const RewardNet& model, const GridEnv& env,
                       const Segment& seg0, const Segment& seg1);

// Mean binary cross entropy of the model's preference probabilities against
// the stored labels. Throws on an empty batch.
double ce_loss(const RewardNet& model, const GridEnv& env,
               const std::vector<PreferenceRecord>& batch);

// Mean per-member cross entropy plus its parameter gradients (one NetGrads
// per ensemble member, zeroed and filled). Members are scored on their own
// returns, which coincides with ce_loss for a single-member model.
double ce_loss_gradients(const RewardNet& model, const GridEnv& env,
                         const std::vector<PreferenceRecord>& batch,
                         std::vector<NetGrads>& grads);

// Mean squared deviation of the predictions on `pairs` from the constant
// target, plus parameter gradients per member.
double init_fit_loss_gradients(const RewardNet& model, const GridEnv& env,
                               const std::vector<StateAction>& pairs, double target,
                               std::vector<NetGrads>& grads);

struct RewardFitConfig {
    double tol = 1e-4;        // stop once mean squared deviation falls below
    int max_epochs = 2000;
    double lr = 1e-3;
    bool dedup = true;        // regress over distinct visited pairs
};

struct InitFitResult {
    int epochs = 0;
    double final_loss = 0.0;
};

// Data-driven initialization: regresses the predicted reward of every
// (state, action) pair occurring in the buffer to the constant eps_init by
// full-batch Adam. Run once per experiment, before any preference learning.
// Throws if eps_init lies outside the open reward bound (-1, 1).
InitFitResult pretrain_init_fit(RewardNet& model, const GridEnv& env,
                                const TrajectoryBuffer& buffer, double eps_init,
                                const RewardFitConfig& cfg = {});

// Mini-batch Adam on the cross-entropy loss; returns the per-epoch mean
// training loss. epochs == 0 leaves the model untouched.
std::vector<double> update_on_preferences(RewardNet& model, const GridEnv& env,
                                          const std::vector<PreferenceRecord>& dataset,
                                          int epochs, int batch_size,
                                          std::mt19937_64& rng, double lr = 1e-3);

// Entry (r, c) = max over the four actions of the predicted reward at that
// cell.
Matrix reward_heatmap(const RewardNet& model, const GridEnv& env);

// Distinct (state, action) pairs in buffer order of first occurrence.
std::vector<StateAction> distinct_visited_pairs(const GridEnv& env,
                                                const TrajectoryBuffer& buffer);

void save_reward_net(const RewardNet& model, const std::string& path);
RewardNet load_reward_net(const std::string& path);

}  // namespace preflab

#endif
