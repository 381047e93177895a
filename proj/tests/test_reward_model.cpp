#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "preflab/grid_env.hpp"
#include "preflab/pbrl_loop.hpp"
#include "preflab/reward_model.hpp"
#include "test_util.hpp"

using namespace preflab;

namespace {

RewardNet zeros_model(const GridEnv& env) {
    std::mt19937_64 rng(0);
    return make_reward_net(env, InitScheme::Zeros, rng);
}

// Hand-built net: predicts `per_step` at state (0,0) whatever the action,
// and 0 at every other state.
RewardNet spike_model(const GridEnv& env, double per_step) {
    RewardNet model = zeros_model(env);
    DenseNet& net = model.members[0];
    net.weights[0](0, 0) = 1.0;                    // hidden unit 0 fires on state (0,0)
    net.weights[1](0, 0) = 1.0;                    // pass it through the second layer
    net.weights[2](0, 0) = std::atanh(per_step);   // output reads it through tanh
    return model;
}

Segment still_segment(GridPos s, int length) {
    // clamped self-loop at a corner-adjacent cell is only valid at (0,0)
    Segment segment;
    for (int i = 0; i < length; ++i) segment.steps.push_back({s, Action::Up});
    return segment;
}

}  // namespace

TEST_CASE("zeros model predicts exactly zero and heatmap follows") {
    const GridEnv env(7);
    const RewardNet model = zeros_model(env);
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> pick(0, 6);
    for (int trial = 0; trial < 25; ++trial) {
        const GridPos s{pick(rng), pick(rng)};
        const Action a = static_cast<Action>(trial % kNumActions);
        CHECK(predict_reward(model, env, s, a) == 0.0);
    }
    const Matrix heat = reward_heatmap(model, env);
    for (double v : heat.data) CHECK(v == 0.0);
}

TEST_CASE("predictions are bounded and deterministic") {
    const GridEnv env(7);
    for (InitScheme scheme : {InitScheme::KaimingUniform, InitScheme::XavierUniform,
                              InitScheme::Orthonormal}) {
        std::mt19937_64 rng_a(9), rng_b(9);
        const RewardNet a = make_reward_net(env, scheme, rng_a);
        const RewardNet b = make_reward_net(env, scheme, rng_b);
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 7; ++c) {
                const double pa = predict_reward(a, env, {r, c}, Action::Down);
                CHECK(pa > -1.0);
                CHECK(pa < 1.0);
                CHECK(pa == predict_reward(b, env, {r, c}, Action::Down));
            }
    }
}

TEST_CASE("segment return sums per-step predictions") {
    const GridEnv env(7);
    const RewardNet zeros = zeros_model(env);
    std::mt19937_64 rng(4);
    const Segment segment = testutil::random_segment(env, 10, rng);
    CHECK(segment_return(zeros, env, segment) == 0.0);

    const RewardNet spike = spike_model(env, 0.5);
    Segment single;
    single.steps.push_back({{0, 0}, Action::Up});
    CHECK(segment_return(spike, env, single) ==
          doctest::Approx(predict_reward(spike, env, {0, 0}, Action::Up)).epsilon(1e-15));

    // concatenation additivity
    const Segment a = testutil::random_segment(env, 4, rng);
    const Segment b = testutil::random_segment(env, 6, rng);
    Segment joined = a;
    joined.steps.insert(joined.steps.end(), b.steps.begin(), b.steps.end());
    const RewardNet model = [&] {
        std::mt19937_64 wrng(8);
        return make_reward_net(env, InitScheme::XavierUniform, wrng);
    }();
    CHECK(segment_return(model, env, joined) ==
          doctest::Approx(segment_return(model, env, a) + segment_return(model, env, b))
              .epsilon(1e-12));

    // bounded by the segment length
    CHECK(std::fabs(segment_return(model, env, joined)) < 10.0);
}

TEST_CASE("preference probability is the softmax of returns") {
    const GridEnv env(7);
    std::mt19937_64 rng(12);

    const RewardNet model = make_reward_net(env, InitScheme::KaimingUniform, rng);
    const Segment seg = testutil::random_segment(env, 5, rng);
    CHECK(preference_prob(model, env, seg, seg) == doctest::Approx(0.5).epsilon(1e-15));

    // returns (1.0, 0.0) -> 1/(1+e^-1)
    const RewardNet spike = spike_model(env, 0.5);
    const Segment at_origin = still_segment({0, 0}, 2);   // return 2 * 0.5 = 1
    const Segment elsewhere = still_segment({3, 3}, 2);   // return 0 (not consistent, not needed)
    CHECK(segment_return(spike, env, at_origin) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(segment_return(spike, env, elsewhere) == doctest::Approx(0.0));
    CHECK(preference_prob(spike, env, at_origin, elsewhere) ==
          doctest::Approx(0.7310585786300049).epsilon(1e-12));

    CHECK_THROWS_AS(preference_prob(spike, env, at_origin, still_segment({3, 3}, 3)),
                    std::invalid_argument);
}

TEST_CASE("complement identity and monotonicity") {
    const GridEnv env(7);
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const RewardNet model = [&] {
            std::mt19937_64 wrng(trial);
            return make_reward_net(env, InitScheme::XavierUniform, wrng);
        }();
        const Segment a = testutil::random_segment(env, 7, rng);
        const Segment b = testutil::random_segment(env, 7, rng);
        const double p01 = preference_prob(model, env, a, b);
        const double p10 = preference_prob(model, env, b, a);
        CHECK(p01 > 0.0);
        CHECK(p01 < 1.0);
        CHECK(std::fabs(p01 + p10 - 1.0) < 1e-12);
    }

    // raising one segment's return raises its win probability
    const Segment at_origin = still_segment({0, 0}, 3);
    const Segment other = still_segment({4, 4}, 3);
    double prev = 0.0;
    for (double per_step : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        const RewardNet spike = spike_model(env, per_step);
        const double p = preference_prob(spike, env, at_origin, other);
        CHECK(p > prev);
        prev = p;
    }
}

TEST_CASE("shift invariance: a shared suffix does not move the probability") {
    const GridEnv env(7);
    std::mt19937_64 rng(31);
    const RewardNet model = make_reward_net(env, InitScheme::KaimingUniform, rng);
    for (int trial = 0; trial < 50; ++trial) {
        const Segment a = testutil::random_segment(env, 5, rng);
        const Segment b = testutil::random_segment(env, 5, rng);
        const Segment suffix = testutil::random_segment(env, 4, rng);
        Segment a_ext = a, b_ext = b;
        a_ext.steps.insert(a_ext.steps.end(), suffix.steps.begin(), suffix.steps.end());
        b_ext.steps.insert(b_ext.steps.end(), suffix.steps.begin(), suffix.steps.end());
        CHECK(preference_prob(model, env, a_ext, b_ext) ==
              doctest::Approx(preference_prob(model, env, a, b)).epsilon(1e-12));
    }
}

TEST_CASE("cross-entropy loss hits its closed-form anchors") {
    const GridEnv env(7);
    std::mt19937_64 rng(5);
    const RewardNet zeros = zeros_model(env);

    PreferenceRecord rec;
    rec.seg0 = testutil::random_segment(env, 6, rng);
    rec.seg1 = testutil::random_segment(env, 6, rng);
    rec.y = 0;
    // zeros model: P = 0.5 exactly -> loss ln 2
    CHECK(ce_loss(zeros, env, {rec}) == doctest::Approx(0.6931471805599453).epsilon(1e-12));

    // confident correct prediction -> loss near 0
    const RewardNet spike = spike_model(env, 0.95);
    PreferenceRecord confident;
    confident.seg0 = still_segment({0, 0}, 12);  // return ~11.4
    confident.seg1 = still_segment({5, 5}, 12);  // return 0
    confident.y = 0;
    CHECK(ce_loss(spike, env, {confident}) < 1e-4);

    CHECK_THROWS_AS(ce_loss(zeros, env, {}), std::invalid_argument);

    // batch order invariance
    std::vector<PreferenceRecord> batch;
    for (int i = 0; i < 8; ++i) {
        PreferenceRecord r;
        r.seg0 = testutil::random_segment(env, 5, rng);
        r.seg1 = testutil::random_segment(env, 5, rng);
        r.y = i % 2;
        batch.push_back(r);
    }
    const RewardNet model = make_reward_net(env, InitScheme::XavierUniform, rng);
    const double base = ce_loss(model, env, batch);
    std::reverse(batch.begin(), batch.end());
    CHECK(ce_loss(model, env, batch) == doctest::Approx(base).epsilon(1e-12));

    // duplicating every record keeps the mean
    std::vector<PreferenceRecord> doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    CHECK(ce_loss(model, env, doubled) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("ce gradients match central finite differences") {
    const GridEnv env(3);
    std::mt19937_64 rng(123);
    RewardNet model = make_reward_net(env, InitScheme::XavierUniform, rng, 1, 6);

    std::vector<PreferenceRecord> batch;
    for (int i = 0; i < 4; ++i) {
        PreferenceRecord rec;
        rec.seg0 = testutil::random_segment(env, 4, rng);
        rec.seg1 = testutil::random_segment(env, 4, rng);
        rec.y = i % 2;
        batch.push_back(rec);
    }

    std::vector<NetGrads> grads;
    ce_loss_gradients(model, env, batch, grads);

    const double h = 1e-5;
    double max_err = 0.0;
    DenseNet& net = model.members[0];
    auto fd_check = [&](std::span<double> params, std::span<const double> analytic) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + h;
            const double up = ce_loss(model, env, batch);
            params[i] = saved - h;
            const double down = ce_loss(model, env, batch);
            params[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(analytic[i])});
            max_err = std::max(max_err, std::fabs(fd - analytic[i]) / denom);
        }
    };
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        fd_check(net.weights[k].data, grads[0].weights[k].data);
        fd_check(net.biases[k], grads[0].biases[k]);
    }
    CHECK(max_err < 1e-4);
}

TEST_CASE("init-fit gradients match central finite differences") {
    const GridEnv env(3);
    std::mt19937_64 rng(321);
    RewardNet model = make_reward_net(env, InitScheme::KaimingUniform, rng, 1, 6);

    std::vector<StateAction> pairs = {
        {{0, 0}, Action::Down}, {{1, 0}, Action::Right}, {{1, 1}, Action::Up},
        {{0, 1}, Action::Left}, {{2, 2}, Action::Up},
    };
    std::vector<NetGrads> grads;
    init_fit_loss_gradients(model, env, pairs, 0.4, grads);

    auto loss_of = [&] {
        double acc = 0.0;
        for (const StateAction& sa : pairs) {
            const double d = predict_reward(model, env, sa.state, sa.action) - 0.4;
            acc += d * d;
        }
        return acc / static_cast<double>(pairs.size());
    };
    const double h = 1e-5;
    double max_err = 0.0;
    DenseNet& net = model.members[0];
    auto fd_check = [&](std::span<double> params, std::span<const double> analytic) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + h;
            const double up = loss_of();
            params[i] = saved - h;
            const double down = loss_of();
            params[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(analytic[i])});
            max_err = std::max(max_err, std::fabs(fd - analytic[i]) / denom);
        }
    };
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        fd_check(net.weights[k].data, grads[0].weights[k].data);
        fd_check(net.biases[k], grads[0].biases[k]);
    }
    CHECK(max_err < 1e-4);
}

TEST_CASE("pretraining fit drives buffer pairs to the target") {
    const GridEnv env(3);

    // already-converged model: fit is a no-op
    RewardNet zeros = zeros_model(env);
    TrajectoryBuffer tiny(16);
    Trajectory walk;
    walk.steps = {{{0, 0}, Action::Down}, {{1, 0}, Action::Right}, {{1, 1}, Action::Up}};
    tiny.push(walk);
    const std::vector<double> before = zeros.members[0].weights[0].data;
    const InitFitResult noop = pretrain_init_fit(zeros, env, tiny, 0.0);
    CHECK(noop.final_loss == 0.0);
    CHECK(noop.epochs == 0);
    CHECK(zeros.members[0].weights[0].data == before);

    // three-pair toy buffer converges to +-0.01 of the target
    std::mt19937_64 rng(42);
    RewardNet model = make_reward_net(env, InitScheme::XavierUniform, rng, 1, 16);
    const InitFitResult fit = pretrain_init_fit(model, env, tiny, 0.4);
    CHECK(fit.final_loss < 1e-4);
    for (const StateAction& sa : walk.steps)
        CHECK(predict_reward(model, env, sa.state, sa.action) ==
              doctest::Approx(0.4).epsilon(0.025));

    CHECK_THROWS_AS(pretrain_init_fit(model, env, tiny, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(pretrain_init_fit(model, env, TrajectoryBuffer(4), 0.4),
                    std::invalid_argument);
}

TEST_CASE("fit on real pretraining data reaches the paper's uniformity") {
    const GridEnv env(7);
    std::mt19937_64 env_rng = make_stream_rng(0, kStreamEnvironment);
    const TrajectoryBuffer buffer = pretrain_collect(env, 15, env_rng);

    std::mt19937_64 w_rng = make_stream_rng(0, kStreamWeights);
    RewardNet model = make_reward_net(env, InitScheme::XavierUniform, w_rng);
    pretrain_init_fit(model, env, buffer, 0.4);

    const std::vector<StateAction> pairs = distinct_visited_pairs(env, buffer);
    REQUIRE(!pairs.empty());
    int hits = 0;
    for (const StateAction& sa : pairs)
        if (std::fabs(predict_reward(model, env, sa.state, sa.action) - 0.4) <= 0.05) ++hits;
    CHECK(static_cast<double>(hits) >= 0.95 * static_cast<double>(pairs.size()));
}

TEST_CASE("update_on_preferences overfits one record and honors zero epochs") {
    const GridEnv env(7);
    std::mt19937_64 rng(2);
    RewardNet model = make_reward_net(env, InitScheme::XavierUniform, rng);

    PreferenceRecord rec;
    rec.seg0 = still_segment({0, 0}, 5);
    rec.seg1 = testutil::random_segment(env, 5, rng);
    rec.y = 0;
    if (env.oracle_label(rec.seg0, rec.seg1) == PrefLabel::Prefer1) rec.y = 1;

    const std::vector<double> frozen = model.members[0].weights[0].data;
    std::mt19937_64 train_rng(3);
    CHECK(update_on_preferences(model, env, {rec}, 0, 8, train_rng).empty());
    CHECK(model.members[0].weights[0].data == frozen);

    const std::vector<double> trace =
        update_on_preferences(model, env, {rec}, 200, 8, train_rng);
    CHECK(trace.size() == 200);
    const double p_true = rec.y == 0 ? preference_prob(model, env, rec.seg0, rec.seg1)
                                     : preference_prob(model, env, rec.seg1, rec.seg0);
    CHECK(p_true > 0.9);
    CHECK(trace.back() < trace.front());
}

TEST_CASE("training loss falls on oracle-labeled data in most seeded trials") {
    const GridEnv env(7);
    int improved = 0;
    const int trials = 10;
    for (int trial = 0; trial < trials; ++trial) {
        std::mt19937_64 rng(1000 + trial);
        RewardNet model = make_reward_net(env, InitScheme::KaimingUniform, rng);
        std::vector<PreferenceRecord> dataset;
        while (dataset.size() < 30) {
            PreferenceRecord rec;
            rec.seg0 = testutil::random_segment(env, 8, rng);
            rec.seg1 = testutil::random_segment(env, 8, rng);
            const PrefLabel label = env.oracle_label(rec.seg0, rec.seg1);
            if (label == PrefLabel::Tie) continue;
            rec.y = label == PrefLabel::Prefer0 ? 0 : 1;
            dataset.push_back(rec);
        }
        const double before = ce_loss(model, env, dataset);
        update_on_preferences(model, env, dataset, 30, 8, rng);
        if (ce_loss(model, env, dataset) <= before) ++improved;
    }
    CHECK(improved >= 9);  // >= 90% of trials
}

TEST_CASE("heatmap dominates per-action predictions") {
    const GridEnv env(5);
    std::mt19937_64 rng(6);
    const RewardNet model = make_reward_net(env, InitScheme::Orthonormal, rng);
    const Matrix heat = reward_heatmap(model, env);
    REQUIRE(heat.rows == 5);
    REQUIRE(heat.cols == 5);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            for (int a = 0; a < kNumActions; ++a)
                CHECK(heat(r, c) >= predict_reward(model, env, {r, c}, static_cast<Action>(a)));
}

TEST_CASE("trajectory buffer is bounded FIFO") {
    TrajectoryBuffer buffer(3);
    for (int i = 1; i <= 5; ++i) {
        Trajectory t;
        for (int k = 0; k < i; ++k) t.steps.push_back({{0, 0}, Action::Up});
        buffer.push(t);
    }
    REQUIRE(buffer.size() == 3);
    CHECK(buffer.trajectories()[0].length() == 3);  // oldest two evicted
    CHECK(buffer.trajectories()[2].length() == 5);
    CHECK_THROWS_AS(buffer.push(Trajectory{}), std::invalid_argument);
}

TEST_CASE("ensemble predictions average the members") {
    const GridEnv env(5);
    std::mt19937_64 rng(14);
    const RewardNet pair = make_reward_net(env, InitScheme::XavierUniform, rng, 2);
    REQUIRE(pair.members.size() == 2);
    RewardNet solo_a{{pair.members[0]}, pair.base_init};
    RewardNet solo_b{{pair.members[1]}, pair.base_init};
    const double mean = 0.5 * (predict_reward(solo_a, env, {2, 2}, Action::Left) +
                               predict_reward(solo_b, env, {2, 2}, Action::Left));
    CHECK(predict_reward(pair, env, {2, 2}, Action::Left) ==
          doctest::Approx(mean).epsilon(1e-15));
}

TEST_CASE("reward net checkpoints round-trip") {
    const GridEnv env(5);
    std::mt19937_64 rng(15);
    const RewardNet model = make_reward_net(env, InitScheme::KaimingUniform, rng, 2);
    testutil::TempDir dir("preflab_rm_ckpt");
    const std::string path = dir.str() + "/model.txt";
    save_reward_net(model, path);
    const RewardNet loaded = load_reward_net(path);
    REQUIRE(loaded.members.size() == 2);
    CHECK(loaded.base_init == model.base_init);
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t k = 0; k < model.members[m].weights.size(); ++k)
            CHECK(loaded.members[m].weights[k].data == model.members[m].weights[k].data);
}
